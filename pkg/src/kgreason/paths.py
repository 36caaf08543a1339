"""Symbolic path engine: enumerate, execute, link, rank, and sample paths over a KG."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

from .kg import KGStore, Triple

RelationPath = tuple[str, ...]

ARROW = " → "  # " → ", the rendering separator used throughout


class PathLinkError(ValueError):
    """A triple sequence whose chain is broken (tail_i != head_{i+1})."""

    def __init__(self, index: int):
        super().__init__(f"broken chain at index {index}: head does not match previous tail")
        self.index = index


class PathCycleError(ValueError):
    """A triple sequence that revisits an entity."""

    def __init__(self, entity: str):
        super().__init__(f"entity {entity!r} appears twice in path")
        self.entity = entity


@dataclass(frozen=True)
class ReasoningPath:
    """A chain of triples where each tail is the next head, acyclic in entities.

    Construct through :func:`link_triples`, which validates the invariants.
    """

    triples: tuple[Triple, ...]

    @property
    def relations(self) -> RelationPath:
        return tuple(t.relation for t in self.triples)

    @property
    def entities(self) -> tuple[str, ...]:
        """Entity sequence along the chain: first head, then every tail."""
        return (self.triples[0].head,) + tuple(t.tail for t in self.triples)

    @property
    def source(self) -> str:
        return self.triples[0].head

    @property
    def target(self) -> str:
        return self.triples[-1].tail

    def __len__(self) -> int:
        return len(self.triples)

    def render(self) -> str:
        return ARROW.join(t.render() for t in self.triples)

    def to_json(self) -> list[list[str]]:
        return [[t.head, t.relation, t.tail] for t in self.triples]

    def sort_key(self) -> tuple[RelationPath, tuple[str, ...]]:
        return (self.relations, self.entities)


def link_triples(triples: Sequence[Triple]) -> ReasoningPath:
    """Validate and assemble a triple sequence into a ReasoningPath.

    Raises :class:`PathLinkError` at the first triple whose head does not
    equal the previous tail, or :class:`PathCycleError` when an entity
    repeats anywhere along the chain.
    """
    if not triples:
        raise ValueError("cannot link an empty triple sequence")
    for i in range(1, len(triples)):
        if triples[i].head != triples[i - 1].tail:
            raise PathLinkError(i)
    seen = {triples[0].head}
    for t in triples:
        if t.tail in seen:
            raise PathCycleError(t.tail)
        seen.add(t.tail)
    return ReasoningPath(tuple(triples))


def render_relation_path(path: Sequence[str]) -> str:
    return ARROW.join(path)


def render_reasoning_path(path: ReasoningPath) -> str:
    return path.render()


def parse_relation_path_text(text: str) -> RelationPath:
    """Inverse of :func:`render_relation_path`; raises ValueError when empty."""
    parts = [p.strip() for p in text.split("→")]
    parts = [p for p in parts if p]
    if not parts:
        raise ValueError(f"no relations found in {text!r}")
    return tuple(parts)


def parse_reasoning_path_text(text: str) -> ReasoningPath:
    """Parse a rendered triple chain back into a validated ReasoningPath.

    Each component must look like "(head, relation, tail)" with exactly two
    comma separators; entity names containing ", " are not recoverable from
    the rendered form.
    """
    triples = []
    for chunk in text.split("→"):
        chunk = chunk.strip()
        if not chunk:
            continue
        if not (chunk.startswith("(") and chunk.endswith(")")):
            raise ValueError(f"triple not parenthesized: {chunk!r}")
        fields = chunk[1:-1].split(", ")
        if len(fields) != 3:
            raise ValueError(f"expected 3 comma-separated fields in {chunk!r}")
        head, relation, tail = (f.strip() for f in fields)
        if not head or not relation or not tail:
            raise ValueError(f"empty field in {chunk!r}")
        triples.append(Triple(head, relation, tail))
    if not triples:
        raise ValueError(f"no triples found in {text!r}")
    return link_triples(triples)


def _chains_of_length(
    store: KGStore, sources: Iterable[str], length: int, targets: set[str] | None
) -> list[ReasoningPath]:
    """All entity-acyclic chains of exactly ``length`` hops from any source.

    When ``targets`` is given, only chains ending in a target are kept.
    """
    found: list[ReasoningPath] = []

    def extend(chain: list[Triple], visited: set[str], node: str) -> None:
        if len(chain) == length:
            if targets is None or node in targets:
                found.append(ReasoningPath(tuple(chain)))
            return
        for t in store.neighbors(node):
            if t.tail in visited:
                continue
            chain.append(t)
            visited.add(t.tail)
            extend(chain, visited, t.tail)
            visited.remove(t.tail)
            chain.pop()

    for src in sorted(set(sources)):
        extend([], {src}, src)
    return sorted(set(found), key=ReasoningPath.sort_key)


def enumerate_triple_paths(
    store: KGStore, sources: Iterable[str], targets: Iterable[str], max_hops: int
) -> list[ReasoningPath]:
    """All shortest entity-acyclic triple chains from sources to targets.

    Searches lengths 1..max_hops and returns every chain at the minimal
    length where any source reaches any target; empty when unreachable.
    Output is sorted lexicographically by relations then entities.
    """
    if max_hops < 1:
        raise ValueError("max_hops must be >= 1")
    target_set = set(targets)
    if not target_set:
        return []
    for length in range(1, max_hops + 1):
        chains = _chains_of_length(store, sources, length, target_set)
        if chains:
            return chains
    return []


def enumerate_relation_paths(
    store: KGStore, sources: Iterable[str], targets: Iterable[str], max_hops: int
) -> list[RelationPath]:
    """Distinct relation sequences realized by the shortest triple chains."""
    chains = enumerate_triple_paths(store, sources, targets, max_hops)
    return sorted({c.relations for c in chains})


def execute_relation_path(
    store: KGStore, sources: Iterable[str], rel_path: Sequence[str]
) -> list[ReasoningPath]:
    """Instantiate a relation sequence over the KG starting from the sources.

    Returns every entity-acyclic chain whose relation sequence equals
    ``rel_path`` exactly, sorted by entity sequence; empty when the path
    cannot be realized.
    """
    if not rel_path:
        raise ValueError("relation path must be non-empty")
    found: list[ReasoningPath] = []

    def extend(chain: list[Triple], visited: set[str], node: str, depth: int) -> None:
        if depth == len(rel_path):
            found.append(ReasoningPath(tuple(chain)))
            return
        for t in store.neighbors(node, rel_path[depth]):
            if t.tail in visited:
                continue
            chain.append(t)
            visited.add(t.tail)
            extend(chain, visited, t.tail, depth + 1)
            visited.remove(t.tail)
            chain.pop()

    for src in sorted(set(sources)):
        extend([], {src}, src, 0)
    return sorted(set(found), key=ReasoningPath.sort_key)


def walk_paths(store: KGStore, sources: Iterable[str], max_hops: int) -> list[ReasoningPath]:
    """All entity-acyclic chains of 1..max_hops hops starting at the sources.

    This is the entity-anchored retrieval used when no answer entities are
    known: it materializes the local subgraph around the question entities
    as concrete paths.
    """
    if max_hops < 1:
        raise ValueError("max_hops must be >= 1")
    out: list[ReasoningPath] = []
    for length in range(1, max_hops + 1):
        out.extend(_chains_of_length(store, sources, length, None))
    return out


def top_k_paths(paths: Sequence[Hashable], scores: Sequence[float], k: int) -> list:
    """The k highest-scoring distinct paths, ties broken by input position.

    Duplicate paths collapse to their best-scoring occurrence (earliest
    position on equal scores). Fewer than k distinct inputs returns them all.
    """
    if len(paths) != len(scores):
        raise ValueError(f"paths and scores differ in length: {len(paths)} != {len(scores)}")
    if k < 1:
        raise ValueError("k must be >= 1")
    best: dict[Hashable, tuple[float, int]] = {}
    for pos, (path, score) in enumerate(zip(paths, scores)):
        if path not in best or score > best[path][0]:
            best[path] = (score, pos)
    ranked = sorted(best.items(), key=lambda item: (-item[1][0], item[1][1]))
    return [path for path, _ in ranked[:k]]


@dataclass(frozen=True)
class PathDistribution:
    """Discrete distribution over paths; probabilities sum to 1."""

    support: tuple[tuple[Hashable, float], ...]

    def __post_init__(self):
        total = 0.0
        seen = set()
        for path, prob in self.support:
            if prob < 0:
                raise ValueError(f"negative probability for {path!r}")
            if path in seen:
                raise ValueError(f"duplicate support entry {path!r}")
            seen.add(path)
            total += prob
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {total}, expected 1")

    def probability(self, path: Hashable) -> float:
        for p, prob in self.support:
            if p == path:
                return prob
        return 0.0

    def as_dict(self) -> dict:
        return dict(self.support)


def empirical_distribution(paths: Sequence[Hashable]) -> PathDistribution:
    """Uniform distribution over the distinct paths in the sample."""
    if not paths:
        raise ValueError("cannot build a distribution from zero paths")
    distinct = list(dict.fromkeys(paths))
    weight = 1.0 / len(distinct)
    return PathDistribution(tuple((p, weight) for p in distinct))


def sample_paths(paths: Sequence, n: int, seed: int) -> list:
    """Sample n paths without replacement, deterministic for a given seed.

    When n >= len(paths) the input comes back unchanged; otherwise the
    sampled subset keeps input order.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if n >= len(paths):
        return list(paths)
    rng = random.Random(seed)
    picked = sorted(rng.sample(range(len(paths)), n))
    return [paths[i] for i in picked]
