"""Triple store: load, index, and query a knowledge graph of factual triples."""

from __future__ import annotations

import json
import unicodedata
from typing import IO, Iterable, NamedTuple


class Triple(NamedTuple):
    """A single directed fact. Ids are opaque strings, stored verbatim."""

    head: str
    relation: str
    tail: str

    def render(self) -> str:
        return f"({self.head}, {self.relation}, {self.tail})"


class TSVParseError(ValueError):
    """A malformed line in a triple TSV file."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


def normalize_surface(text: str) -> str:
    """Normalize a surface form: NFC, lowercase, collapse whitespace, trim."""
    return " ".join(unicodedata.normalize("NFC", text).lower().split())


class KGStore:
    """Immutable indexed triple collection.

    Built once from an iterable of triples; afterwards it is read-only and
    safe to share across threads. Traversal is directed: inverse edges are
    not materialized.
    """

    def __init__(self, triples: Iterable[Triple]):
        seen: set[Triple] = set()
        ordered: list[Triple] = []
        for t in triples:
            if t not in seen:
                seen.add(t)
                ordered.append(t)
        self._triples: tuple[Triple, ...] = tuple(ordered)

        out_index: dict[tuple[str, str], list[str]] = {}
        adj_index: dict[str, list[Triple]] = {}
        entities: set[str] = set()
        relations: set[str] = set()
        for t in self._triples:
            out_index.setdefault((t.head, t.relation), []).append(t.tail)
            adj_index.setdefault(t.head, []).append(t)
            entities.add(t.head)
            entities.add(t.tail)
            relations.add(t.relation)
        self._out_index = out_index
        self._adj_index = adj_index
        self._entities = frozenset(entities)
        self._relations = frozenset(relations)

        surface_index: dict[str, set[str]] = {}
        for entity in entities:
            surface_index.setdefault(normalize_surface(entity), set()).add(entity)
        self._surface_index = surface_index

    @property
    def triples(self) -> tuple[Triple, ...]:
        return self._triples

    @property
    def entities(self) -> frozenset[str]:
        return self._entities

    @property
    def relations(self) -> frozenset[str]:
        return self._relations

    def __len__(self) -> int:
        return len(self._triples)

    def __contains__(self, triple: Triple) -> bool:
        return triple in self._adj_index.get(triple.head, ())

    def neighbors(self, entity: str, relation: str | None = None) -> list[Triple]:
        """All outgoing triples from ``entity``, optionally filtered by relation.

        Unknown entities yield an empty list. Order is first-occurrence load
        order, so results are deterministic for a given input file.
        """
        out = self._adj_index.get(entity, [])
        if relation is None:
            return list(out)
        return [t for t in out if t.relation == relation]

    def successors(self, entity: str, relation: str) -> list[str]:
        """Tail entities reachable from ``entity`` via ``relation``."""
        return list(self._out_index.get((entity, relation), []))

    def resolve_entity(self, surface: str) -> set[str]:
        """Entity ids whose normalized form equals the normalized surface."""
        return set(self._surface_index.get(normalize_surface(surface), ()))

    def stats(self) -> dict[str, int]:
        return {
            "entities": len(self._entities),
            "relations": len(self._relations),
            "triples": len(self._triples),
        }

    def stats_json(self) -> str:
        return json.dumps(self.stats(), sort_keys=True)


def _iter_tsv_lines(source: IO[bytes] | IO[str] | bytes | str) -> Iterable[str]:
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        data = source.read()
        text = data.decode("utf-8") if isinstance(data, bytes) else data
    return text.split("\n")


def load_kg(source: IO[bytes] | IO[str] | bytes | str, format: str = "tsv") -> KGStore:
    """Parse a 3-column TSV stream into an indexed store.

    Lines starting with '#' are comments; blank lines are ignored; duplicate
    triples are dropped, keeping first-occurrence order. Raises
    :class:`TSVParseError` (with the 1-based line number) on any line that
    does not have exactly three non-empty tab-separated fields.
    """
    if format != "tsv":
        raise ValueError(f"unsupported KG format: {format!r}")
    triples: list[Triple] = []
    for line_no, raw in enumerate(_iter_tsv_lines(source), start=1):
        line = raw.rstrip("\r")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise TSVParseError(line_no, f"expected 3 tab-separated fields, got {len(fields)}")
        head, relation, tail = (f.strip() for f in fields)
        if not head or not relation or not tail:
            raise TSVParseError(line_no, "empty field after whitespace trimming")
        triples.append(Triple(head, relation, tail))
    return KGStore(triples)


def load_kg_file(path: str) -> KGStore:
    with open(path, "rb") as fh:
        return load_kg(fh)


def neighbors(store: KGStore, entity: str, relation: str | None = None) -> list[Triple]:
    return store.neighbors(entity, relation)


def resolve_entity(store: KGStore, surface: str) -> set[str]:
    return store.resolve_entity(surface)
