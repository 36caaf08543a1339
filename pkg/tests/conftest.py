"""Shared fixtures and independent oracles used across the suite.

The oracles here deliberately avoid the library's indices and search code:
they brute-scan raw triple lists so that equality checks against the
package are meaningful.
"""

from __future__ import annotations

import random

import pytest

from kgreason.kg import KGStore, Triple, load_kg

TOY_TSV = (
    "American League West\tteams\tSeattle Mariners\n"
    "Seattle Mariners\tmascot\tMariner Moose\n"
)


@pytest.fixture
def toy_store() -> KGStore:
    return load_kg(TOY_TSV)


def random_triples(rng: random.Random, n_entities=10, n_relations=4, n_triples=25) -> list[Triple]:
    entities = [f"e{i}" for i in range(n_entities)]
    relations = [f"r{i}" for i in range(n_relations)]
    seen: set[tuple] = set()
    triples = []
    for _ in range(n_triples):
        raw = (rng.choice(entities), rng.choice(relations), rng.choice(entities))
        if raw not in seen:
            seen.add(raw)
            triples.append(Triple(*raw))
    return triples


def oracle_all_chains(triples, sources, max_hops):
    """Every entity-acyclic chain of 1..max_hops hops, by brute list scans."""
    chains = []

    def walk(chain, visited, node):
        if len(chain) == max_hops:
            return
        for h, r, t in triples:
            if h == node and t not in visited:
                chains.append(chain + [(h, r, t)])
                walk(chain + [(h, r, t)], visited | {t}, t)

    for source in sorted(set(sources)):
        walk([], {source}, source)
    return chains


def oracle_shortest_chains(triples, sources, targets, max_hops):
    """DFS-enumerate all chains, keep those ending in a target at minimal length."""
    targets = set(targets)
    ending = [c for c in oracle_all_chains(triples, sources, max_hops) if c[-1][2] in targets]
    if not ending:
        return set()
    shortest = min(len(c) for c in ending)
    return {tuple(c) for c in ending if len(c) == shortest}


def oracle_chain_valid(triples) -> bool:
    """Rule oracle for link_triples: chain-linked and entity-acyclic."""
    if not triples:
        return False
    for i in range(1, len(triples)):
        if triples[i][0] != triples[i - 1][2]:
            return False
    entities = [triples[0][0]] + [t[2] for t in triples]
    return len(set(entities)) == len(entities)
