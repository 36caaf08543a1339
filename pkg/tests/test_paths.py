import random

import pytest

from kgreason.kg import KGStore, Triple
from kgreason.paths import (
    PathCycleError,
    PathDistribution,
    PathLinkError,
    ReasoningPath,
    empirical_distribution,
    enumerate_relation_paths,
    enumerate_triple_paths,
    execute_relation_path,
    link_triples,
    parse_reasoning_path_text,
    parse_relation_path_text,
    render_relation_path,
    sample_paths,
    top_k_paths,
    walk_paths,
)

from conftest import oracle_all_chains, oracle_chain_valid, oracle_shortest_chains, random_triples

ALW = "American League West"
SM = "Seattle Mariners"
MM = "Mariner Moose"


class TestEnumerate:
    def test_toy_relation_path(self, toy_store):
        assert enumerate_relation_paths(toy_store, {ALW}, {MM}, 2) == [("teams", "mascot")]

    def test_toy_triple_path(self, toy_store):
        chains = enumerate_triple_paths(toy_store, {ALW}, {MM}, 2)
        assert [c.triples for c in chains] == [
            (Triple(ALW, "teams", SM), Triple(SM, "mascot", MM)),
        ]

    def test_same_source_and_target_is_empty(self, toy_store):
        assert enumerate_relation_paths(toy_store, {ALW}, {ALW}, 3) == []
        assert enumerate_triple_paths(toy_store, {ALW}, {ALW}, 3) == []

    def test_unreachable_target_empty(self, toy_store):
        assert enumerate_triple_paths(toy_store, {MM}, {ALW}, 4) == []

    def test_bad_max_hops(self, toy_store):
        with pytest.raises(ValueError):
            enumerate_triple_paths(toy_store, {ALW}, {MM}, 0)

    def test_matches_dfs_oracle_on_random_kgs(self):
        rng = random.Random(23)
        for trial in range(40):
            triples = random_triples(rng, n_entities=8, n_relations=4, n_triples=rng.randint(5, 30))
            store = KGStore(triples)
            entities = sorted(store.entities)
            sources = set(rng.sample(entities, min(2, len(entities))))
            targets = set(rng.sample(entities, min(2, len(entities))))
            max_hops = rng.randint(1, 4)
            expected = oracle_shortest_chains(triples, sources, targets, max_hops)
            got = enumerate_triple_paths(store, sources, targets, max_hops)
            assert {c.triples for c in got} == expected
            assert set(enumerate_relation_paths(store, sources, targets, max_hops)) == {
                tuple(r for _, r, _ in chain) for chain in expected
            }

    def test_outputs_sorted_and_valid(self):
        rng = random.Random(31)
        triples = random_triples(rng, n_triples=40)
        store = KGStore(triples)
        chains = enumerate_triple_paths(store, {"e0", "e1"}, {"e5", "e6"}, 3)
        assert chains == sorted(chains, key=ReasoningPath.sort_key)
        for chain in chains:
            assert link_triples(chain.triples) == chain


class TestExecute:
    def test_toy_instantiation(self, toy_store):
        result = execute_relation_path(toy_store, {ALW}, ("teams", "mascot"))
        assert len(result) == 1
        assert result[0].target == MM

    def test_unknown_relation_empty(self, toy_store):
        assert execute_relation_path(toy_store, {ALW}, ("no-such-relation",)) == []

    def test_empty_relation_path_rejected(self, toy_store):
        with pytest.raises(ValueError):
            execute_relation_path(toy_store, {ALW}, ())

    def test_matches_enumeration_filter_oracle(self):
        # oracle: brute-enumerate every acyclic chain, filter by relation sequence
        rng = random.Random(37)
        for trial in range(30):
            triples = random_triples(rng, n_entities=7, n_relations=3, n_triples=rng.randint(5, 25))
            store = KGStore(triples)
            sources = {rng.choice(sorted(store.entities))}
            rel_path = tuple(f"r{rng.randint(0, 2)}" for _ in range(rng.randint(1, 3)))
            expected = {
                tuple(c)
                for c in oracle_all_chains(triples, sources, len(rel_path))
                if len(c) == len(rel_path) and tuple(r for _, r, _ in c) == rel_path
            }
            got = execute_relation_path(store, sources, rel_path)
            assert {c.triples for c in got} == expected

    def test_contains_every_enumerated_path(self):
        rng = random.Random(41)
        for trial in range(20):
            triples = random_triples(rng, n_triples=30)
            store = KGStore(triples)
            for chain in enumerate_triple_paths(store, {"e0"}, {"e3", "e4"}, 3):
                executed = execute_relation_path(store, {chain.source}, chain.relations)
                assert chain in executed


class TestLink:
    def test_valid_two_hop(self):
        path = link_triples([Triple(ALW, "teams", SM), Triple(SM, "mascot", MM)])
        assert path.entities == (ALW, SM, MM)

    def test_broken_chain_names_index(self):
        with pytest.raises(PathLinkError) as err:
            link_triples([Triple("A", "teams", "S"), Triple("X", "mascot", "M")])
        assert err.value.index == 1

    def test_cycle_rejected(self):
        with pytest.raises(PathCycleError) as err:
            link_triples([Triple("A", "r", "B"), Triple("B", "r", "A")])
        assert err.value.entity == "A"

    def test_self_loop_rejected(self):
        with pytest.raises(PathCycleError):
            link_triples([Triple("A", "r", "A")])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            link_triples([])

    def test_agrees_with_rule_oracle_on_random_walks(self):
        rng = random.Random(43)
        agreements = 0
        for trial in range(300):
            triples = random_triples(rng, n_triples=rng.randint(10, 30))
            store = KGStore(triples)
            walk = _random_walk(rng, store)
            if walk is None:
                continue
            candidate = _maybe_corrupt(rng, walk)
            expected = oracle_chain_valid(candidate)
            try:
                link_triples(candidate)
                accepted = True
            except (PathLinkError, PathCycleError):
                accepted = False
            assert accepted == expected
            agreements += 1
        assert agreements > 150


def _random_walk(rng, store, max_len=4):
    node = rng.choice(sorted(store.entities))
    visited = {node}
    walk = []
    for _ in range(rng.randint(1, max_len)):
        options = [t for t in store.neighbors(node) if t.tail not in visited]
        if not options:
            break
        step = rng.choice(options)
        walk.append(step)
        visited.add(step.tail)
        node = step.tail
    return walk or None


def _maybe_corrupt(rng, walk):
    walk = list(walk)
    mode = rng.randint(0, 2)
    if mode == 1 and len(walk) >= 2:  # break the chain
        i = rng.randrange(1, len(walk))
        bad_head = walk[i - 1].tail + "-corrupt"
        walk[i] = Triple(bad_head, walk[i].relation, walk[i].tail)
    elif mode == 2:  # introduce a cycle by re-using an earlier entity
        i = rng.randrange(len(walk))
        earlier = walk[0].head
        walk[i] = Triple(walk[i].head, walk[i].relation, earlier)
    return walk


class TestTopK:
    def test_default_top_three_of_five(self):
        paths = ["p1", "p2", "p3", "p4", "p5"]
        scores = [0.1, 0.9, 0.5, 0.7, 0.3]
        assert top_k_paths(paths, scores, 3) == ["p2", "p4", "p3"]

    def test_k_larger_than_input_dedups(self):
        assert top_k_paths(["a", "b", "a"], [1.0, 0.5, 1.0], 10) == ["a", "b"]

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            top_k_paths(["a"], [1.0, 2.0], 1)

    def test_matches_full_sort_oracle(self):
        rng = random.Random(47)
        for trial in range(200):
            n = rng.randint(1, 12)
            paths = [f"p{rng.randint(0, 5)}" for _ in range(n)]
            scores = [round(rng.random(), 2) for _ in range(n)]
            k = rng.randint(1, 6)
            # oracle: keep best score (earliest position) per distinct path, stable sort
            best = {}
            for pos, (p, s) in enumerate(zip(paths, scores)):
                if p not in best or s > best[p][0]:
                    best[p] = (s, pos)
            expected = [p for p, _ in sorted(best.items(), key=lambda kv: (-kv[1][0], kv[1][1]))][:k]
            assert top_k_paths(paths, scores, k) == expected

    def test_subsequence_stable_selection(self):
        rng = random.Random(53)
        for trial in range(100):
            n = rng.randint(2, 10)
            paths = [f"p{i}" for i in range(n)]
            scores = [rng.random() for _ in range(n)]
            k = rng.randint(1, n)
            selected = top_k_paths(paths, scores, k)
            kept = [(p, s) for p, s in zip(paths, scores) if p in selected]
            rerun = top_k_paths([p for p, _ in kept], [s for _, s in kept], k)
            assert rerun == selected


class TestDistribution:
    def test_two_distinct_uniform(self):
        dist = empirical_distribution(["a", "b"])
        assert dist.as_dict() == {"a": 0.5, "b": 0.5}

    def test_duplicates_collapse_before_weighting(self):
        dist = empirical_distribution(["p", "p", "q"])
        assert dist.as_dict() == {"p": 0.5, "q": 0.5}

    def test_single_path(self):
        assert empirical_distribution(["only"]).probability("only") == 1.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            empirical_distribution([])

    def test_invalid_distribution_rejected(self):
        with pytest.raises(ValueError):
            PathDistribution((("a", 0.5), ("b", 0.6)))
        with pytest.raises(ValueError):
            PathDistribution((("a", -0.5), ("b", 1.5)))
        with pytest.raises(ValueError):
            PathDistribution((("a", 0.5), ("a", 0.5)))


class TestSample:
    def test_medical_setting_30_of_100(self):
        paths = [f"p{i}" for i in range(100)]
        assert len(sample_paths(paths, 30, seed=1)) == 30

    def test_n_at_least_len_preserves_order(self):
        paths = ["c", "a", "b"]
        assert sample_paths(paths, 3, seed=9) == paths
        assert sample_paths(paths, 10, seed=9) == paths

    def test_same_seed_same_output(self):
        paths = [f"p{i}" for i in range(50)]
        assert sample_paths(paths, 10, seed=4) == sample_paths(paths, 10, seed=4)

    def test_without_replacement(self):
        picked = sample_paths([f"p{i}" for i in range(40)], 20, seed=2)
        assert len(set(picked)) == 20


class TestWalks:
    def test_toy_walks(self, toy_store):
        walks = walk_paths(toy_store, {ALW}, 2)
        rendered = {w.render() for w in walks}
        assert f"({ALW}, teams, {SM})" in rendered
        assert len(walks) == 2  # the 1-hop edge and the full 2-hop chain

    def test_matches_oracle(self):
        rng = random.Random(59)
        triples = random_triples(rng, n_triples=25)
        store = KGStore(triples)
        expected = {tuple(c) for c in oracle_all_chains(triples, {"e0", "e1"}, 3)}
        assert {w.triples for w in walk_paths(store, {"e0", "e1"}, 3)} == expected


class TestTextFormats:
    def test_relation_round_trip(self):
        rel = ("teams", "mascot")
        assert parse_relation_path_text(render_relation_path(rel)) == rel

    def test_reasoning_round_trip(self, toy_store):
        path = enumerate_triple_paths(toy_store, {ALW}, {MM}, 2)[0]
        assert path.render() == f"({ALW}, teams, {SM}) → ({SM}, mascot, {MM})"
        assert parse_reasoning_path_text(path.render()) == path

    def test_json_shapes(self, toy_store):
        path = enumerate_triple_paths(toy_store, {ALW}, {MM}, 2)[0]
        assert path.to_json() == [[ALW, "teams", SM], [SM, "mascot", MM]]

    def test_parse_rejects_garbage(self):
        with pytest.raises(ValueError):
            parse_reasoning_path_text("not a path")
        with pytest.raises(ValueError):
            parse_relation_path_text("  ")
