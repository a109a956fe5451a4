import math
from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acd.graphs import (
    ClusterSets,
    GeneralSbmConfig,
    LabeledGraph,
    SymmetricSbmConfig,
    canonicalize_labels,
    gen_general_sbm,
    gen_symmetric_log_sbm,
    graph_rng,
    labels_to_sets,
    load_graphs,
    sample_crp,
    sample_sbm_edges,
    save_graphs,
    sets_to_labels,
)


class TestCrp:
    def test_single_point(self, rng):
        assert sample_crp(1, 5.0, rng).tolist() == [1]

    def test_alpha_to_zero_limit(self, rng):
        labels = sample_crp(10, 1e-12, rng)
        assert labels.tolist() == [1] * 10

    def test_labels_canonical(self, rng):
        for _ in range(50):
            labels = sample_crp(20, 2.0, rng)
            assert np.array_equal(labels, canonicalize_labels(labels))

    def test_eppf_small_scale(self, rng):
        """Empirical partition frequencies vs the analytic EPPF at N=4."""
        n, alpha, draws = 4, 1.0, 40_000
        counts = {}
        for _ in range(draws):
            key = tuple(sample_crp(n, alpha, rng))
            counts[key] = counts.get(key, 0) + 1
        denom = math.prod(i + alpha for i in range(n))
        for key, c in counts.items():
            sizes = np.bincount(key)[1:]
            k = len(sizes)
            prob = alpha**k * math.prod(math.factorial(s - 1) for s in sizes) / denom
            se = math.sqrt(prob * (1 - prob) / draws)
            assert abs(c / draws - prob) < 4 * se + 1e-9, key

    def test_exchangeability_by_size_profile(self, rng):
        """Orderings with the same size profile occur equally often."""
        draws = 30_000
        # profile (2,1): partitions {12|3}, {13|2}, {23|1} as canonical labels
        variants = {(1, 1, 2): 0, (1, 2, 1): 0, (1, 2, 2): 0}
        for _ in range(draws):
            key = tuple(sample_crp(3, 1.0, rng))
            if key in variants:
                variants[key] += 1
        freqs = np.array(list(variants.values())) / draws
        assert freqs.std() < 3 * math.sqrt(freqs.mean() * (1 - freqs.mean()) / draws)

    def test_preconditions(self, rng):
        with pytest.raises(ValueError):
            sample_crp(0, 1.0, rng)
        with pytest.raises(ValueError):
            sample_crp(5, 0.0, rng)


class TestLabelSetConversion:
    def test_worked_example(self):
        sets = labels_to_sets([1, 1, 2, 1, 2, 1])
        assert sets.sets == [[0, 1, 3, 5], [2, 4]]

    def test_single_point(self):
        assert labels_to_sets([1]).sets == [[0]]

    def test_non_canonical_is_canonicalized(self):
        sets = labels_to_sets([7, 7, 3, 7])
        assert sets.sets == [[0, 1, 3], [2]]

    @given(st.lists(st.integers(min_value=1, max_value=6), min_size=1, max_size=40))
    @settings(max_examples=300, deadline=None)
    def test_round_trip(self, raw):
        labels = canonicalize_labels(raw)
        assert np.array_equal(sets_to_labels(labels_to_sets(labels)), labels)

    def test_cluster_sets_invariants(self):
        cs = ClusterSets([[2, 4], [0, 1, 3]])
        cs.validate()
        assert cs.sets[0] == [0, 1, 3]  # ordered by minimum element
        with pytest.raises(ValueError, match="overlap"):
            ClusterSets([[0, 1], [1, 2]]).validate()
        with pytest.raises(ValueError, match="cover"):
            ClusterSets([[0, 1], [3]]).validate()


class TestSbmEdges:
    def test_complete_graph(self, rng):
        g = sample_sbm_edges([1, 1, 2, 2], np.ones((2, 2)), rng)
        expected = 1 - np.eye(4)
        assert np.array_equal(g.adjacency, expected)

    def test_identity_block_two_cliques(self, rng):
        g = sample_sbm_edges([1, 1, 2, 2], np.eye(2), rng)
        expected = np.zeros((4, 4))
        expected[0, 1] = expected[1, 0] = 1
        expected[2, 3] = expected[3, 2] = 1
        assert np.array_equal(g.adjacency, expected)

    def test_edge_count_matches_binomial_moments(self):
        n, phi = 200, 0.3
        g = sample_sbm_edges(np.ones(n, dtype=int), [[phi]], graph_rng(7, 0))
        edges = g.adjacency.sum() / 2
        pairs = n * (n - 1) / 2
        mean = phi * pairs
        std = math.sqrt(pairs * phi * (1 - phi))
        assert abs(edges - mean) < 4 * std

    def test_probability_out_of_range(self, rng):
        with pytest.raises(ValueError, match="outside"):
            sample_sbm_edges([1, 2], [[0.5, 1.2], [1.2, 0.5]], rng)


class TestGeneralSbm:
    def test_invariants_over_seeded_draws(self):
        cfg = GeneralSbmConfig(n_min=50, n_max=120)
        for i in range(50):
            g = gen_general_sbm(cfg, graph_rng(3, i))
            g.validate()
            sizes = np.bincount(g.labels)[1:]
            assert sizes.min() >= cfg.min_community_size

    def test_min_size_filter_removes_small_community(self, rng):
        # observed K after filtering never counts communities below 5 nodes
        cfg = GeneralSbmConfig(n_min=50, n_max=60)
        for i in range(30):
            g = gen_general_sbm(cfg, graph_rng(11, i))
            assert np.bincount(g.labels)[1:].min() >= 5

    def test_k_range_matches_paper_band(self):
        ks = []
        for i in range(300):
            g = gen_general_sbm(GeneralSbmConfig(), graph_rng(5, i))
            ks.append(g.n_communities)
        assert min(ks) >= 1
        assert max(ks) <= 16


class TestSymmetricSbm:
    def test_equal_community_sizes(self, rng):
        g = gen_symmetric_log_sbm(SymmetricSbmConfig(n=600, k=4, a=15, b=4), rng)
        sizes = np.bincount(g.labels)[1:]
        assert sizes.tolist() == [150] * 4

    def test_exact_recovery_regime_parameters(self):
        cfg = SymmetricSbmConfig(n=300, k=2, a=15, b=5)
        assert abs(math.sqrt(cfg.a) - math.sqrt(cfg.b)) > math.sqrt(cfg.k)
        cfg.validate()

    def test_within_only_edges_when_b_zero(self, rng):
        g = gen_symmetric_log_sbm(SymmetricSbmConfig(n=60, k=3, a=1.0, b=0.0), rng)
        i, j = np.nonzero(g.adjacency)
        assert np.all(g.labels[i] == g.labels[j])

    def test_equal_probabilities_zero_modularity(self):
        g = gen_symmetric_log_sbm(
            SymmetricSbmConfig(n=200, k=2, a=10, b=10), graph_rng(13, 0)
        )
        q = _modularity(g.adjacency, g.labels)
        assert abs(q) < 0.05

    def test_probability_over_one_reports_value(self):
        cfg = SymmetricSbmConfig(n=50, k=2, a=20, b=1)
        with pytest.raises(ValueError, match="p="):
            cfg.validate()

    def test_k_must_divide_n(self):
        with pytest.raises(ValueError, match="divide"):
            SymmetricSbmConfig(n=10, k=3, a=1, b=1).validate()


def _modularity(adj, labels):
    m = adj.sum() / 2
    deg = adj.sum(axis=1)
    q = 0.0
    for k in np.unique(labels):
        mask = labels == k
        q += adj[np.ix_(mask, mask)].sum() / (2 * m) - (deg[mask].sum() / (2 * m)) ** 2
    return q


class TestSerialization:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        graphs = [gen_general_sbm(GeneralSbmConfig(n_min=50, n_max=70), graph_rng(1, i))
                  for i in range(5)]
        path = tmp_path / "data.jsonl"
        save_graphs(path, graphs)
        for use_cache in (True, False):
            loaded = load_graphs(path, use_cache=use_cache)
            assert len(loaded) == len(graphs)
            for a, b in zip(graphs, loaded):
                assert np.array_equal(a.adjacency, b.adjacency)
                assert np.array_equal(a.labels, b.labels)
                assert a.meta == b.meta

    def test_unlabeled_graph_round_trip(self, tmp_path):
        g = LabeledGraph(np.array([[0, 1], [1, 0]], dtype=np.uint8))
        path = tmp_path / "u.jsonl"
        save_graphs(path, [g])
        loaded = load_graphs(path)[0]
        assert loaded.labels is None
        assert np.array_equal(loaded.adjacency, g.adjacency)


class TestRngStreams:
    def test_streams_reproducible_and_independent(self):
        a1 = graph_rng(42, 7).random(4)
        a2 = graph_rng(42, 7).random(4)
        b = graph_rng(42, 8).random(4)
        assert np.array_equal(a1, a2)
        assert not np.array_equal(a1, b)
