import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import subtypecl as scl
from subtypecl.errors import ConfigError, DataError
from subtypecl.fusion import FusedSimilarity, SnfConfig
from subtypecl.subtypes import canonicalize_labels, kmeans


def random_affinity(n, seed):
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.05, 1.0, size=(n, n))
    w = (w + w.T) / 2
    np.fill_diagonal(w, 1.0)
    return w


def planted_affinity(n_per_block, blocks, noise, seed):
    n = n_per_block * blocks
    rng = np.random.default_rng(seed)
    w = np.full((n, n), 0.05)
    for b in range(blocks):
        sl = slice(b * n_per_block, (b + 1) * n_per_block)
        w[sl, sl] = 0.9
    jitter = rng.uniform(0, noise, size=(n, n))
    w = np.abs(w + (jitter + jitter.T) / 2)
    np.fill_diagonal(w, 0.0)
    return (w + w.T) / 2


class TestKnnGraph:
    def test_full_k_keeps_everything(self):
        w = random_affinity(6, 0)
        graph = scl.knn_graph(w, k=5)
        off = ~np.eye(6, dtype=bool)
        assert np.allclose(graph[off], w[off])
        assert np.all(np.diag(graph) == 0)

    def test_block_diagonal_stays_disconnected(self):
        w = np.zeros((6, 6))
        w[:3, :3] = 0.8
        w[3:, 3:] = 0.6
        np.fill_diagonal(w, 1.0)
        graph = scl.knn_graph(w, k=2)
        assert np.all(graph[:3, 3:] == 0)

    def test_matches_sort_and_mask_oracle(self):
        w = random_affinity(8, 1)
        got = scl.knn_graph(w, k=3)
        kept = np.zeros_like(w)
        for i in range(8):
            order = sorted((j for j in range(8) if j != i),
                           key=lambda j: (-w[i, j], j))[:3]
            for j in order:
                kept[i, j] = w[i, j]
        expected = np.maximum(kept, kept.T)
        np.fill_diagonal(expected, 0.0)
        assert np.array_equal(got, expected)

    def test_k_out_of_range(self):
        w = random_affinity(5, 2)
        for bad in (0, 5, 7):
            with pytest.raises(ConfigError):
                scl.knn_graph(w, k=bad)

    @given(st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=15, deadline=None)
    def test_edge_set_invariant_under_monotone_transform(self, seed):
        w = random_affinity(7, seed)
        base = scl.knn_graph(w, k=3) > 0
        transformed = np.exp(2.0 * w)  # strictly monotone on all entries
        np.fill_diagonal(transformed, np.exp(2.0))
        assert np.array_equal(scl.knn_graph(transformed, k=3) > 0, base)


class TestSpectralCluster:
    def test_two_disconnected_components_exact(self):
        w = np.zeros((7, 7))
        w[:4, :4] = 0.7
        w[4:, 4:] = 0.9
        np.fill_diagonal(w, 0.0)
        labels = scl.spectral_cluster(w, k=2, seed=0)
        assert len(set(labels[:4])) == 1
        assert len(set(labels[4:])) == 1
        assert labels[0] != labels[4]
        # canonical: larger component gets index 0
        assert labels[0] == 0

    def test_planted_blocks_recovered(self):
        w = planted_affinity(8, 3, noise=0.1, seed=3)
        labels = scl.spectral_cluster(w, k=3, seed=0)
        truth = np.repeat([0, 1, 2], 8)
        assert scl.ari(labels, truth) >= 0.9

    def test_same_seed_same_labels(self):
        w = planted_affinity(5, 3, noise=0.3, seed=4)
        l1 = scl.spectral_cluster(w, k=3, seed=9)
        l2 = scl.spectral_cluster(w, k=3, seed=9)
        assert np.array_equal(l1, l2)

    def test_isolated_node_named(self):
        w = random_affinity(5, 5)
        w[2, :] = 0.0
        w[:, 2] = 0.0
        with pytest.raises(DataError, match="2"):
            scl.spectral_cluster(w, k=2, seed=0)

    def test_rejects_k_below_two(self):
        with pytest.raises(ConfigError):
            scl.spectral_cluster(random_affinity(4, 6), k=1, seed=0)


class TestKmeansCanonical:
    def test_canonicalize_orders_by_size_then_key(self):
        labels = np.array([2, 2, 0, 1, 1, 1])
        out = canonicalize_labels(labels)
        # sizes: cluster1 has 3, cluster2 has 2, cluster0 has 1
        assert out.tolist() == [1, 1, 2, 0, 0, 0]

    def test_kmeans_separates_obvious_clusters(self):
        x = np.vstack([np.zeros((4, 2)), np.ones((5, 2)) * 10])
        labels = kmeans(x, 2, seed=0)
        assert len(set(labels[:4])) == 1 and len(set(labels[4:])) == 1

    def test_kmeans_deterministic(self):
        x = np.random.default_rng(7).standard_normal((20, 3))
        assert np.array_equal(kmeans(x, 4, seed=5), kmeans(x, 4, seed=5))


def _fused(values, ids):
    return FusedSimilarity(values=values, config=SnfConfig(k_neighbors=2),
                           views=["structure", "text"], subject_ids=ids)


def small_cohort(n_per_class, m=6, t=30, seed=0):
    spec = scl.SynthSpec(n_per_class=n_per_class, k_true=2, m_rois=m, t_len=t, seed=seed)
    cohort, truth = scl.generate(spec)
    return cohort, truth


class TestDiscoverSubtypes:
    def test_planted_three_subtypes_recovered(self):
        spec = scl.SynthSpec(n_per_class=24, k_true=3, m_rois=12, t_len=90,
                             noise_sigma=0.6, seed=6)
        cohort, truth = scl.generate(spec)
        fused = {}
        for label in (0, 1):
            ids = cohort.ids_with_label(label)
            w = planted_affinity(8, 3, noise=0.05, seed=label)
            order = np.argsort([truth[label][i] for i in ids], kind="stable")
            inv = np.empty_like(order)
            inv[order] = np.arange(len(ids))
            fused[label] = _fused(w[np.ix_(inv, inv)], ids)
        out = scl.discover_subtypes(cohort, fused, k=3, knn_k=5, seed=0)
        for label in (0, 1):
            ids = cohort.ids_with_label(label)
            got = [out[label].assignment[i] for i in ids]
            want = [truth[label][i] for i in ids]
            assert scl.ari(got, want) >= 0.9
            assert sorted(out[label].sizes(), reverse=True) == out[label].sizes()

    def test_class_with_exactly_k_subjects_gets_singletons(self):
        cohort, _ = small_cohort(3)
        fused = {}
        for label in (0, 1):
            ids = cohort.ids_with_label(label)
            fused[label] = _fused(random_affinity(3, label), ids)
        out = scl.discover_subtypes(cohort, fused, k=3, knn_k=2, seed=0)
        assert out[1].sizes() == [1, 1, 1]

    def test_class_smaller_than_k_errors(self):
        cohort, _ = small_cohort(2)
        fused = {label: _fused(random_affinity(2, label), cohort.ids_with_label(label))
                 for label in (0, 1)}
        with pytest.raises(DataError, match="fewer"):
            scl.discover_subtypes(cohort, fused, k=3, knn_k=1, seed=0)

    def test_k_sweep_supported(self):
        cohort, _ = small_cohort(12)
        sims = {}
        for label in (0, 1):
            ids = cohort.ids_with_label(label)
            sims[label] = _fused(random_affinity(12, label + 10), ids)
        for k in (2, 3, 4):
            out = scl.discover_subtypes(cohort, sims, k=k, knn_k=4, seed=0)
            assert out[1].k == k
            assert all(size >= 1 for size in out[1].sizes())

    def test_control_single_mode(self):
        cohort, _ = small_cohort(8)
        ids1 = cohort.ids_with_label(1)
        fused = {1: _fused(random_affinity(8, 3), ids1)}
        out = scl.discover_subtypes(cohort, fused, k=2, knn_k=3, seed=0,
                                    control_subtypes="single")
        assert out[0].k == 1
        assert set(out[0].assignment.values()) == {0}
        assert out[1].k == 2

    def test_assignment_canonical_ties_by_member_id(self):
        # two clusters of equal size: the one containing the smallest id is 0
        cohort, _ = small_cohort(4)
        ids = cohort.ids_with_label(1)
        w = np.zeros((4, 4))
        w[:2, :2] = 0.9
        w[2:, 2:] = 0.9
        np.fill_diagonal(w, 0.0)
        w[w == 0] += 0.01
        np.fill_diagonal(w, 0.0)
        fused = {1: _fused(w, ids)}
        out = scl.discover_subtypes(cohort, fused, k=2, knn_k=1, seed=0,
                                    control_subtypes="single")
        assert out[1].assignment[ids[0]] == 0
