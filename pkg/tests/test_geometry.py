import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pchier.geometry import (
    default_seed_index,
    farthest_point_sample,
    idw_interpolate,
    idw_weights,
    knn,
    pairwise_sq_dist,
)


def sq_dist_loop_oracle(a, b):
    out = np.empty((len(a), len(b)))
    for i in range(len(a)):
        for j in range(len(b)):
            d = 0.0
            for c in range(3):
                d += (a[i, c] - b[j, c]) ** 2
            out[i, j] = d
    return out


def knn_sort_oracle(query, reference, k):
    idx = np.empty((len(query), k), dtype=int)
    d2 = np.empty((len(query), k))
    for i in range(len(query)):
        dists = [(float(((query[i] - reference[j]) ** 2).sum()), j)
                 for j in range(len(reference))]
        dists.sort()
        idx[i] = [j for _, j in dists[:k]]
        d2[i] = [d for d, _ in dists[:k]]
    return idx, d2


def fps_step_oracle(points, selected):
    """Exhaustive max-min search for the next FPS pick."""
    best_idx, best_val = None, -1.0
    chosen = set(selected)
    for i in range(len(points)):
        if i in chosen:
            continue
        min_d = min(float(((points[i] - points[s]) ** 2).sum()) for s in selected)
        if min_d > best_val:
            best_val, best_idx = min_d, i
    return best_idx


class TestPairwiseSqDist:
    def test_single_point_identity(self):
        assert pairwise_sq_dist([[0, 0, 0]], [[0, 0, 0]]) == np.zeros((1, 1))

    def test_analytic(self):
        d2 = pairwise_sq_dist([[0, 0, 0]], [[1, 0, 0], [0, 2, 0]])
        assert d2.tolist() == [[1.0, 4.0]]

    def test_matches_loop_oracle_exactly(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(5, 3))
        b = rng.normal(size=(5, 3))
        assert np.array_equal(pairwise_sq_dist(a, b), sq_dist_loop_oracle(a, b))

    def test_symmetric_on_self(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(7, 3))
        d2 = pairwise_sq_dist(a, a)
        assert np.array_equal(d2, d2.T)

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            pairwise_sq_dist([[np.nan, 0, 0]], [[0, 0, 0]])


class TestKnn:
    def test_self_query_nearest_is_self(self):
        rng = np.random.default_rng(2)
        pts = rng.normal(size=(9, 3))
        nn = knn(pts, pts, 1)
        assert nn.indices[:, 0].tolist() == list(range(9))
        assert np.all(nn.sq_dists == 0.0)

    def test_analytic(self):
        nn = knn([[0, 0, 0]], [[3, 0, 0], [1, 0, 0], [2, 0, 0]], 2)
        assert nn.indices.tolist() == [[1, 2]]
        assert nn.sq_dists.tolist() == [[1.0, 4.0]]

    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(3)
        pts = rng.normal(size=(20, 3))
        nn = knn(pts, pts, 5)
        idx, d2 = knn_sort_oracle(pts, pts, 5)
        assert np.array_equal(nn.indices, idx)
        assert np.allclose(nn.sq_dists, d2, atol=0, rtol=0)

    def test_tie_breaks_to_lower_index(self):
        ref = np.array([[1.0, 0, 0], [-1.0, 0, 0], [1.0, 0, 0]])
        nn = knn([[0, 0, 0]], ref, 3)
        assert nn.indices.tolist() == [[0, 1, 2]]

    def test_k_too_large_fails(self):
        with pytest.raises(ValueError):
            knn([[0, 0, 0]], [[1, 0, 0]], 2)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1), st.integers(4, 16), st.integers(1, 4))
    def test_permutation_consistent(self, seed, n, k):
        rng = np.random.default_rng(seed)
        ref = rng.normal(size=(n, 3))
        query = rng.normal(size=(3, 3))
        perm = rng.permutation(n)
        base = knn(query, ref, k)
        permuted = knn(query, ref[perm], k)
        # Same neighbor sets once indices are mapped back.
        assert np.array_equal(perm[permuted.indices], base.indices)


class TestFarthestPointSample:
    def test_full_sample_is_permutation(self):
        rng = np.random.default_rng(4)
        pts = rng.normal(size=(10, 3))
        idx = farthest_point_sample(pts, 10, seed_index=3)
        assert idx[0] == 3
        assert sorted(idx.tolist()) == list(range(10))

    def test_analytic(self):
        pts = np.array([[0, 0, 0], [1, 0, 0], [5, 0, 0]], dtype=float)
        assert farthest_point_sample(pts, 2, 0).tolist() == [0, 2]

    def test_each_step_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(5)
        pts = rng.normal(size=(16, 3))
        idx = farthest_point_sample(pts, 4, 0)
        for step in range(1, 4):
            assert idx[step] == fps_step_oracle(pts, idx[:step].tolist())

    def test_m_too_large_fails(self):
        with pytest.raises(ValueError):
            farthest_point_sample(np.zeros((3, 3)), 4)

    def test_indices_distinct_with_duplicate_points(self):
        pts = np.array([[0, 0, 0]] * 4 + [[1, 0, 0]], dtype=float)
        idx = farthest_point_sample(pts, 5, 0)
        assert sorted(idx.tolist()) == list(range(5))


class TestDefaultSeedIndex:
    def test_farthest_from_centroid(self):
        pts = np.array([[0, 0, 0], [1, 0, 0], [10, 0, 0]], dtype=float)
        assert default_seed_index(pts) == 2

    def test_order_independent_physical_point(self):
        rng = np.random.default_rng(6)
        pts = rng.normal(size=(12, 3))
        perm = rng.permutation(12)
        assert np.array_equal(pts[default_seed_index(pts)],
                              pts[perm][default_seed_index(pts[perm])])


class TestIdwInterpolate:
    def test_identity_copies_exactly(self):
        rng = np.random.default_rng(7)
        coords = rng.normal(size=(6, 3))
        feats = rng.normal(size=(6, 4))
        out = idw_interpolate(coords, feats, coords, k=3)
        assert np.array_equal(out, feats)

    def test_midpoint_symmetry(self):
        src = np.array([[0, 0, 0], [1, 0, 0]], dtype=float)
        feats = np.array([[0.0], [10.0]])
        out = idw_interpolate(src, feats, [[0.5, 0, 0]], k=2, power=2)
        assert out.tolist() == [[5.0]]

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(8)
        src = rng.normal(size=(8, 3))
        feats = rng.normal(size=(8, 5))
        dst = rng.normal(size=(4, 3))
        out = idw_interpolate(src, feats, dst, k=3, power=2)
        idx, _ = idw_weights(src, dst, k=3, power=2)
        for q in range(4):
            d2 = np.array([((dst[q] - src[j]) ** 2).sum() for j in idx[q]])
            w = (1.0 / d2)
            w /= w.sum()
            expected = (feats[idx[q]] * w[:, None]).sum(axis=0)
            assert np.allclose(out[q], expected, atol=1e-12, rtol=0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1), st.floats(-5, 5))
    def test_constant_features_stay_constant(self, seed, value):
        rng = np.random.default_rng(seed)
        src = rng.normal(size=(6, 3))
        dst = rng.normal(size=(5, 3))
        feats = np.full((6, 2), value)
        out = idw_interpolate(src, feats, dst, k=3)
        assert np.allclose(out, value, atol=1e-12)

    def test_k_too_large_fails(self):
        with pytest.raises(ValueError):
            idw_interpolate(np.zeros((2, 3)), np.zeros((2, 1)), np.zeros((1, 3)), k=3)

    def test_deterministic(self):
        rng = np.random.default_rng(9)
        src = rng.normal(size=(10, 3))
        feats = rng.normal(size=(10, 2))
        dst = rng.normal(size=(4, 3))
        a = idw_interpolate(src, feats, dst)
        b = idw_interpolate(src, feats, dst)
        assert np.array_equal(a, b)
