"""Geometric kernels shared by the whole package.

All functions operate on ``(N, 3)`` float64 coordinate arrays, are pure,
and break distance ties by the lowest reference index so that results are
reproducible across runs and platforms. Nearest-neighbor queries are brute
force by design; at the point counts this package targets a spatial index
would not pay for itself.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

# Squared-distance threshold below which two points count as coincident.
COINCIDENT_EPS = 1e-10


class NeighborIndex(NamedTuple):
    """k nearest reference points per query row, ascending squared distance."""

    indices: np.ndarray   # (Q, k) integer indices into the reference cloud
    sq_dists: np.ndarray  # (Q, k) squared distances, non-decreasing per row


def as_points(points, name: str = "points") -> np.ndarray:
    """Validate and return a point cloud as a float64 ``(N, 3)`` array."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"{name} must have shape (N, 3), got {pts.shape}")
    if pts.shape[0] < 1:
        raise ValueError(f"{name} must contain at least one point")
    if not np.isfinite(pts).all():
        raise ValueError(f"{name} contains non-finite coordinates")
    return pts


def pairwise_sq_dist(a, b) -> np.ndarray:
    """Squared Euclidean distance between every pair of points.

    Args:
        a: ``(N, 3)`` point cloud.
        b: ``(M, 3)`` point cloud.

    Returns:
        ``(N, M)`` matrix with entry ``(i, j) = ||a_i - b_j||^2``.

    Uses the explicit difference form rather than the dot-product expansion
    so entries agree bit-for-bit with a scalar loop over coordinates.
    """
    a = as_points(a, "a")
    b = as_points(b, "b")
    diff = a[:, None, :] - b[None, :, :]
    return (diff * diff).sum(axis=-1)


def knn(query, reference, k: int) -> NeighborIndex:
    """Brute-force k-nearest-neighbor query.

    Args:
        query: ``(Q, 3)`` query points.
        reference: ``(M, 3)`` reference points, ``k <= M``.
        k: neighbors per query point.

    Returns:
        A :class:`NeighborIndex` whose rows are sorted by ascending squared
        distance, distance ties broken by the lower reference index.
    """
    ref = as_points(reference, "reference")
    if not 1 <= k <= ref.shape[0]:
        raise ValueError(f"k must be in [1, {ref.shape[0]}], got {k}")
    d2 = pairwise_sq_dist(query, ref)
    # Stable sort keeps the original (ascending-index) order on equal keys.
    order = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return NeighborIndex(order, np.take_along_axis(d2, order, axis=1))


def default_seed_index(points) -> int:
    """Order-independent FPS seed: the point farthest from the centroid.

    Ties broken by the lowest index. For clouds with distinct distances this
    selects the same physical point under any permutation of the input,
    which is what makes downstream sampling permutation-consistent.
    """
    pts = as_points(points)
    diff = pts - pts.mean(axis=0)
    return int(np.argmax((diff * diff).sum(axis=-1)))


def farthest_point_sample(points, m: int, seed_index: int = 0) -> np.ndarray:
    """Greedy farthest point sampling.

    Args:
        points: ``(N, 3)`` cloud to sample from.
        m: number of samples, ``1 <= m <= N``.
        seed_index: index of the first selected point.

    Returns:
        ``(m,)`` array of distinct indices. The first entry is
        ``seed_index``; each subsequent entry maximizes the minimum squared
        distance to all previously selected points, ties broken by the
        lowest index.
    """
    pts = as_points(points)
    n = pts.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"m must be in [1, {n}], got {m}")
    if not 0 <= seed_index < n:
        raise ValueError(f"seed_index must be in [0, {n}), got {seed_index}")
    selected = np.empty(m, dtype=np.intp)
    selected[0] = seed_index
    diff = pts - pts[seed_index]
    min_sq = (diff * diff).sum(axis=-1)
    min_sq[seed_index] = -np.inf  # mask selected points out of the argmax
    for i in range(1, m):
        nxt = int(np.argmax(min_sq))
        selected[i] = nxt
        diff = pts - pts[nxt]
        np.minimum(min_sq, (diff * diff).sum(axis=-1), out=min_sq)
        min_sq[nxt] = -np.inf
    return selected


def idw_weights(src_coords, dst_coords, k: int = 3,
                power: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    """Inverse-distance interpolation stencil from ``src`` onto ``dst``.

    Returns ``(indices, weights)``, both ``(Q, k)``: the k nearest source
    points of each destination point and their normalized ``1/d^power``
    weights. A destination coinciding with a source (squared distance below
    :data:`COINCIDENT_EPS`) gets a one-hot weight on that source.
    """
    nn = knn(dst_coords, src_coords, k)
    coincident = nn.sq_dists[:, 0] < COINCIDENT_EPS
    # sq_dists >= eps on non-coincident rows, so the power is finite.
    raw = np.where(nn.sq_dists < COINCIDENT_EPS, COINCIDENT_EPS,
                   nn.sq_dists) ** (-power / 2.0)
    weights = raw / raw.sum(axis=1, keepdims=True)
    weights[coincident] = 0.0
    weights[coincident, 0] = 1.0
    return nn.indices, weights


def idw_interpolate(src_coords, src_feats, dst_coords, k: int = 3,
                    power: float = 2.0) -> np.ndarray:
    """Interpolate per-point features onto new coordinates.

    Args:
        src_coords: ``(S, 3)`` source coordinates.
        src_feats: ``(S, D)`` feature rows aligned with ``src_coords``.
        dst_coords: ``(Q, 3)`` destination coordinates.
        k: stencil size, ``k <= S``.
        power: inverse-distance exponent.

    Returns:
        ``(Q, D)`` interpolated features. A destination coinciding with a
        source copies that source's feature row exactly.
    """
    feats = np.asarray(src_feats, dtype=np.float64)
    src = as_points(src_coords, "src_coords")
    if feats.ndim != 2 or feats.shape[0] != src.shape[0]:
        raise ValueError(
            f"src_feats must have one row per source point, got {feats.shape}")
    idx, w = idw_weights(src, dst_coords, k, power)
    out = (feats[idx] * w[..., None]).sum(axis=1)
    coincident = w[:, 0] == 1.0
    if coincident.any():
        out[coincident] = feats[idx[coincident, 0]]
    return out
