"""Distances between point clouds, usable as losses and as metrics.

Both the Chamfer distance and the Earth Mover's Distance use squared
Euclidean point distances and per-point normalization. When the predicted
cloud comes in as an autodiff tensor the returned scalar is differentiable
with respect to it: Chamfer routes gradients through the nearest-neighbor
matches and EMD holds its optimal assignment fixed (the standard envelope
subgradient).

Match selection runs on a cost matrix built with the dot-product expansion
(no ``(N, M, 3)`` temporaries); the reported values are then recomputed
from the matched coordinate differences, so they carry no expansion
round-off.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .diffcore import Tensor, gather_rows, mean, tensor_sum
from .geometry import as_points, farthest_point_sample

CSV_HEADER = "sequence_id,frame,cd,emd,cd_top5"


@dataclass
class MetricReport:
    """One prediction's evaluation row.

    ``per_point_nn_dist`` holds each predicted point's squared distance to
    its nearest target point (the predicted-to-target Chamfer half before
    averaging). ``emd_subsampled`` records whether the EMD was computed on
    FPS-reduced clouds because the inputs exceeded the exact-solver cap.
    """

    cd: float
    emd: float
    cd_top5: float
    per_point_nn_dist: np.ndarray = field(repr=False)
    emd_subsampled: bool = False

    def csv_row(self, sequence_id: str, frame) -> str:
        return (f"{sequence_id},{frame},{self.cd:.17g},{self.emd:.17g},"
                f"{self.cd_top5:.17g}")


def _values(cloud) -> np.ndarray:
    return cloud.values if isinstance(cloud, Tensor) else np.asarray(cloud)


def _cost_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared distances via the dot-product expansion, clamped at zero."""
    aa = np.einsum("ij,ij->i", a, a)
    bb = np.einsum("ij,ij->i", b, b)
    d2 = aa[:, None] + bb[None, :] - 2.0 * (a @ b.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def _matched_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a - b
    return np.einsum("ij,ij->i", diff, diff)


def _chamfer_with_cost(pred, pred_np, target_np, d2):
    idx_pt = d2.argmin(axis=1)
    idx_tp = d2.argmin(axis=0)
    if not isinstance(pred, Tensor):
        return float(_matched_sq_dists(pred_np, target_np[idx_pt]).mean()
                     + _matched_sq_dists(target_np, pred_np[idx_tp]).mean())
    diff_a = pred - target_np[idx_pt]
    term_a = mean(tensor_sum(diff_a * diff_a, axis=-1))
    diff_b = gather_rows(pred, idx_tp) - target_np
    term_b = mean(tensor_sum(diff_b * diff_b, axis=-1))
    return term_a + term_b


def _emd_with_cost(pred, pred_np, target_np, d2):
    _, cols = linear_sum_assignment(d2)
    if not isinstance(pred, Tensor):
        return float(_matched_sq_dists(pred_np, target_np[cols]).mean())
    diff = pred - target_np[cols]
    return mean(tensor_sum(diff * diff, axis=-1))


def chamfer_distance(pred, target):
    """Symmetric mean of nearest-neighbor squared distances.

    Args:
        pred: ``(N, 3)`` cloud, array or autodiff tensor.
        target: ``(M, 3)`` cloud.

    Returns:
        A float, or a scalar tensor differentiable w.r.t. ``pred`` when
        ``pred`` is a tensor. Ties in the nearest-neighbor matches break
        toward the lower index.
    """
    target_np = as_points(_values(target), "target")
    pred_np = as_points(_values(pred), "pred")
    return _chamfer_with_cost(pred, pred_np, target_np,
                              _cost_matrix(pred_np, target_np))


def emd(pred, target):
    """Exact Earth Mover's Distance between equal-size clouds.

    Solves the minimum-cost perfect matching on the squared-distance cost
    matrix and returns the mean matched squared distance. Requires
    ``|pred| == |target|``.
    """
    target_np = as_points(_values(target), "target")
    pred_np = as_points(_values(pred), "pred")
    if pred_np.shape[0] != target_np.shape[0]:
        raise ValueError(
            f"emd requires equal cardinalities, got {pred_np.shape[0]} and "
            f"{target_np.shape[0]}")
    return _emd_with_cost(pred, pred_np, target_np,
                          _cost_matrix(pred_np, target_np))


def chamfer_and_emd(pred, target):
    """Both metrics off one shared cost matrix (the training-loss path)."""
    target_np = as_points(_values(target), "target")
    pred_np = as_points(_values(pred), "pred")
    if pred_np.shape[0] != target_np.shape[0]:
        raise ValueError(
            f"emd requires equal cardinalities, got {pred_np.shape[0]} and "
            f"{target_np.shape[0]}")
    d2 = _cost_matrix(pred_np, target_np)
    return (_chamfer_with_cost(pred, pred_np, target_np, d2),
            _emd_with_cost(pred, pred_np, target_np, d2))


def cd_top_percent(pred, target, p: float = 5.0) -> float:
    """Mean nearest-neighbor error over the worst-predicted ``p`` percent.

    Each predicted point's squared distance to its closest target point is
    computed and the largest ``ceil(p * N / 100)`` values are averaged.
    """
    if not 0.0 < p <= 100.0:
        raise ValueError(f"p must be in (0, 100], got {p}")
    pred_np = as_points(_values(pred), "pred")
    target_np = as_points(_values(target), "target")
    idx = _cost_matrix(pred_np, target_np).argmin(axis=1)
    nn = _matched_sq_dists(pred_np, target_np[idx])
    m = math.ceil(p * nn.size / 100.0)
    worst = np.partition(nn, nn.size - m)[nn.size - m:]
    return float(worst.mean())


def subsample_for_emd(pred_np: np.ndarray, target_np: np.ndarray,
                      cap: int) -> tuple[np.ndarray, np.ndarray]:
    """FPS both clouds down to ``cap`` points for tractable exact EMD."""
    idx_p = farthest_point_sample(pred_np, min(cap, pred_np.shape[0]))
    idx_t = farthest_point_sample(target_np, min(cap, target_np.shape[0]))
    return pred_np[idx_p], target_np[idx_t]


def metric_report(pred, target, top_percent: float = 5.0,
                  emd_cap: int = 512) -> MetricReport:
    """Evaluate one prediction against its target cloud.

    Clouds larger than ``emd_cap`` are FPS-subsampled for the EMD column
    only; CD and CD Top p%% always use the full clouds.
    """
    pred_np = as_points(_values(pred), "pred")
    target_np = as_points(_values(target), "target")
    d2 = _cost_matrix(pred_np, target_np)
    nn_pt = _matched_sq_dists(pred_np, target_np[d2.argmin(axis=1)])
    nn_tp = _matched_sq_dists(target_np, pred_np[d2.argmin(axis=0)])
    cd = float(nn_pt.mean() + nn_tp.mean())
    m = math.ceil(top_percent * nn_pt.size / 100.0)
    top = float(np.partition(nn_pt, nn_pt.size - m)[nn_pt.size - m:].mean())
    subsampled = pred_np.shape[0] > emd_cap or target_np.shape[0] > emd_cap
    if subsampled:
        emd_pred, emd_target = subsample_for_emd(pred_np, target_np, emd_cap)
        emd_value = emd(emd_pred, emd_target)
    else:
        emd_value = _emd_with_cost(pred_np, pred_np, target_np, d2)
    return MetricReport(cd=cd, emd=emd_value, cd_top5=top,
                        per_point_nn_dist=nn_pt, emd_subsampled=subsampled)
