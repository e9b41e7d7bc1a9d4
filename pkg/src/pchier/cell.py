"""Recurrent point cell: one level of spatio-temporal feature extraction.

Each point gathers two k-neighborhoods — one in the current frame, one in
the recurrent state anchored at the previous frame — encodes relative
offsets and features through point-shared edge networks, max-pools the two
groups separately, and refines the pooled vectors into the point's output
feature, which also becomes the next state row.

All coordinate information enters only through neighbor offsets
``x_j - x_i``, which is what makes the cell translation invariant.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .diffcore import (
    ParamStore,
    Tensor,
    expand_neighbors,
    gather_rows,
    max_pool_neighbors,
)
from .diffcore.nn import shared_mlp_forward_parts
from .geometry import NeighborIndex, as_points, knn


@dataclass
class CellState:
    """Per-level recurrent memory: coordinates plus state features.

    The empty sentinel (both fields ``None``) marks "no previous frame" and
    is distinct from a zero-valued state.
    """

    coords: np.ndarray | None
    feats: Tensor | None

    @classmethod
    def empty(cls) -> "CellState":
        return cls(coords=None, feats=None)

    @property
    def is_empty(self) -> bool:
        return self.coords is None


@dataclass
class CellOutput:
    feats: Tensor
    new_state: CellState


class Neighborhoods(NamedTuple):
    spatial: NeighborIndex
    spatial_offsets: np.ndarray    # (P, k, 3) x_j - x_i within the frame
    temporal: NeighborIndex | None
    temporal_offsets: np.ndarray   # (P, k, 3) against the state coordinates


def reset_state(level_count: int) -> list[CellState]:
    """One empty sentinel state per hierarchy level."""
    if level_count < 1:
        raise ValueError(f"level_count must be >= 1, got {level_count}")
    return [CellState.empty() for _ in range(level_count)]


def spatio_temporal_neighborhoods(points: np.ndarray,
                                  state_coords: np.ndarray | None,
                                  k: int) -> Neighborhoods:
    """Gather each point's k nearest neighbors in space and in time.

    With no state (first frame) the temporal group degenerates to k copies
    of the point itself, so the temporal offsets are all zero.
    """
    pts = as_points(points)
    p = pts.shape[0]
    spatial = knn(pts, pts, k)
    sp_off = pts[spatial.indices] - pts[:, None, :]
    if state_coords is None:
        return Neighborhoods(spatial, sp_off, None, np.zeros((p, k, 3)))
    temporal = knn(pts, state_coords, k)
    tp_off = state_coords[temporal.indices] - pts[:, None, :]
    return Neighborhoods(spatial, sp_off, temporal, tp_off)


def run_cell(spatial_offsets: np.ndarray, spatial_idx: np.ndarray,
             temporal_offsets: np.ndarray, state_feats: Tensor,
             in_feats: Tensor | None, params: ParamStore, prefix: str) -> Tensor:
    """Core cell math over precomputed neighborhoods.

    ``state_feats`` is the already-gathered ``(P, k, D)`` temporal neighbor
    features (all zero on the first frame). Callers that iterate a sequence
    repeatedly can cache the neighborhoods and call this directly.
    """
    _, k, _ = spatial_offsets.shape
    d_out = params[f"{prefix}.update.mlp0.bias"].values.shape[0]
    if in_feats is not None:
        f_center = expand_neighbors(in_feats, k)
        f_spatial = gather_rows(in_feats, spatial_idx)
        sp_edges = [Tensor(spatial_offsets), f_center, f_spatial]
        tp_edges = [Tensor(temporal_offsets), f_center, state_feats]
    else:
        sp_edges = [Tensor(spatial_offsets)]
        tp_edges = [Tensor(temporal_offsets), state_feats]
    pooled_sp = max_pool_neighbors(
        shared_mlp_forward_parts(sp_edges, [d_out], params, f"{prefix}.spatial"))
    pooled_tp = max_pool_neighbors(
        shared_mlp_forward_parts(tp_edges, [d_out], params, f"{prefix}.temporal"))
    parts = [pooled_sp, pooled_tp]
    if in_feats is not None:
        parts.append(in_feats)
    return shared_mlp_forward_parts(parts, [d_out], params, f"{prefix}.update")


def cell_step(points, in_feats, state: CellState, k: int, params: ParamStore,
              prefix: str) -> CellOutput:
    """Advance one recurrent cell by one frame.

    Args:
        points: ``(P, 3)`` coordinates at this level for the current frame.
        in_feats: ``(P, Din)`` input features (tensor or array) or ``None``
            at the bottom level.
        state: previous :class:`CellState`, possibly empty.
        k: neighborhood size, ``k <= P`` and ``k <= |state|`` when present.
        params: parameters named ``<prefix>.{spatial,temporal,update}.*``.
        prefix: parameter namespace for this level.

    Returns:
        The output features and the new state anchored at ``points``.
    """
    pts = as_points(points)
    p = pts.shape[0]
    if not 1 <= k <= p:
        raise ValueError(f"k must be in [1, {p}], got {k}")
    if not state.is_empty and k > state.coords.shape[0]:
        raise ValueError(
            f"k={k} exceeds the {state.coords.shape[0]}-point state")
    d_out = params[f"{prefix}.update.mlp0.bias"].values.shape[0]

    hoods = spatio_temporal_neighborhoods(
        pts, None if state.is_empty else state.coords, k)
    if state.is_empty:
        state_feats = Tensor(np.zeros((p, k, d_out)))
    else:
        state_feats = gather_rows(state.feats, hoods.temporal.indices)

    if in_feats is not None and not isinstance(in_feats, Tensor):
        in_feats = Tensor(np.asarray(in_feats, dtype=np.float64))
    if in_feats is not None and in_feats.values.shape[0] != p:
        raise ValueError("in_feats must have one row per point")
    out = run_cell(hoods.spatial_offsets, hoods.spatial.indices,
                   hoods.temporal_offsets, state_feats, in_feats, params, prefix)
    return CellOutput(feats=out, new_state=CellState(pts.copy(), out))


def cell_param_widths(din: int, d_out: int) -> dict[str, int]:
    """Input widths of the three networks inside one cell."""
    return {
        "spatial": 3 + 2 * din,
        "temporal": 3 + din + d_out,
        "update": 2 * d_out + din,
    }
