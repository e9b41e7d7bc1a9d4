"""Explainability tools: per-level motion decomposition, variance
diagnostics, PCA feature coloring, and motion-field exports.

The decomposition re-runs the propagation phase and motion head with all
but one level's features zeroed at its input, yielding that level's motion
contribution. Because the propagation path contains ReLUs, the
contributions need not sum to the full motion exactly; the reported
residual quantifies the gap after correcting for the all-zero bias field,
and vanishes when the path behaves affinely on the probe.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .diffcore import ParamStore, Tensor, no_grad
from .geometry import as_points
from .network import ArchitectureConfig, LevelOutput, fp_forward, predict_next


@dataclass
class Decomposition:
    """Full motion field, its per-level contributions, and the additivity gap."""

    contributions: list[np.ndarray]   # one (N, 3) field per level
    full: np.ndarray                  # (N, 3)
    bias_field: np.ndarray            # output with every level zeroed
    residual: float                   # RMS over points of the defect vector


def _masked_levels(levels: Sequence[LevelOutput], keep: int | None) -> list[LevelOutput]:
    out = []
    for i, lvl in enumerate(levels):
        if keep is not None and i == keep:
            out.append(lvl)
        else:
            out.append(LevelOutput(lvl.coords, Tensor(np.zeros_like(lvl.feats.values))))
    return out


def decompose_motion(frame, levels: Sequence[LevelOutput], params: ParamStore,
                     cfg: ArchitectureConfig) -> Decomposition:
    """Split the predicted motion into per-level contributions.

    Args:
        frame: the input frame the level outputs were extracted from.
        levels: extraction outputs for that frame (trained network).
        params: trained parameters.
        cfg: the architecture that produced ``levels``.

    Returns:
        A :class:`Decomposition` whose residual is the root-mean-square over
        points of ``full - sum(contributions) + (L - 1) * bias_field``.
    """
    levels = list(levels)

    def head_motion(level_set) -> np.ndarray:
        final = fp_forward(frame, level_set, cfg, params)
        motion, _ = predict_next(frame, final, params)
        return motion.values.copy()

    with no_grad():
        full = head_motion(levels)
        contributions = [head_motion(_masked_levels(levels, keep=i))
                         for i in range(cfg.levels)]
        bias = head_motion(_masked_levels(levels, keep=None))
    defect = full - np.sum(contributions, axis=0) + (cfg.levels - 1) * bias
    residual = float(np.sqrt((defect * defect).sum(axis=1).mean()))
    return Decomposition(contributions=contributions, full=full,
                         bias_field=bias, residual=residual)


@dataclass
class VarianceProfile:
    """Spatial spread of each level's motion contribution.

    ``overall[l]`` is the trace of the covariance of level ``l+1``'s
    vectors across points; ``segments`` restricts the same statistic to
    each labeled segment.
    """

    overall: list[float]
    segments: dict[int, list[float]]


def _cov_trace(vectors: np.ndarray) -> float:
    centered = vectors - vectors.mean(axis=0)
    return float((centered * centered).sum(axis=1).mean())


def motion_variance_profile(decomp: Decomposition,
                            labels: np.ndarray | None = None) -> VarianceProfile:
    overall = [_cov_trace(m) for m in decomp.contributions]
    segments: dict[int, list[float]] = {}
    if labels is not None:
        labels = np.asarray(labels)
        for segment in np.unique(labels):
            mask = labels == segment
            segments[int(segment)] = [_cov_trace(m[mask]) for m in decomp.contributions]
    return VarianceProfile(overall=overall, segments=segments)


def pca_feature_colors(feats) -> np.ndarray:
    """Project feature rows onto their top-3 principal components as RGB.

    Features are centered, projected onto the three leading eigenvectors of
    their covariance (each eigenvector's largest-magnitude loading made
    positive so colorings are reproducible), and min-max scaled per channel
    into [0, 1]. Degenerate directions (rank below 3, or zero spread)
    render as the 0.5 midpoint.
    """
    f = np.asarray(feats, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 3 or f.shape[1] < 3:
        raise ValueError(
            f"need at least 3 points with >= 3 feature dims, got {f.shape}")
    centered = f - f.mean(axis=0)
    cov = centered.T @ centered / f.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals, kind="stable")[::-1][:3]
    tol = max(float(evals.max()), 0.0) * 1e-12
    colors = np.full((f.shape[0], 3), 0.5)
    for channel, comp_idx in enumerate(order):
        if evals[comp_idx] <= tol:
            continue
        vec = evecs[:, comp_idx]
        if vec[np.argmax(np.abs(vec))] < 0:
            vec = -vec
        proj = centered @ vec
        span = proj.max() - proj.min()
        if span < 1e-15:
            continue
        colors[:, channel] = (proj - proj.min()) / span
    return colors


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def export_motion(frame, fields: Sequence[np.ndarray], path) -> tuple[Path, Path]:
    """Write motion fields as a CSV plus a color-coded ASCII PLY.

    The CSV holds ``x,y,z`` followed by ``dx_i,dy_i,dz_i`` per field; the
    PLY colors each point by the first field's vectors pushed through the
    PCA color mapping. ``path`` is the extension-less base name.

    Returns:
        The ``(csv_path, ply_path)`` pair.
    """
    pts = as_points(frame)
    fields = [np.asarray(f, dtype=np.float64) for f in fields]
    if not fields:
        raise ValueError("need at least one motion field")
    for i, fld in enumerate(fields):
        if fld.shape != pts.shape:
            raise ValueError(f"field {i} shape {fld.shape} != frame shape {pts.shape}")
    base = Path(path)
    base.parent.mkdir(parents=True, exist_ok=True)

    header = ["x", "y", "z"]
    for i in range(len(fields)):
        header += [f"dx_{i + 1}", f"dy_{i + 1}", f"dz_{i + 1}"]
    lines = [",".join(header)]
    for row in range(pts.shape[0]):
        cells = [_fmt(c) for c in pts[row]]
        for fld in fields:
            cells += [_fmt(c) for c in fld[row]]
        lines.append(",".join(cells))
    csv_path = base.with_suffix(".csv")
    csv_path.write_text("\n".join(lines) + "\n")

    rgb = np.rint(pca_feature_colors(fields[0]) * 255.0).astype(int)
    ply_lines = ["ply", "format ascii 1.0", f"element vertex {pts.shape[0]}",
                 "property double x", "property double y", "property double z",
                 "property uchar red", "property uchar green", "property uchar blue",
                 "end_header"]
    for row in range(pts.shape[0]):
        x, y, z = pts[row]
        r, g, b = rgb[row]
        ply_lines.append(f"{x:.17g} {y:.17g} {z:.17g} {r} {g} {b}")
    ply_path = base.with_suffix(".ply")
    ply_path.write_text("\n".join(ply_lines) + "\n")
    return csv_path, ply_path


def write_variance_summary(decomp: Decomposition, profile: VarianceProfile,
                           path) -> dict:
    """Persist the decomposition diagnostics as JSON.

    Includes the soft global-vs-local check: whether the top level's
    contribution varies less across points than the bottom level's.
    """
    top = profile.overall[-1]
    bottom = profile.overall[0]
    doc = {
        "residual": decomp.residual,
        "levels": {str(i + 1): v for i, v in enumerate(profile.overall)},
        "segments": {str(k): v for k, v in profile.segments.items()} or None,
        "soft_check": {
            "variance_top_level": top,
            "variance_bottom_level": bottom,
            "top_less_than_bottom": bool(top < bottom),
            "status": "pass" if top < bottom else "warn",
        },
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
    return doc
