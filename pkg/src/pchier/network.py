"""Full prediction network: hierarchical extraction, feature propagation,
and the motion head, wired per one of four experimental variants.

The extraction phase runs one recurrent cell per level over a cloud that is
farthest-point-sampled between levels; the propagation phase interpolates
level features back down the hierarchy, concatenating and refining at each
stage; the head maps the final per-point feature to a 3-vector that is
added to the input frame to predict the next one.

Variant wiring:

* ``classic`` — sampled hierarchy, each cell consumes the previous level's
  output features (stacked), propagation combines every level.
* ``shallow`` — identical sampling chain, but cells run in parallel on raw
  coordinates only (no feature chaining).
* ``single-scale`` — stacked cells with no downsampling; every level sees
  the full cloud.
* ``without-combination`` — extraction identical to classic, but only the
  top level's features are interpolated straight to full resolution for
  the prediction.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .cell import (
    CellState,
    cell_param_widths,
    cell_step,
    reset_state,
    run_cell,
    spatio_temporal_neighborhoods,
)
from .diffcore import (
    ParamStore,
    Tensor,
    affine,
    create_mlp_params,
    gather_rows,
    no_grad,
    shared_mlp_forward,
    tensor_sum,
)
from .diffcore.tensor import GatherIndex
from .diffcore.nn import shared_mlp_forward_parts
from .geometry import as_points, default_seed_index, farthest_point_sample, idw_weights

FP_INTERP_K = 3


class Variant(str, Enum):
    CLASSIC = "classic"
    SHALLOW = "shallow"
    SINGLE_SCALE = "single-scale"
    WITHOUT_COMBINATION = "without-combination"


VARIANT_NAMES = tuple(v.value for v in Variant)

_CONFIG_KEYS = ("variant", "levels", "downsample_factor", "k",
                "feature_widths", "fp_widths", "seed")


@dataclass(frozen=True)
class ArchitectureConfig:
    """Complete wiring description of one prediction network."""

    variant: Variant = Variant.CLASSIC
    levels: int = 3
    downsample_factor: int = 4
    k: tuple[int, ...] = (8, 8, 8)
    feature_widths: tuple[int, ...] = (64, 128, 256)
    fp_widths: tuple[tuple[int, ...], ...] = ((256, 128), (128, 128), (128, 64))
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "k", tuple(int(x) for x in self.k))
        object.__setattr__(self, "feature_widths",
                           tuple(int(x) for x in self.feature_widths))
        object.__setattr__(self, "fp_widths",
                           tuple(tuple(int(x) for x in stage) for stage in self.fp_widths))
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        if self.downsample_factor < 1:
            raise ValueError(
                f"downsample_factor must be >= 1, got {self.downsample_factor}")
        for name, seq in (("k", self.k), ("feature_widths", self.feature_widths),
                          ("fp_widths", self.fp_widths)):
            if len(seq) != self.levels:
                raise ValueError(
                    f"{name} must list one entry per level ({self.levels}), got {len(seq)}")
        if any(x < 1 for x in self.k) or any(x < 1 for x in self.feature_widths):
            raise ValueError("k and feature_widths entries must be >= 1")
        if any(len(stage) < 1 or any(w < 1 for w in stage) for stage in self.fp_widths):
            raise ValueError("every fp_widths stage needs at least one positive width")

    @property
    def effective_factor(self) -> int:
        """Single-scale keeps every level at full resolution."""
        return 1 if self.variant is Variant.SINGLE_SCALE else self.downsample_factor

    def to_json_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "levels": self.levels,
            "downsample_factor": self.downsample_factor,
            "k": list(self.k),
            "feature_widths": list(self.feature_widths),
            "fp_widths": [list(stage) for stage in self.fp_widths],
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ArchitectureConfig":
        unknown = set(doc) - set(_CONFIG_KEYS)
        if unknown:
            raise ValueError(f"unknown architecture config keys: {sorted(unknown)}")
        merged = {key: doc[key] for key in _CONFIG_KEYS if key in doc}
        return cls(**merged)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "ArchitectureConfig":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


@dataclass
class LevelOutput:
    """One hierarchy level's coordinates and features for one frame."""

    coords: np.ndarray
    feats: Tensor


@dataclass
class ForwardResult:
    levels: list[LevelOutput]
    states: list[CellState]
    final_feats: Tensor
    motion: Tensor
    predicted: Tensor


def _stacked(variant: Variant) -> bool:
    return variant is not Variant.SHALLOW


def level_input_width(cfg: ArchitectureConfig, level: int) -> int:
    """Feature width entering the cell at 1-based ``level``."""
    if level == 1 or not _stacked(cfg.variant):
        return 0
    return cfg.feature_widths[level - 2]


def build_params(cfg: ArchitectureConfig, zero_head: bool = True) -> ParamStore:
    """Create all trainable parameters for one network.

    Weights draw from a generator seeded by ``cfg.seed``; the motion head is
    zero-initialized by default so the untrained network predicts exactly
    the copy-last-input baseline.
    """
    rng = np.random.default_rng(cfg.seed)
    store = ParamStore()
    for level in range(1, cfg.levels + 1):
        d_out = cfg.feature_widths[level - 1]
        widths = cell_param_widths(level_input_width(cfg, level), d_out)
        for part in ("spatial", "temporal", "update"):
            create_mlp_params(store, f"de.level{level}.{part}", widths[part],
                              [d_out], rng)
    if cfg.variant is Variant.WITHOUT_COMBINATION:
        final = create_mlp_params(store, "fp.stage0", cfg.feature_widths[-1],
                                  cfg.fp_widths[-1], rng)
    else:
        work = cfg.feature_widths[-1]
        for level in range(cfg.levels - 1, -1, -1):
            low = cfg.feature_widths[level - 1] if level >= 1 else 0
            work = create_mlp_params(store, f"fp.stage{level}", work + low,
                                     cfg.fp_widths[cfg.levels - 1 - level], rng)
        final = work
    store.create("head.weight", (final, 3), rng,
                 init="zeros" if zero_head else "glorot")
    store.create("head.bias", (3,))
    return store


def sg_module(cloud, feats, factor: int, seed_index: int | None = None):
    """Downsample a cloud by farthest point sampling, carrying features.

    Args:
        cloud: ``(N, 3)`` coordinates; ``factor`` must divide ``N``.
        feats: per-point features to carry through (tensor or ``None``).
        factor: downsampling factor; ``1`` is the identity.
        seed_index: first FPS pick; defaults to the point farthest from the
            centroid, which keeps sampling permutation-consistent.

    Returns:
        ``(sub_cloud, carried_feats)`` with ``N / factor`` rows each.
    """
    pts = as_points(cloud)
    n = pts.shape[0]
    if factor < 1 or n % factor:
        raise ValueError(f"factor {factor} must divide the cloud size {n}")
    if factor == 1:
        return pts, feats
    if seed_index is None:
        seed_index = default_seed_index(pts)
    idx = farthest_point_sample(pts, n // factor, seed_index)
    carried = gather_rows(feats, idx) if feats is not None else None
    return pts[idx], carried


@dataclass
class LevelPlan:
    """Frozen per-level geometry for one frame of one sequence."""

    coords: np.ndarray
    select: GatherIndex | None       # FPS picks into the previous level's rows
    k: int
    spatial_idx: GatherIndex
    spatial_offsets: np.ndarray
    temporal_idx: GatherIndex | None  # None on the first frame
    temporal_offsets: np.ndarray


@dataclass
class StagePlan:
    """Interpolation stencil for one propagation stage."""

    idx: GatherIndex | np.ndarray
    weights: np.ndarray


@dataclass
class FramePlan:
    levels: list[LevelPlan]
    stages: list[StagePlan]


def _build_level_plans(frame: np.ndarray, cfg: ArchitectureConfig,
                       prev_coords: list[np.ndarray] | None) -> list[LevelPlan]:
    factor = cfg.effective_factor
    plans: list[LevelPlan] = []
    coords = frame
    for level in range(1, cfg.levels + 1):
        if factor == 1:
            select, coords_l = None, coords
        else:
            n = coords.shape[0]
            if n % factor:
                raise ValueError(f"factor {factor} must divide the cloud size {n}")
            select = farthest_point_sample(coords, n // factor,
                                           default_seed_index(coords))
            coords_l = coords[select]
        k_eff = min(cfg.k[level - 1], coords_l.shape[0])
        state_coords = None if prev_coords is None else prev_coords[level - 1]
        hoods = spatio_temporal_neighborhoods(coords_l, state_coords, k_eff)
        plans.append(LevelPlan(
            coords=coords_l, select=None if select is None else GatherIndex(select),
            k=k_eff,
            spatial_idx=GatherIndex(hoods.spatial.indices),
            spatial_offsets=hoods.spatial_offsets,
            temporal_idx=(None if hoods.temporal is None
                          else GatherIndex(hoods.temporal.indices)),
            temporal_offsets=hoods.temporal_offsets))
        coords = coords_l
    return plans


def _build_stage_plans(frame: np.ndarray, level_coords: list[np.ndarray],
                       cfg: ArchitectureConfig) -> list[StagePlan]:
    stages: list[StagePlan] = []
    if cfg.variant is Variant.WITHOUT_COMBINATION:
        src = level_coords[-1]
        idx, w = idw_weights(src, frame, min(FP_INTERP_K, src.shape[0]))
        return [StagePlan(GatherIndex(idx), w)]
    src = level_coords[-1]
    for level in range(cfg.levels - 1, -1, -1):
        dst = frame if level == 0 else level_coords[level - 1]
        idx, w = idw_weights(src, dst, min(FP_INTERP_K, src.shape[0]))
        stages.append(StagePlan(GatherIndex(idx), w))
        src = dst
    return stages


def build_sequence_plan(seq, cfg: ArchitectureConfig,
                        n_frames: int | None = None) -> list[FramePlan]:
    """Precompute all parameter-independent geometry of a sequence.

    Sampling chains, neighbor indices, offsets, and interpolation stencils
    depend only on the coordinates, so a training loop that revisits the
    same sequence can reuse them across every step.
    """
    count = seq.n_frames if n_frames is None else n_frames
    plans: list[FramePlan] = []
    prev_coords: list[np.ndarray] | None = None
    for t in range(count):
        frame = seq.frames[t]
        levels = _build_level_plans(frame, cfg, prev_coords)
        stages = _build_stage_plans(frame, [lp.coords for lp in levels], cfg)
        plans.append(FramePlan(levels=levels, stages=stages))
        prev_coords = [lp.coords for lp in levels]
    return plans


def de_forward(frame, states: list[CellState], cfg: ArchitectureConfig,
               params: ParamStore, plan: FramePlan | None = None):
    """Run the extraction hierarchy over one frame.

    Per-level neighborhood sizes are clamped to the level's point count so
    deep hierarchies on small clouds stay valid. Passing a precomputed
    :class:`FramePlan` skips all geometry work; the result is identical.

    Returns:
        ``(levels, new_states)`` where ``levels[l-1]`` holds level ``l``'s
        coordinates and features.
    """
    if len(states) != cfg.levels:
        raise ValueError(f"expected {cfg.levels} states, got {len(states)}")
    if plan is not None:
        return _de_forward_planned(states, cfg, params, plan)
    pts = as_points(frame)
    factor = cfg.effective_factor
    levels: list[LevelOutput] = []
    new_states: list[CellState] = []
    coords, feats = pts, None
    for level in range(1, cfg.levels + 1):
        chain_feats = feats if _stacked(cfg.variant) else None
        coords_l, carried = sg_module(coords, chain_feats, factor)
        k_eff = min(cfg.k[level - 1], coords_l.shape[0])
        out = cell_step(coords_l, carried, states[level - 1], k_eff, params,
                        f"de.level{level}")
        levels.append(LevelOutput(coords_l, out.feats))
        new_states.append(out.new_state)
        coords, feats = coords_l, out.feats
    return levels, new_states


def _de_forward_planned(states, cfg, params, plan: FramePlan):
    levels: list[LevelOutput] = []
    new_states: list[CellState] = []
    feats: Tensor | None = None
    for level in range(1, cfg.levels + 1):
        lp = plan.levels[level - 1]
        state = states[level - 1]
        if (lp.temporal_idx is None) != state.is_empty:
            raise ValueError("frame plan does not match the recurrent state")
        if _stacked(cfg.variant) and feats is not None:
            in_feats = feats if lp.select is None else gather_rows(feats, lp.select)
        else:
            in_feats = None
        d_out = params[f"de.level{level}.update.mlp0.bias"].values.shape[0]
        if state.is_empty:
            state_feats = Tensor(np.zeros((lp.coords.shape[0], lp.k, d_out)))
        else:
            state_feats = gather_rows(state.feats, lp.temporal_idx)
        out = run_cell(lp.spatial_offsets, lp.spatial_idx, lp.temporal_offsets,
                       state_feats, in_feats, params, f"de.level{level}")
        levels.append(LevelOutput(lp.coords, out))
        new_states.append(CellState(lp.coords, out))
        feats = out
    return levels, new_states


def interpolate_features(src_coords: np.ndarray, src_feats: Tensor,
                         dst_coords: np.ndarray) -> Tensor:
    """Differentiable inverse-distance interpolation of level features."""
    k = min(FP_INTERP_K, src_coords.shape[0])
    idx, w = idw_weights(src_coords, dst_coords, k)
    return _interpolate_cached(src_feats, StagePlan(idx, w))


def _interpolate_cached(src_feats: Tensor, stage: StagePlan) -> Tensor:
    gathered = gather_rows(src_feats, stage.idx)
    return tensor_sum(gathered * Tensor(stage.weights[..., None]), axis=1)


def fp_forward(frame, levels: list[LevelOutput], cfg: ArchitectureConfig,
               params: ParamStore, plan: FramePlan | None = None) -> Tensor:
    """Combine level features into one full-resolution feature map.

    Walks the hierarchy top-down: interpolate the working features onto the
    next level's coordinates, concatenate that level's own features, and
    refine through the stage's point network (the input frame acts as level
    zero with no features). The without-combination variant instead
    interpolates only the top level straight to full resolution.
    """
    pts = as_points(frame)
    if len(levels) != cfg.levels:
        raise ValueError(f"expected {cfg.levels} level outputs, got {len(levels)}")
    stages = None if plan is None else plan.stages
    if cfg.variant is Variant.WITHOUT_COMBINATION:
        top = levels[-1]
        if stages is None:
            interp = interpolate_features(top.coords, top.feats, pts)
        else:
            interp = _interpolate_cached(top.feats, stages[0])
        return shared_mlp_forward(interp, cfg.fp_widths[-1], params, "fp.stage0")
    work_coords, work = levels[-1].coords, levels[-1].feats
    for i, level in enumerate(range(cfg.levels - 1, -1, -1)):
        dst = pts if level == 0 else levels[level - 1].coords
        if stages is None:
            interp = interpolate_features(work_coords, work, dst)
        else:
            interp = _interpolate_cached(work, stages[i])
        x = [interp] if level == 0 else [interp, levels[level - 1].feats]
        work = shared_mlp_forward_parts(x, cfg.fp_widths[cfg.levels - 1 - level],
                                        params, f"fp.stage{level}")
        work_coords = dst
    return work


def predict_next(frame, final_feats: Tensor, params: ParamStore):
    """Map final features to per-point motion and the predicted next frame.

    The head is a plain affine map (no activation); the returned prediction
    preserves the input point order.
    """
    pts = as_points(frame)
    if final_feats.values.shape[0] != pts.shape[0]:
        raise ValueError("final features must have one row per input point")
    motion = affine(final_feats, params["head.weight"], params["head.bias"])
    predicted = Tensor(pts) + motion
    return motion, predicted


def forward_step(frame, states: list[CellState], cfg: ArchitectureConfig,
                 params: ParamStore, plan: FramePlan | None = None) -> ForwardResult:
    """One full pass: extraction, propagation, and prediction."""
    levels, new_states = de_forward(frame, states, cfg, params, plan)
    final = fp_forward(frame, levels, cfg, params, plan)
    motion, predicted = predict_next(frame, final, params)
    return ForwardResult(levels, new_states, final, motion, predicted)


def rollout(seq, cfg: ArchitectureConfig, params: ParamStore, warmup: int,
            horizon: int) -> list[np.ndarray]:
    """Teacher-forced one-step predictions over a sequence.

    The first ``warmup`` frames only advance the recurrent states; each of
    the next ``horizon`` ground-truth frames is then fed in turn and the
    one-step-ahead prediction recorded.
    """
    frames = seq.frames
    if warmup < 1:
        raise ValueError(f"warmup must be >= 1, got {warmup}")
    if horizon < 0 or warmup + horizon > len(frames):
        raise ValueError(
            f"warmup + horizon must fit in the {len(frames)}-frame sequence")
    preds: list[np.ndarray] = []
    plan = build_sequence_plan(seq, cfg, warmup + horizon)
    with no_grad():
        states = reset_state(cfg.levels)
        for t in range(warmup):
            _, states = de_forward(frames[t], states, cfg, params, plan[t])
        for t in range(warmup, warmup + horizon):
            result = forward_step(frames[t], states, cfg, params, plan[t])
            states = result.states
            preds.append(result.predicted.values.copy())
    return preds
