"""Loss assembly, the optimization loop, and the evaluation harness."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .data import PointCloudSequence
from .diffcore import Adam, ParamStore, Tensor, backward, gather_rows
from .geometry import farthest_point_sample
from .metrics import (
    CSV_HEADER,
    MetricReport,
    chamfer_and_emd,
    chamfer_distance,
    emd,
    metric_report,
)
from .network import (
    ArchitectureConfig,
    build_params,
    build_sequence_plan,
    de_forward,
    forward_step,
    rollout,
)
from .cell import reset_state

LOSS_CSV_HEADER = "step,loss,cd,emd"


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run."""

    steps: int = 2000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lambda_emd: float = 1.0
    warmup_frames: int = 1
    eval_every: int = 0   # progress-print cadence; 0 keeps the loop silent
    seed: int = 0
    emd_subsample_cap: int = 512

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.lambda_emd < 0:
            raise ValueError("lambda_emd must be non-negative")
        if self.warmup_frames < 1:
            raise ValueError("warmup_frames must be >= 1")

    _KEYS = ("steps", "lr", "beta1", "beta2", "eps", "lambda_emd",
             "warmup_frames", "eval_every", "seed", "emd_subsample_cap")

    def to_json_dict(self) -> dict:
        return {key: getattr(self, key) for key in self._KEYS}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "TrainConfig":
        unknown = set(doc) - set(cls._KEYS)
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**doc)


@dataclass
class LossCurvePoint:
    step: int
    loss: float
    cd: float
    emd: float

    def csv_row(self) -> str:
        return f"{self.step},{self.loss:.17g},{self.cd:.17g},{self.emd:.17g}"


@dataclass
class FrameMetrics:
    sequence_id: str
    frame: int
    report: MetricReport


@dataclass
class EvalResult:
    """Per-frame metric rows plus per-sequence and overall means."""

    frames: list[FrameMetrics]
    per_sequence: dict[str, tuple[float, float, float]]
    aggregate: tuple[float, float, float]


def _subsampled_emd(pred, target, cap: int):
    """EMD over FPS-reduced clouds, keeping gradients through the kept rows."""
    pred_np = pred.values if isinstance(pred, Tensor) else np.asarray(pred)
    target_np = np.asarray(target)
    idx_p = farthest_point_sample(pred_np, min(cap, pred_np.shape[0]))
    idx_t = farthest_point_sample(target_np, min(cap, target_np.shape[0]))
    sub_pred = gather_rows(pred, idx_p) if isinstance(pred, Tensor) else pred_np[idx_p]
    return emd(sub_pred, target_np[idx_t])


def loss(pred, target, lambda_emd: float = 1.0, emd_subsample_cap: int = 512):
    """Chamfer distance plus ``lambda_emd`` times the Earth Mover's Distance.

    Differentiable w.r.t. ``pred`` when it is a tensor. Clouds beyond the
    subsample cap contribute an FPS-reduced EMD term (gradients still flow
    through the retained points).
    """
    pred_np = pred.values if isinstance(pred, Tensor) else np.asarray(pred)
    target_np = np.asarray(target)
    if lambda_emd == 0:
        return chamfer_distance(pred, target)
    if pred_np.shape[0] != target_np.shape[0]:
        raise ValueError("loss with lambda_emd > 0 requires equal cardinalities")
    if pred_np.shape[0] > emd_subsample_cap:
        return (chamfer_distance(pred, target)
                + lambda_emd * _subsampled_emd(pred, target, emd_subsample_cap))
    cd_term, emd_term = chamfer_and_emd(pred, target)
    return cd_term + lambda_emd * emd_term


def _mean3(rows: Sequence[tuple[float, float, float]]) -> tuple[float, float, float]:
    arr = np.asarray(rows, dtype=np.float64)
    return tuple(arr.mean(axis=0))


def train(arch_cfg: ArchitectureConfig, sequences: Sequence[PointCloudSequence],
          train_cfg: TrainConfig, quiet: bool = True):
    """Train one network over a pool of sequences.

    Each step picks a sequence round-robin, resets the recurrent states,
    rolls teacher-forced one-step predictions over it, averages the frame
    losses, and applies one Adam update. Fully deterministic given the
    configs.

    Returns:
        ``(params, curve)`` — the trained store and one
        :class:`LossCurvePoint` per step.
    """
    if not sequences:
        raise ValueError("need at least one training sequence")
    for seq in sequences:
        # One warmup span plus at least one (input, target) pair.
        if seq.n_frames < train_cfg.warmup_frames + 2:
            raise ValueError(
                f"sequence {seq.name or '?'} has {seq.n_frames} frames; need at "
                f"least warmup_frames + 2 = {train_cfg.warmup_frames + 2}")
    params = build_params(arch_cfg)
    opt = Adam(params, lr=train_cfg.lr, beta1=train_cfg.beta1,
               beta2=train_cfg.beta2, eps=train_cfg.eps)
    # All sampling chains, neighborhoods, and interpolation stencils are
    # parameter independent, so compute them once per sequence.
    plans = [build_sequence_plan(seq, arch_cfg, seq.n_frames - 1)
             for seq in sequences]
    curve: list[LossCurvePoint] = []
    with threadpool_limits(limits=1):
        # The matmuls here are far too small for threaded BLAS to pay off.
        _train_loop(arch_cfg, sequences, train_cfg, params, opt, plans, curve,
                    quiet)
    return params, curve


def _train_loop(arch_cfg, sequences, train_cfg, params, opt, plans, curve,
                quiet) -> None:
    for step in range(train_cfg.steps):
        seq = sequences[step % len(sequences)]
        plan = plans[step % len(sequences)]
        states = reset_state(arch_cfg.levels)
        for t in range(train_cfg.warmup_frames):
            _, states = de_forward(seq.frames[t], states, arch_cfg, params,
                                   plan[t])
        frame_losses = []
        cd_vals = []
        emd_vals = []
        for t in range(train_cfg.warmup_frames, seq.n_frames - 1):
            result = forward_step(seq.frames[t], states, arch_cfg, params,
                                  plan[t])
            states = result.states
            target = seq.frames[t + 1]
            if train_cfg.lambda_emd > 0 and \
                    seq.n_points <= train_cfg.emd_subsample_cap:
                cd_t, emd_t = chamfer_and_emd(result.predicted, target)
                emd_vals.append(float(emd_t.values))
                frame_loss = cd_t + train_cfg.lambda_emd * emd_t
            elif train_cfg.lambda_emd > 0:
                cd_t = chamfer_distance(result.predicted, target)
                emd_t = _subsampled_emd(result.predicted, target,
                                        train_cfg.emd_subsample_cap)
                emd_vals.append(float(emd_t.values))
                frame_loss = cd_t + train_cfg.lambda_emd * emd_t
            else:
                cd_t = chamfer_distance(result.predicted, target)
                frame_loss = cd_t
            cd_vals.append(float(cd_t.values))
            frame_losses.append(frame_loss)
        total = frame_losses[0]
        for extra in frame_losses[1:]:
            total = total + extra
        total = total * (1.0 / len(frame_losses))
        params.zero_grad()
        backward(total)
        opt.step()
        curve.append(LossCurvePoint(
            step=step, loss=float(total.values),
            cd=float(np.mean(cd_vals)),
            emd=float(np.mean(emd_vals)) if emd_vals else float("nan")))
        if not quiet and train_cfg.eval_every and (step + 1) % train_cfg.eval_every == 0:
            print(f"step {step + 1}/{train_cfg.steps} loss {curve[-1].loss:.6g}")


def write_loss_curve(curve: Sequence[LossCurvePoint], path) -> None:
    rows = [LOSS_CSV_HEADER] + [p.csv_row() for p in curve]
    Path(path).write_text("\n".join(rows) + "\n")


def _eval_one(params, cfg, seq, warmup, top_percent, emd_cap) -> list[FrameMetrics]:
    horizon = seq.n_frames - 1 - warmup
    if horizon < 1:
        raise ValueError(
            f"sequence {seq.name or '?'} is too short to evaluate with warmup={warmup}")
    preds = rollout(seq, cfg, params, warmup, horizon)
    rows = []
    for i, pred in enumerate(preds):
        t = warmup + i
        report = metric_report(pred, seq.frames[t + 1], emd_cap=emd_cap,
                               top_percent=top_percent)
        rows.append(FrameMetrics(seq.name or "sequence", t + 1, report))
    return rows


def default_threads() -> int:
    """Worker count for evaluation, capped by ``PCHIER_THREADS``."""
    try:
        return max(1, int(os.environ.get("PCHIER_THREADS", "1")))
    except ValueError:
        return 1


def evaluate(params: ParamStore, arch_cfg: ArchitectureConfig,
             sequences: Sequence[PointCloudSequence], warmup: int = 1,
             top_percent: float = 5.0, emd_cap: int = 512,
             threads: int | None = None) -> EvalResult:
    """Teacher-forced one-step evaluation over held-out sequences.

    Sequences may be evaluated by a small thread pool (parameters are
    frozen); results are merged in input order either way.
    """
    threads = default_threads() if threads is None else max(1, threads)
    with threadpool_limits(limits=1):
        if threads > 1 and len(sequences) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                per_seq_rows = list(pool.map(
                    lambda s: _eval_one(params, arch_cfg, s, warmup, top_percent, emd_cap),
                    sequences))
        else:
            per_seq_rows = [_eval_one(params, arch_cfg, s, warmup, top_percent, emd_cap)
                            for s in sequences]
    frames = [row for rows in per_seq_rows for row in rows]
    per_sequence = {}
    for seq, rows in zip(sequences, per_seq_rows):
        per_sequence[seq.name or "sequence"] = _mean3(
            [(r.report.cd, r.report.emd, r.report.cd_top5) for r in rows])
    aggregate = _mean3(list(per_sequence.values()))
    return EvalResult(frames=frames, per_sequence=per_sequence, aggregate=aggregate)


def copy_last_baseline(seq: PointCloudSequence, warmup: int = 1,
                       top_percent: float = 5.0,
                       emd_cap: int = 512) -> list[FrameMetrics]:
    """Metrics of the parameter-free predictor that repeats the last frame.

    Evaluated over the same target frames as :func:`evaluate` so the rows
    are directly comparable.
    """
    if seq.n_frames < 2:
        raise ValueError("copy-last baseline needs at least two frames")
    rows = []
    for t in range(warmup, seq.n_frames - 1):
        report = metric_report(seq.frames[t], seq.frames[t + 1],
                               emd_cap=emd_cap, top_percent=top_percent)
        rows.append(FrameMetrics(seq.name or "sequence", t + 1, report))
    return rows


def baseline_aggregate(sequences: Sequence[PointCloudSequence], warmup: int = 1,
                       top_percent: float = 5.0,
                       emd_cap: int = 512) -> tuple[float, float, float]:
    per_seq = []
    for seq in sequences:
        rows = copy_last_baseline(seq, warmup, top_percent, emd_cap)
        per_seq.append(_mean3([(r.report.cd, r.report.emd, r.report.cd_top5)
                               for r in rows]))
    return _mean3(per_seq)


def write_metrics_csv(result: EvalResult, baseline: tuple[float, float, float],
                      path) -> None:
    """Serialize evaluation rows, per-sequence means, the aggregate, and the
    copy-last baseline into one CSV."""
    lines = [CSV_HEADER]
    for fm in result.frames:
        lines.append(fm.report.csv_row(fm.sequence_id, fm.frame))
    for seq_id, (cd, emd_val, top) in result.per_sequence.items():
        lines.append(f"{seq_id},mean,{cd:.17g},{emd_val:.17g},{top:.17g}")
    cd, emd_val, top = result.aggregate
    lines.append(f"aggregate,mean,{cd:.17g},{emd_val:.17g},{top:.17g}")
    cd, emd_val, top = baseline
    lines.append(f"copy_last_input,mean,{cd:.17g},{emd_val:.17g},{top:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")
