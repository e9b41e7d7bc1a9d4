"""Command-line entry point: generate | train | eval | decompose.

Every command writes a ``run_manifest.json`` beside its outputs recording
the resolved configuration, seeds, paths, and tool version, so an
invocation can be reproduced exactly. Exit codes: 0 success, 1 runtime or
I/O failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import __version__
from .analysis import decompose_motion, export_motion, motion_variance_profile, write_variance_summary
from .cell import reset_state
from .data import MotionPreset, PRESET_NAMES, generate_sequence, load_sequence, save_sequence
from .diffcore import load_checkpoint, save_checkpoint
from .network import ArchitectureConfig, VARIANT_NAMES, de_forward
from .training import (
    TrainConfig,
    baseline_aggregate,
    default_threads,
    evaluate,
    train,
    write_loss_curve,
    write_metrics_csv,
)


class CommandError(Exception):
    """Runtime failure that should exit with status 1."""


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise CommandError(f"config file not found: {p}")
    doc = json.loads(p.read_text())
    if "command" in doc and "config" in doc:
        doc = doc["config"]  # accept a previous run manifest verbatim
    unknown = set(doc) - {"architecture", "training", "data"}
    if unknown:
        raise CommandError(f"unknown top-level config keys: {sorted(unknown)}")
    return doc


def _resolve_architecture(config: dict, args) -> ArchitectureConfig:
    doc = dict(config.get("architecture", {}))
    if getattr(args, "variant", None):
        doc["variant"] = args.variant
    if getattr(args, "seed", None) is not None:
        doc["seed"] = args.seed
    return ArchitectureConfig.from_json_dict(doc)


def _resolve_training(config: dict, args) -> TrainConfig:
    doc = dict(config.get("training", {}))
    for flag, key in (("steps", "steps"), ("lr", "lr"),
                      ("lambda_emd", "lambda_emd"),
                      ("warmup", "warmup_frames"),
                      ("eval_every", "eval_every")):
        value = getattr(args, flag, None)
        if value is not None:
            doc[key] = value
    if getattr(args, "seed", None) is not None:
        doc["seed"] = args.seed
    return TrainConfig.from_json_dict(doc)


def _write_manifest(out_dir: Path, command: str, config: dict, inputs: dict,
                    outputs: list[str], seed, started: float) -> None:
    manifest = {
        "command": command,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "seed": seed,
        "version": __version__,
        "duration_seconds": time.monotonic() - started,
    }
    (out_dir / "run_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _parse_seed_spec(spec: str) -> list[int]:
    seeds: list[int] = []
    for part in spec.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    if not seeds:
        raise CommandError(f"no seeds in spec {spec!r}")
    return seeds


def _load_dataset(data_dir: Path):
    if not data_dir.is_dir():
        raise CommandError(f"dataset directory not found: {data_dir}")
    seq_dirs = sorted(p for p in data_dir.iterdir()
                      if p.is_dir() and (p / "manifest.json").is_file())
    if not seq_dirs:
        raise CommandError(f"no sequence directories under {data_dir}")
    try:
        return [load_sequence(p) for p in seq_dirs]
    except ValueError as exc:
        raise CommandError(str(exc)) from exc


def cmd_generate(args) -> int:
    started = time.monotonic()
    config = _load_config_file(args.config).get("data", {})

    def resolve(flag, key, default):
        value = getattr(args, flag)
        if value is not None:
            return value
        return config.get(key, default)

    preset_name = resolve("preset", "preset", None)
    if preset_name is None:
        print("error: --preset is required (or a config with a data.preset)",
              file=sys.stderr)
        return 2
    points = resolve("points", "points", 256)
    frames = resolve("frames", "frames", 12)
    noise = resolve("noise", "noise", 0.0)
    dt = resolve("dt", "dt", 1.0)
    spec = resolve("seeds", "seeds", None)
    if spec is None:
        spec = str(args.seed) if args.seed is not None else "0"
    seeds = _parse_seed_spec(str(spec))

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for seed in seeds:
        preset = MotionPreset(name=preset_name, noise_sigma=noise, seed=seed)
        seq = generate_sequence(preset, n_points=points, n_frames=frames)
        seq.dt = dt
        target = out_dir / seq.name
        save_sequence(seq, target)
        outputs.append(seq.name)
        if not args.quiet:
            print(f"wrote {target} ({seq.n_frames} frames, {seq.n_points} points)")
    data_cfg = {"preset": preset_name, "points": points, "frames": frames,
                "seeds": str(spec), "noise": noise, "dt": dt}
    _write_manifest(out_dir, "generate", {"data": data_cfg}, {}, outputs,
                    seeds, started)
    return 0


def cmd_train(args) -> int:
    started = time.monotonic()
    config = _load_config_file(args.config)
    arch_cfg = _resolve_architecture(config, args)
    train_cfg = _resolve_training(config, args)
    sequences = _load_dataset(Path(args.data))
    try:
        params, curve = train(arch_cfg, sequences, train_cfg, quiet=args.quiet)
    except ValueError as exc:
        raise CommandError(str(exc)) from exc
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, out_dir / "checkpoint.json")
    write_loss_curve(curve, out_dir / "loss.csv")
    arch_cfg.save(out_dir / "architecture.json")
    _write_manifest(out_dir, "train",
                    {"architecture": arch_cfg.to_json_dict(),
                     "training": train_cfg.to_json_dict()},
                    {"data": str(args.data)},
                    ["checkpoint.json", "checkpoint.bin", "loss.csv",
                     "architecture.json"],
                    train_cfg.seed, started)
    if not args.quiet:
        print(f"trained {arch_cfg.variant.value} for {train_cfg.steps} steps; "
              f"final loss {curve[-1].loss:.6g}")
    return 0


def _load_trained(args):
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.is_file():
        raise CommandError(f"checkpoint not found: {ckpt_path}")
    config = _load_config_file(args.config)
    if "architecture" in config:
        arch_cfg = ArchitectureConfig.from_json_dict(config["architecture"])
    else:
        arch_path = ckpt_path.parent / "architecture.json"
        if not arch_path.is_file():
            raise CommandError(
                f"no architecture.json next to {ckpt_path}; pass --config")
        arch_cfg = ArchitectureConfig.load(arch_path)
    return load_checkpoint(ckpt_path), arch_cfg


def cmd_eval(args) -> int:
    started = time.monotonic()
    params, arch_cfg = _load_trained(args)
    sequences = _load_dataset(Path(args.data))
    try:
        result = evaluate(params, arch_cfg, sequences, warmup=args.warmup,
                          threads=default_threads())
        baseline = baseline_aggregate(sequences, warmup=args.warmup)
    except ValueError as exc:
        raise CommandError(str(exc)) from exc
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(result, baseline, out_dir / "metrics.csv")
    _write_manifest(out_dir, "eval",
                    {"architecture": arch_cfg.to_json_dict()},
                    {"checkpoint": str(args.checkpoint), "data": str(args.data)},
                    ["metrics.csv"], arch_cfg.seed, started)
    if not args.quiet:
        cd, emd_val, top = result.aggregate
        print(f"model aggregate: cd {cd:.6g}  emd {emd_val:.6g}  cd_top5 {top:.6g}")
        cd, emd_val, top = baseline
        print(f"copy-last input: cd {cd:.6g}  emd {emd_val:.6g}  cd_top5 {top:.6g}")
    return 0


def cmd_decompose(args) -> int:
    started = time.monotonic()
    params, arch_cfg = _load_trained(args)
    seq_dir = Path(args.sequence)
    if not (seq_dir / "manifest.json").is_file():
        raise CommandError(f"sequence directory not found: {seq_dir}")
    try:
        seq = load_sequence(seq_dir)
    except ValueError as exc:
        raise CommandError(str(exc)) from exc
    if not 0 <= args.frame < seq.n_frames:
        raise CommandError(
            f"frame {args.frame} out of range for a {seq.n_frames}-frame sequence")

    states = reset_state(arch_cfg.levels)
    levels = None
    for t in range(args.frame + 1):
        levels, states = de_forward(seq.frames[t], states, arch_cfg, params)
    decomp = decompose_motion(seq.frames[args.frame], levels, params, arch_cfg)
    profile = motion_variance_profile(decomp, seq.labels)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame = seq.frames[args.frame]
    outputs = []
    for i, contribution in enumerate(decomp.contributions):
        csv_path, ply_path = export_motion(frame, [contribution],
                                           out_dir / f"decomp_level{i + 1}")
        outputs += [csv_path.name, ply_path.name]
    csv_path, ply_path = export_motion(frame, [decomp.full], out_dir / "decomp_full")
    outputs += [csv_path.name, ply_path.name]
    csv_path, _ = export_motion(frame, [decomp.bias_field], out_dir / "bias_field")
    outputs.append(csv_path.name)
    summary = write_variance_summary(decomp, profile, out_dir / "variance.json")
    outputs.append("variance.json")
    _write_manifest(out_dir, "decompose",
                    {"architecture": arch_cfg.to_json_dict()},
                    {"checkpoint": str(args.checkpoint),
                     "sequence": str(args.sequence), "frame": args.frame},
                    outputs, arch_cfg.seed, started)
    if not args.quiet:
        status = summary["soft_check"]["status"]
        print(f"residual {decomp.residual:.6g}; global-vs-local check: {status}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pchier",
        description="Hierarchical dynamic point cloud prediction and analysis")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--config", default=None, help="JSON config or run manifest")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("generate", help="write synthetic sequence datasets")
    p.add_argument("--preset", choices=PRESET_NAMES, default=None)
    p.add_argument("--points", type=int, default=None)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--seeds", default=None,
                   help="e.g. 0..9 or 0,2,5 (default: --seed, else 0)")
    p.add_argument("--noise", type=float, default=None)
    p.add_argument("--dt", type=float, default=None)
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one architecture variant")
    p.add_argument("--variant", choices=VARIANT_NAMES, default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--lambda-emd", dest="lambda_emd", type=float, default=None)
    p.add_argument("--warmup", type=int, default=None)
    p.add_argument("--eval-every", dest="eval_every", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--warmup", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("decompose", help="per-level motion decomposition")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sequence", required=True, help="one sequence directory")
    p.add_argument("--frame", type=int, required=True)
    common(p)
    p.set_defaults(func=cmd_decompose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())
