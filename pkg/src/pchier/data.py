"""Synthetic dynamic point cloud generation and sequence file I/O.

Three motion presets cover the global/local structure the prediction task
cares about: a rigidly translating blob, a translating body with a rotating
limb, and a walker whose two limbs counter-oscillate about hinges carried
along with the torso. Point geometry is drawn from the preset's seed; the
kinematic formulas themselves are seed-independent, so every sequence of a
preset obeys the same closed-form displacement field.

Sequences serialize as one ASCII PLY per frame plus a ``manifest.json``.
Coordinates are written with 17 significant digits so a round trip
reproduces them exactly.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .geometry import as_points

PRESET_NAMES = ("rigid_translation", "translating_rotor", "articulated_walker")

_MANIFEST_KEYS = ("n_frames", "n_points", "dt", "preset", "seed")


@dataclass(frozen=True)
class MotionPreset:
    """Kinematic recipe for one synthetic sequence."""

    name: str
    velocity: tuple[float, float, float] = (0.04, 0.0, 0.0)
    omega: float = 0.2                 # limb spin, radians per frame
    swing_amplitude: float = 0.5       # walker swing, radians
    swing_period: float = 8.0          # walker swing period, frames
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.name not in PRESET_NAMES:
            raise ValueError(
                f"unknown preset {self.name!r}; expected one of {PRESET_NAMES}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


@dataclass
class PointCloudSequence:
    """Time-ordered frames with stable per-point identity.

    Point ``i`` refers to the same material point in every frame. ``labels``
    carries the generator's segment ground truth (0 = body/torso, higher
    values = limbs) when available.
    """

    frames: list[np.ndarray]
    dt: float = 1.0
    labels: np.ndarray | None = None
    name: str = ""
    preset: str = ""
    seed: int = 0

    def __post_init__(self):
        if not self.frames:
            raise ValueError("a sequence needs at least one frame")
        self.frames = [as_points(f, f"frame {i}") for i, f in enumerate(self.frames)]
        n = self.frames[0].shape[0]
        for i, f in enumerate(self.frames):
            if f.shape[0] != n:
                raise ValueError(
                    f"frame {i} has {f.shape[0]} points, expected {n}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise ValueError("labels must have one entry per point")

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def n_points(self) -> int:
        return self.frames[0].shape[0]


def _rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _sphere_blob(rng, n: int, center, radius: float) -> np.ndarray:
    dirs = rng.normal(size=(n, 3))
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    norms[norms < 1e-12] = 1.0
    return np.asarray(center) + radius * dirs / norms

# Hinge of the rotor limb and its blob center, in the body frame.
ROTOR_HINGE = np.array([1.2, 0.0, 0.0])
ROTOR_LIMB_CENTER = np.array([1.55, 0.0, 0.0])
ROTOR_LIMB_FRACTION = 0.3

# Walker hinges sit on the torso; limbs hang below and swing about y.
WALKER_HINGES = (np.array([0.0, 0.45, -0.7]), np.array([0.0, -0.45, -0.7]))
WALKER_LIMB_OFFSET = np.array([0.0, 0.0, -0.5])


def rotor_limb_displacement(points_t: np.ndarray, hinge_t: np.ndarray,
                            velocity: np.ndarray, omega: float) -> np.ndarray:
    """Closed-form per-frame displacement of the rotor limb.

    ``v + (R_omega - I)(x - hinge_t)`` for limb points at frame ``t``.
    """
    rel = points_t - hinge_t
    return velocity + rel @ (_rot_z(omega).T - np.eye(3))


def generate_sequence(preset: MotionPreset, n_points: int = 256,
                      n_frames: int = 12) -> PointCloudSequence:
    """Generate one synthetic sequence.

    Args:
        preset: motion recipe, including seed and noise level.
        n_points: total points, at least 8.
        n_frames: frames, at least 2.

    Returns:
        A labelled :class:`PointCloudSequence`; per-point labels mark blob
        membership (0 = body/torso, 1/2 = limbs).
    """
    if n_points < 8:
        raise ValueError(f"n_points must be >= 8, got {n_points}")
    if n_frames < 2:
        raise ValueError(f"n_frames must be >= 2, got {n_frames}")
    rng = np.random.default_rng(preset.seed)
    v = np.asarray(preset.velocity, dtype=np.float64)

    if preset.name == "rigid_translation":
        base = _sphere_blob(rng, n_points, (0.0, 0.0, 0.0), 1.0)
        labels = np.zeros(n_points, dtype=np.int64)
        def frame_at(t: int) -> np.ndarray:
            return base + t * v

    elif preset.name == "translating_rotor":
        n_limb = max(1, int(round(n_points * ROTOR_LIMB_FRACTION)))
        n_body = n_points - n_limb
        body = _sphere_blob(rng, n_body, (0.0, 0.0, 0.0), 1.0)
        limb = _sphere_blob(rng, n_limb, ROTOR_LIMB_CENTER, 0.35)
        labels = np.concatenate([np.zeros(n_body, dtype=np.int64),
                                 np.ones(n_limb, dtype=np.int64)])
        limb_rel = limb - ROTOR_HINGE
        def frame_at(t: int) -> np.ndarray:
            shift = t * v
            rot = _rot_z(preset.omega * t)
            return np.concatenate([body + shift,
                                   ROTOR_HINGE + shift + limb_rel @ rot.T])

    else:  # articulated_walker
        n_limb = n_points // 4
        n_torso = n_points - 2 * n_limb
        torso = _sphere_blob(rng, n_torso, (0.0, 0.0, 0.0), 0.8)
        limbs = [_sphere_blob(rng, n_limb, h + WALKER_LIMB_OFFSET, 0.3)
                 for h in WALKER_HINGES]
        labels = np.concatenate([np.zeros(n_torso, dtype=np.int64),
                                 np.full(n_limb, 1, dtype=np.int64),
                                 np.full(n_limb, 2, dtype=np.int64)])
        limb_rels = [limb - h for limb, h in zip(limbs, WALKER_HINGES)]
        def frame_at(t: int) -> np.ndarray:
            shift = t * v
            angle = preset.swing_amplitude * math.sin(
                2.0 * math.pi * t / preset.swing_period)
            parts = [torso + shift]
            for sign, hinge, rel in zip((1.0, -1.0), WALKER_HINGES, limb_rels):
                rot = _rot_y(sign * angle)
                parts.append(hinge + shift + rel @ rot.T)
            return np.concatenate(parts)

    frames = []
    for t in range(n_frames):
        f = frame_at(t)
        if preset.noise_sigma > 0:
            f = f + rng.normal(0.0, preset.noise_sigma, size=f.shape)
        frames.append(f)
    return PointCloudSequence(frames=frames, labels=labels, preset=preset.name,
                              seed=preset.seed,
                              name=f"{preset.name}_seed{preset.seed:03d}")


def _write_ply(path: Path, points: np.ndarray, labels: np.ndarray | None) -> None:
    lines = ["ply", "format ascii 1.0", f"element vertex {points.shape[0]}",
             "property double x", "property double y", "property double z"]
    if labels is not None:
        lines.append("property int label")
    lines.append("end_header")
    for i, (x, y, z) in enumerate(points):
        row = f"{x:.17g} {y:.17g} {z:.17g}"
        if labels is not None:
            row += f" {labels[i]}"
        lines.append(row)
    path.write_text("\n".join(lines) + "\n")


def _read_ply(path: Path) -> tuple[np.ndarray, np.ndarray | None]:
    lines = path.read_text().splitlines()
    expected = ["ply", "format ascii 1.0"]
    if len(lines) < 7 or lines[0] != expected[0] or lines[1] != expected[1]:
        raise ValueError(f"malformed PLY header in {path.name}")
    if not lines[2].startswith("element vertex "):
        raise ValueError(f"malformed PLY header in {path.name}: missing vertex element")
    try:
        n = int(lines[2].split()[-1])
    except ValueError as exc:
        raise ValueError(f"malformed PLY header in {path.name}: bad vertex count") from exc
    props = ["property double x", "property double y", "property double z"]
    if lines[3:6] != props:
        raise ValueError(f"malformed PLY header in {path.name}: coordinate properties")
    cursor = 6
    has_labels = False
    if lines[cursor] == "property int label":
        has_labels = True
        cursor += 1
    if lines[cursor] != "end_header":
        raise ValueError(f"malformed PLY header in {path.name}: missing end_header")
    cursor += 1
    body = lines[cursor:cursor + n]
    if len(body) != n:
        raise ValueError(f"{path.name} declares {n} vertices but has {len(body)}")
    cols = 4 if has_labels else 3
    data = np.array([line.split() for line in body], dtype=object)
    if data.shape != (n, cols):
        raise ValueError(f"{path.name} has malformed vertex rows")
    points = data[:, :3].astype(np.float64)
    labels = data[:, 3].astype(np.int64) if has_labels else None
    return points, labels


def save_sequence(seq: PointCloudSequence, directory) -> None:
    """Write one ASCII PLY per frame plus the sequence manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(seq.frames):
        _write_ply(directory / f"frame_{t:04d}.ply", frame, seq.labels)
    manifest = {"n_frames": seq.n_frames, "n_points": seq.n_points,
                "dt": seq.dt, "preset": seq.preset, "seed": seq.seed}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_sequence(directory) -> PointCloudSequence:
    """Load a sequence directory, validating it against its manifest."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise ValueError(f"missing manifest.json in {directory}")
    manifest = json.loads(manifest_path.read_text())
    if set(manifest) != set(_MANIFEST_KEYS):
        raise ValueError(
            f"manifest must have exactly the keys {_MANIFEST_KEYS}, got "
            f"{sorted(manifest)}")
    ply_files = sorted(directory.glob("frame_*.ply"))
    if len(ply_files) != manifest["n_frames"]:
        raise ValueError(
            f"manifest declares {manifest['n_frames']} frames but found "
            f"{len(ply_files)} PLY files in {directory}")
    frames = []
    labels = None
    for t, path in enumerate(ply_files):
        points, frame_labels = _read_ply(path)
        if points.shape[0] != manifest["n_points"]:
            raise ValueError(
                f"{path.name} has {points.shape[0]} points, manifest says "
                f"{manifest['n_points']}")
        if t == 0:
            labels = frame_labels
        elif (frame_labels is None) != (labels is None) or (
                labels is not None and not np.array_equal(labels, frame_labels)):
            raise ValueError(f"{path.name} labels disagree with frame 0")
        frames.append(points)
    return PointCloudSequence(frames=frames, dt=manifest["dt"], labels=labels,
                              preset=manifest["preset"], seed=manifest["seed"],
                              name=directory.name)


@dataclass(frozen=True)
class NormalizeTransform:
    """Record of the centering/scaling applied by :func:`normalize`."""

    center: tuple[float, float, float]
    radius: float

    def apply(self, seq: PointCloudSequence) -> PointCloudSequence:
        c = np.asarray(self.center)
        frames = [(f - c) / self.radius for f in seq.frames]
        return replace(seq, frames=frames)

    def invert(self, seq: PointCloudSequence) -> PointCloudSequence:
        c = np.asarray(self.center)
        frames = [f * self.radius + c for f in seq.frames]
        return replace(seq, frames=frames)


def normalize(seq: PointCloudSequence) -> tuple[PointCloudSequence, NormalizeTransform]:
    """Center and scale a sequence by its first frame.

    Subtracts the first frame's centroid and divides by its bounding-sphere
    radius, applying the same transform to every frame.
    """
    first = seq.frames[0]
    center = first.mean(axis=0)
    radius = float(np.sqrt(((first - center) ** 2).sum(axis=1).max()))
    if radius < 1e-12:
        raise ValueError("cannot normalize a degenerate (zero-radius) cloud")
    transform = NormalizeTransform(center=tuple(center), radius=radius)
    return transform.apply(seq), transform
