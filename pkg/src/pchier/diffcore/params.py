"""Named parameter storage and the on-disk checkpoint format.

A checkpoint is a JSON index mapping each parameter name to its shape and
the byte span of its data, next to a flat little-endian binary of 8-byte
IEEE doubles concatenated in index order. Round trips are bit-exact.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .tensor import Tensor


class ParamStore:
    """Ordered mapping from dotted parameter names to trainable tensors."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def create(self, name: str, shape: tuple[int, ...], rng=None,
               init: str = "glorot") -> Tensor:
        """Register a new parameter.

        ``init`` is ``"glorot"`` (uniform in +-sqrt(6/(fan_in+fan_out)),
        drawn from ``rng``) or ``"zeros"``. Biases and other 1-D parameters
        are zero-initialized regardless.
        """
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        shape = tuple(int(s) for s in shape)
        if init == "zeros" or len(shape) < 2:
            values = np.zeros(shape)
        elif init == "glorot":
            if rng is None:
                raise ValueError("glorot init requires a random generator")
            fan_in, fan_out = shape[0], shape[-1]
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            values = rng.uniform(-bound, bound, size=shape)
        else:
            raise ValueError(f"unknown init: {init!r}")
        t = Tensor(values, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return self._params.values()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def total_size(self) -> int:
        return sum(t.values.size for t in self._params.values())


def _bin_path(json_path: Path) -> Path:
    return json_path.with_suffix(".bin")


def save_checkpoint(store: ParamStore, json_path) -> None:
    """Write ``<path>.json`` index plus ``<path>.bin`` payload."""
    json_path = Path(json_path)
    index: dict[str, dict] = {}
    chunks: list[bytes] = []
    offset = 0
    for name, t in store.items():
        raw = np.ascontiguousarray(t.values, dtype="<f8").tobytes()
        index[name] = {"shape": list(t.values.shape), "offset": offset,
                       "length": len(raw)}
        chunks.append(raw)
        offset += len(raw)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(json.dumps(index, indent=2) + "\n")
    _bin_path(json_path).write_bytes(b"".join(chunks))


def load_checkpoint(json_path) -> ParamStore:
    json_path = Path(json_path)
    index = json.loads(json_path.read_text())
    blob = _bin_path(json_path).read_bytes()
    store = ParamStore()
    for name, entry in index.items():
        shape = tuple(entry["shape"])
        start, length = entry["offset"], entry["length"]
        values = np.frombuffer(blob[start:start + length], dtype="<f8").reshape(shape)
        t = store.create(name, shape, init="zeros")
        t.values[...] = values
    return store
