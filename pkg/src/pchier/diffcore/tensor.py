"""Reverse-mode automatic differentiation over dense float64 arrays.

A small dynamic-graph engine: every operation records its parent tensors
and a backward closure, and :func:`backward` walks the graph once in
reverse topological order. Gradients accumulate additively into leaf
tensors, so callers must clear them between optimization steps.

Only the operations this package actually composes are provided; there is
no broadcasting beyond what those operations need and no attempt at a
general array API.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

_STATE = threading.local()


def grad_enabled() -> bool:
    return getattr(_STATE, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation mode)."""
    prev = grad_enabled()
    _STATE.enabled = False
    try:
        yield
    finally:
        _STATE.enabled = prev


class Tensor:
    """A dense float64 array with an optional gradient slot."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.values) if self.requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Iterable] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def item(self) -> float:
        return float(self.values)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; heavy lifting lives in the module-level ops.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _node(values: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.values = values
    out.grad = None
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    values = a.values + b.values

    def bwd(g):
        return ((a, _unbroadcast(g, a.values.shape)),
                (b, _unbroadcast(g, b.values.shape)))

    return _node(values, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    values = a.values - b.values

    def bwd(g):
        return ((a, _unbroadcast(g, a.values.shape)),
                (b, _unbroadcast(-g, b.values.shape)))

    return _node(values, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    values = a.values * b.values

    def bwd(g):
        return ((a, _unbroadcast(g * b.values, a.values.shape)),
                (b, _unbroadcast(g * a.values, b.values.shape)))

    return _node(values, (a, b), bwd)


def relu(a: Tensor) -> Tensor:
    values = np.maximum(a.values, 0.0)

    def bwd(g):
        return ((a, g * (a.values > 0.0)),)

    return _node(values, (a,), bwd)


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``y[..., j] = sum_i x[..., i] * weight[i, j] + bias[j]``.

    The weight matrix is shared across all leading axes of ``x``.
    """
    if weight.values.ndim != 2:
        raise ValueError(f"weight must be 2-D, got shape {weight.values.shape}")
    din, dout = weight.values.shape
    if x.values.ndim < 1 or x.values.shape[-1] != din:
        raise ValueError(
            f"input width {x.values.shape} incompatible with weight {weight.values.shape}")
    if bias.values.shape != (dout,):
        raise ValueError(f"bias must have shape ({dout},), got {bias.values.shape}")
    lead = x.values.shape[:-1]
    x2 = x.values.reshape(-1, din)
    values = (x2 @ weight.values + bias.values).reshape(lead + (dout,))

    def bwd(g):
        g2 = g.reshape(-1, dout)
        return ((x, (g2 @ weight.values.T).reshape(x.values.shape)),
                (weight, x2.T @ g2),
                (bias, g2.sum(axis=0)))

    return _node(values, (x, weight, bias), bwd)


def linear_parts(parts: Sequence[Tensor], weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map of a virtual concatenation along the last axis.

    Equivalent to ``affine(concat(parts), weight, bias)`` but multiplies
    each part against its own slice of the weight matrix, skipping the
    concatenated buffer and its split on the way back.
    """
    parts = [_coerce(p) for p in parts]
    widths = [p.values.shape[-1] for p in parts]
    din, dout = weight.values.shape
    if sum(widths) != din:
        raise ValueError(
            f"part widths {widths} do not add up to weight input width {din}")
    lead = parts[0].values.shape[:-1]
    for p in parts:
        if p.values.shape[:-1] != lead:
            raise ValueError("all parts must share their leading axes")
    if bias.values.shape != (dout,):
        raise ValueError(f"bias must have shape ({dout},), got {bias.values.shape}")
    x2s = []
    acc = None
    offset = 0
    for p, w in zip(parts, widths):
        x2 = p.values.reshape(-1, w)
        x2s.append(x2)
        if acc is None:
            acc = x2 @ weight.values[offset:offset + w]
        else:
            acc += x2 @ weight.values[offset:offset + w]
        offset += w
    acc += bias.values
    values = acc.reshape(lead + (dout,))

    def bwd(g):
        g2 = g.reshape(-1, dout)
        grads = []
        d_weight = np.empty_like(weight.values)
        offset = 0
        for p, x2, w in zip(parts, x2s, widths):
            if p.requires_grad:
                grads.append((p, (g2 @ weight.values[offset:offset + w].T)
                              .reshape(p.values.shape)))
            np.matmul(x2.T, g2, out=d_weight[offset:offset + w])
            offset += w
        grads.append((weight, d_weight))
        grads.append((bias, g2.sum(axis=0)))
        return grads

    return _node(values, tuple(parts) + (weight, bias), bwd)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [_coerce(t) for t in tensors]
    values = np.concatenate([p.values for p in parts], axis=axis)
    sizes = [p.values.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def bwd(g):
        grads = np.split(g, offsets, axis=axis)
        return tuple(zip(parts, grads))

    return _node(values, tuple(parts), bwd)


def expand_neighbors(x: Tensor, k: int) -> Tensor:
    """Broadcast ``(P, D)`` rows to ``(P, k, D)`` without copying.

    Equivalent to gathering each row k times; the backward pass sums over
    the neighbor axis, which is far cheaper than a scatter-add.
    """
    p, d = x.values.shape
    values = np.broadcast_to(x.values[:, None, :], (p, k, d))

    def bwd(g):
        return ((x, g.sum(axis=1)),)

    return _node(values, (x,), bwd)


class GatherIndex:
    """Row indices plus a lazily built, reusable scatter recipe.

    Wrapping an index array that will be used across many steps (cached
    sequence geometry) amortizes the sort behind the backward scatter-add.
    """

    __slots__ = ("idx", "_order", "_starts", "_rows")

    def __init__(self, idx):
        self.idx = np.asarray(idx, dtype=np.intp)
        self._order = None
        self._starts = None
        self._rows = None

    def _recipe(self):
        if self._order is None:
            flat = self.idx.reshape(-1)
            self._order = np.argsort(flat, kind="stable")
            sorted_idx = flat[self._order]
            starts = np.flatnonzero(np.diff(sorted_idx)) + 1
            self._starts = np.concatenate(([0], starts))
            self._rows = sorted_idx[self._starts]
        return self._order, self._starts, self._rows

    def scatter_add(self, g2: np.ndarray, n: int) -> np.ndarray:
        """Sum rows of ``g2`` into a fresh ``(n, g2.shape[1])`` array."""
        order, starts, rows = self._recipe()
        gx = np.zeros((n, g2.shape[1]))
        gx[rows] = np.add.reduceat(g2[order], starts, axis=0)
        return gx


def gather_rows(x, idx) -> Tensor:
    """Index the first axis of ``x`` with an integer array of any shape.

    The output has shape ``idx.shape + x.shape[1:]``; the backward pass
    scatter-adds into the selected rows. ``idx`` may be a
    :class:`GatherIndex` to reuse its scatter recipe.
    """
    x = _coerce(x)
    if not isinstance(idx, GatherIndex):
        arr = np.asarray(idx, dtype=np.intp)
        if arr.size and (arr.min() < 0 or arr.max() >= x.values.shape[0]):
            raise ValueError(
                f"gather indices out of range for first axis of size {x.values.shape[0]}")
        idx = GatherIndex(arr)
    n = x.values.shape[0]
    values = x.values[idx.idx]
    count = idx.idx.size
    row_width = values.size // count if count else 0

    def bwd(g):
        gx = idx.scatter_add(g.reshape(count, row_width), n)
        return ((x, gx.reshape(x.values.shape)),)

    return _node(values, (x,), bwd)


def reduce_max(x: Tensor, axis: int) -> Tensor:
    """Maximum along one axis; the gradient routes to the first argmax.

    The winner positions are recovered in the backward pass (a max plus a
    cumulative-sum mask is much cheaper here than an explicit argmax).
    """
    values = x.values.max(axis=axis)

    def bwd(g):
        mask = x.values == np.expand_dims(values, axis)
        # Keep only the first winner along the axis (tie rule: lowest index).
        np.logical_and(mask, mask.cumsum(axis=axis, dtype=np.int16) == 1, out=mask)
        return ((x, mask * np.expand_dims(g, axis)),)

    return _node(np.asarray(values), (x,), bwd)


def tensor_sum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    values = x.values.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((x, np.broadcast_to(g, x.values.shape)),)

    return _node(np.asarray(values), (x,), bwd)


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    count = x.values.size if axis is None else x.values.shape[axis]
    values = x.values.mean(axis=axis)

    def bwd(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return ((x, np.broadcast_to(g, x.values.shape) / count),)

    return _node(np.asarray(values), (x,), bwd)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    values = x.values.reshape(shape)

    def bwd(g):
        return ((x, g.reshape(x.values.shape)),)

    return _node(values, (x,), bwd)


def backward(loss: Tensor) -> None:
    """Populate gradients of every leaf reachable from a scalar loss.

    Each call propagates a fresh unit seed, so calling it twice without
    clearing doubles leaf gradients. Leaves created with
    ``requires_grad=True`` but not reachable from ``loss`` are untouched
    (their gradient stays whatever it was, zero after a clear).
    """
    if loss.values.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.values.shape}")
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))

    acc: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    owned: set[int] = set()  # buffers safe to accumulate into in place
    for node in reversed(topo):
        g = acc.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.values)
            node.grad += g
            continue
        for parent, pg in node._backward(g):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key not in acc:
                # May alias a view into another gradient; never mutated.
                acc[key] = pg
            elif key in owned:
                np.add(acc[key], pg, out=acc[key])
            else:
                acc[key] = acc[key] + pg
                owned.add(key)
