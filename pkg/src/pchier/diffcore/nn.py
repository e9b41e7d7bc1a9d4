"""Shared point-wise network layers built on the autodiff tensors."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .params import ParamStore
from .tensor import Tensor, affine, linear_parts, reduce_max, relu


def mlp_param_shapes(in_width: int, widths: Sequence[int]) -> list[tuple[tuple[int, int], tuple[int]]]:
    """(weight_shape, bias_shape) per layer for a given width chain."""
    shapes = []
    prev = in_width
    for w in widths:
        shapes.append(((prev, int(w)), (int(w),)))
        prev = int(w)
    return shapes


def create_mlp_params(store: ParamStore, prefix: str, in_width: int,
                      widths: Sequence[int], rng) -> int:
    """Register weight/bias pairs ``<prefix>.mlp{i}.*``; returns out width."""
    for i, (w_shape, b_shape) in enumerate(mlp_param_shapes(in_width, widths)):
        store.create(f"{prefix}.mlp{i}.weight", w_shape, rng)
        store.create(f"{prefix}.mlp{i}.bias", b_shape)
    return int(widths[-1]) if widths else in_width


def shared_mlp_forward(x: Tensor, widths: Sequence[int], params: ParamStore,
                       prefix: str, relu_last: bool = True) -> Tensor:
    """Apply a stack of point-shared affine layers.

    The same weights act on every leading-axis element of ``x`` (points,
    and neighbors when present). ReLU follows every layer, the last one
    only when ``relu_last`` is set.
    """
    return shared_mlp_forward_parts([x], widths, params, prefix, relu_last)


def shared_mlp_forward_parts(parts: Sequence[Tensor], widths: Sequence[int],
                             params: ParamStore, prefix: str,
                             relu_last: bool = True) -> Tensor:
    """Same as :func:`shared_mlp_forward` over an implicit concatenation.

    The first layer consumes the parts directly against slices of its
    weight matrix, which avoids materializing the concatenated input.
    """
    if not widths:
        raise ValueError("widths must list at least one layer")
    x: Tensor | None = None
    for i in range(len(widths)):
        w = params[f"{prefix}.mlp{i}.weight"]
        b = params[f"{prefix}.mlp{i}.bias"]
        x = linear_parts(parts, w, b) if i == 0 else affine(x, w, b)
        if relu_last or i < len(widths) - 1:
            x = relu(x)
    return x


def max_pool_neighbors(x: Tensor) -> Tensor:
    """Element-wise max over the neighbor axis of a ``(P, K, D)`` tensor.

    The gradient routes to the argmax element; on ties the lowest neighbor
    index wins.
    """
    if x.values.ndim != 3:
        raise ValueError(f"expected a (P, K, D) tensor, got shape {x.values.shape}")
    return reduce_max(x, axis=1)
