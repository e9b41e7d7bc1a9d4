"""Central finite-difference verification of reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .params import ParamStore
from .tensor import Tensor, backward, no_grad


@dataclass
class GradCheckReport:
    """Per-parameter agreement between analytic and numeric gradients."""

    per_param: dict[str, float] = field(default_factory=dict)
    skipped: list[tuple[str, int]] = field(default_factory=list)
    max_rel_error: float = 0.0
    tol: float = 1e-4

    @property
    def ok(self) -> bool:
        return self.max_rel_error < self.tol


def _rel_error(a: float, b: float) -> float:
    scale = max(abs(a), abs(b), 1e-10)
    return abs(a - b) / scale


def finite_difference_check(store: ParamStore, loss_fn: Callable[[], Tensor],
                            h: float = 1e-5, tol: float = 1e-4,
                            kink_rtol: float = 1e-3) -> GradCheckReport:
    """Compare reverse-mode gradients against central differences.

    ``loss_fn`` must be a deterministic closure over ``store`` returning a
    scalar tensor. Coordinates where the two one-sided slopes disagree by
    more than ``kink_rtol`` (relative) sit on a non-differentiable point
    (ReLU kink, pooling tie) and are flagged as skipped instead of scored.
    """
    store.zero_grad()
    loss = loss_fn()
    backward(loss)
    analytic = {name: t.grad.copy() for name, t in store.items()}
    f0 = float(loss.values)

    report = GradCheckReport(tol=tol)
    with no_grad():
        for name, t in store.items():
            flat = t.values.reshape(-1)
            worst = 0.0
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                f_plus = float(loss_fn().values)
                flat[i] = orig - h
                f_minus = float(loss_fn().values)
                flat[i] = orig

                slope_plus = (f_plus - f0) / h
                slope_minus = (f0 - f_minus) / h
                slope_scale = max(1.0, abs(slope_plus), abs(slope_minus))
                if abs(slope_plus - slope_minus) > kink_rtol * slope_scale:
                    report.skipped.append((name, i))
                    continue

                fd = (f_plus - f_minus) / (2.0 * h)
                an = analytic[name].reshape(-1)[i]
                err = _rel_error(fd, an)
                # Tiny gradients drown in truncation noise; compare absolutely.
                if max(abs(fd), abs(an)) < 1e-7 and abs(fd - an) < 1e-8:
                    err = 0.0
                worst = max(worst, err)
            report.per_param[name] = worst
            report.max_rel_error = max(report.max_rel_error, worst)
    return report
