"""Central finite-difference gradient checker."""
from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .params import ParamSet


class NonDeterministicForward(RuntimeError):
    pass


@dataclass
class GradCheckReport:
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def failed(self) -> list[str]:
        return [k for k, v in self.errors.items() if not v <= self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failed

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor_ratio: float = 1e-3) -> float:
    """Max elementwise ``|a - n| / max(|a|, |n|, floor)``.

    ``floor`` is ``floor_ratio`` times the block's largest gradient magnitude, so
    entries that are numerically zero are judged against the block scale.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(n), initial=0.0))
    if scale == 0.0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor_ratio * scale)
    return float(np.max(np.abs(a - n) / denom))


def finite_diff_check(
    loss_fn: Callable[[], float],
    params: ParamSet,
    tolerance: float = 1e-4,
    h: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
    analytic: dict[str, np.ndarray] | None = None,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``loss_fn`` must zero the gradients, run forward and backward on ``params``
    and return the loss; it has to be deterministic (frozen noise/dropout
    seeds). ``max_entries`` samples that many coordinates per block.
    ``analytic`` overrides the gradients read from ``params`` (used to inject
    a corrupted gradient in negative controls).
    """
    loss0 = loss_fn()
    grads = {p.name: p.grad.astype(np.float64).copy() for p in params}
    if loss_fn() != loss0:
        raise NonDeterministicForward("two forward passes produced different losses")
    if analytic:
        grads.update({k: np.asarray(v, dtype=np.float64) for k, v in analytic.items()})
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance)
    for p in params:
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(len(idx))
        for k, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_fn()
            flat[i] = orig - h
            lm = loss_fn()
            flat[i] = orig
            numeric[k] = (lp - lm) / (2 * h)
        report.errors[p.name] = relative_error(grads[p.name].reshape(-1)[idx], numeric)
    loss_fn()
    return report
