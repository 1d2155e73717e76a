"""Nadam with global gradient-norm clipping."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ParamSet


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass(frozen=True)
class NadamConfig:
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 1.0
    schedule_decay: float = 0.004


def clip_gradients(params: ParamSet, clip_norm: float | None) -> float:
    """Scale all gradients jointly so their global L2 norm is at most ``clip_norm``.

    Returns the norm before clipping.
    """
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradient(f"non-finite gradient in {p.name}")
    norm = params.grad_norm()
    if clip_norm is not None and norm > clip_norm:
        scale = clip_norm / norm
        for p in params:
            p.grad *= scale
    return norm


class Nadam:
    """Adam with Nesterov momentum and Dozat's momentum warm-up schedule.

    ``mu_t = beta1 * (1 - 0.5 * 0.96 ** (t * schedule_decay))``.
    """

    def __init__(self, params: ParamSet, config: NadamConfig | None = None):
        self.params = params
        self.config = config or NadamConfig()
        self.t = 0
        self.m_schedule = 1.0
        self.m = {p.name: np.zeros(p.shape, dtype=np.float64) for p in params}
        self.v = {p.name: np.zeros(p.shape, dtype=np.float64) for p in params}

    def _mu(self, t: int) -> float:
        c = self.config
        return c.beta1 * (1.0 - 0.5 * 0.96 ** (t * c.schedule_decay))

    def step(self) -> float:
        c = self.config
        norm = clip_gradients(self.params, c.clip_norm)
        self.t += 1
        t = self.t
        mu_t, mu_next = self._mu(t), self._mu(t + 1)
        self.m_schedule *= mu_t
        sched_next = self.m_schedule * mu_next
        for p in self.params:
            g = p.grad.astype(np.float64)
            m = self.m[p.name]
            v = self.v[p.name]
            m *= c.beta1
            m += (1 - c.beta1) * g
            v *= c.beta2
            v += (1 - c.beta2) * g * g
            g_hat = g / (1 - self.m_schedule)
            m_hat = m / (1 - sched_next)
            v_hat = v / (1 - c.beta2 ** t)
            m_bar = (1 - mu_t) * g_hat + mu_next * m_hat
            p.value -= (c.lr * m_bar / (np.sqrt(v_hat) + c.eps)).astype(p.value.dtype)
        return norm

    def state(self) -> dict:
        return {"t": self.t, "m_schedule": self.m_schedule,
                "m": {k: v.copy() for k, v in self.m.items()},
                "v": {k: v.copy() for k, v in self.v.items()}}

    def load_state(self, state: dict) -> None:
        self.t = state["t"]
        self.m_schedule = state["m_schedule"]
        self.m = {k: v.copy() for k, v in state["m"].items()}
        self.v = {k: v.copy() for k, v in state["v"].items()}


def nadam_step(params: ParamSet, optimizer: Nadam) -> float:
    return optimizer.step()
