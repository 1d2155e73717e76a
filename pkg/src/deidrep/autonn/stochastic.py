"""Dropout variants and trainable per-dimension Gaussian noise."""
from __future__ import annotations

import numpy as np

from .layers import inverse_softplus, sigmoid, softplus
from .params import ParamSet

DROPOUT_MODES = ("element", "variational", "none")


def dropout_mask(shape: tuple[int, ...], rate: float, mode: str, rng: np.random.Generator,
                 dtype=np.float32) -> np.ndarray | None:
    """Scaled keep-mask for a ``(B, T, D)`` input, or None when nothing is dropped.

    ``variational`` draws one ``(B, 1, D)`` mask per sequence, reused at every step.
    """
    if mode not in DROPOUT_MODES:
        raise ValueError(f"unknown dropout mode {mode!r}")
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "none" or rate == 0:
        return None
    mshape = (shape[0], 1, shape[2]) if mode == "variational" else shape
    keep = rng.random(mshape) >= rate
    return (keep / (1.0 - rate)).astype(dtype)


def dropout_apply(x: np.ndarray, rate: float, mode: str, training: bool,
                  rng: np.random.Generator | None):
    """Returns ``(y, mask)``; backward is ``dy * mask`` (identity when mask is None)."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training:
        return x, None
    mask = dropout_mask(x.shape, rate, mode, rng, x.dtype)
    return (x if mask is None else x * mask), mask


def dropout_backward(dy: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    return dy if mask is None else dy * mask


class GaussianNoise:
    """Adds ``softplus(rho) * eps`` with ``eps ~ N(0, 1)`` per step and dimension."""

    def __init__(self, params: ParamSet, name: str, width: int, init_sigma: float = 0.1,
                 dtype=np.float32):
        self.rho = params.new(f"{name}.rho", np.full(width, inverse_softplus(init_sigma), dtype=dtype))
        self.width = width

    @property
    def sigma(self) -> np.ndarray:
        return softplus(self.rho.value)

    def forward(self, x: np.ndarray, rng: np.random.Generator | None, active: bool = True):
        if x.shape[-1] != self.width:
            raise ValueError(f"noise width {self.width} does not match input width {x.shape[-1]}")
        if not active:
            return x, None
        eps = rng.standard_normal(x.shape).astype(x.dtype)
        return x + self.sigma.astype(x.dtype) * eps, eps

    def backward(self, dy: np.ndarray, eps: np.ndarray | None) -> np.ndarray:
        if eps is not None:
            axes = tuple(range(dy.ndim - 1))
            self.rho.grad += (dy * eps).sum(axis=axes) * sigmoid(self.rho.value)
        return dy


def gaussian_noise_apply(x: np.ndarray, sigma: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    sigma = np.asarray(sigma)
    if sigma.shape[-1] != x.shape[-1]:
        raise ValueError("sigma width does not match feature width")
    return x + sigma * rng.standard_normal(x.shape)
