"""Dense and recurrent layers with hand-written backward passes.

Sequences are batched as ``(B, T, D)`` arrays padded at the end; ``lengths``
holds the valid length of each row. Every ``forward`` returns the output and
a cache that the matching ``backward`` consumes; ``backward`` accumulates
parameter gradients into ``Param.grad`` and returns the input gradient.
"""
from __future__ import annotations

import numpy as np

from .params import ParamSet


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def inverse_softplus(y: float) -> float:
    return float(np.log(np.expm1(y)))


def glorot(rng: np.random.Generator, d_in: int, d_out: int, dtype) -> np.ndarray:
    lim = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-lim, lim, size=(d_in, d_out)).astype(dtype)


def orthogonal(rng: np.random.Generator, rows: int, cols: int, dtype) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return q[:rows, :cols].astype(dtype)


def length_mask(lengths: np.ndarray, T: int) -> np.ndarray:
    return np.arange(T)[None, :] < np.asarray(lengths)[:, None]


def reverse_padded(x: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Reverse each row's valid prefix in time, leaving padding in place."""
    B, T = x.shape[:2]
    t = np.arange(T)[None, :]
    L = np.asarray(lengths)[:, None]
    idx = np.where(t < L, L - 1 - t, t)
    return x[np.arange(B)[:, None], idx]


class Linear:
    def __init__(self, params: ParamSet, name: str, d_in: int, d_out: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.W = params.new(f"{name}.W", glorot(rng, d_in, d_out, dtype))
        self.b = params.new(f"{name}.b", np.zeros(d_out, dtype=dtype))
        self.d_in, self.d_out = d_in, d_out

    def forward(self, x: np.ndarray):
        if x.shape[-1] != self.d_in:
            raise ValueError(f"Linear expects width {self.d_in}, got {x.shape[-1]}")
        return x @ self.W.value + self.b.value, x

    def backward(self, dy: np.ndarray, x: np.ndarray) -> np.ndarray:
        x2 = x.reshape(-1, self.d_in)
        dy2 = dy.reshape(-1, self.d_out)
        self.W.grad += x2.T @ dy2
        self.b.grad += dy2.sum(axis=0)
        return dy @ self.W.value.T


class LSTM:
    """Unidirectional LSTM, gate order (input, forget, cell, output).

    Forget-gate bias starts at 1.0; no peepholes.
    """

    def __init__(self, params: ParamSet, name: str, d_in: int, units: int,
                 rng: np.random.Generator, dtype=np.float32):
        H = units
        self.W = params.new(f"{name}.W", glorot(rng, d_in, 4 * H, dtype))
        self.U = params.new(f"{name}.U", np.concatenate(
            [orthogonal(rng, H, H, dtype) for _ in range(4)], axis=1))
        b = np.zeros(4 * H, dtype=dtype)
        b[H:2 * H] = 1.0
        self.b = params.new(f"{name}.b", b)
        self.d_in, self.units = d_in, H

    def forward(self, x: np.ndarray):
        B, T, D = x.shape
        if D != self.d_in:
            raise ValueError(f"LSTM expects width {self.d_in}, got {D}")
        H = self.units
        U = self.U.value
        xw = x @ self.W.value + self.b.value
        hs = np.zeros((B, T, H), dtype=xw.dtype)
        cs = np.zeros((B, T, H), dtype=xw.dtype)
        gates = np.zeros((B, T, 4 * H), dtype=xw.dtype)
        h = np.zeros((B, H), dtype=xw.dtype)
        c = np.zeros((B, H), dtype=xw.dtype)
        for t in range(T):
            z = xw[:, t] + h @ U
            g = np.empty_like(z)
            g[:, :2 * H] = sigmoid(z[:, :2 * H])
            g[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
            g[:, 3 * H:] = sigmoid(z[:, 3 * H:])
            c = g[:, H:2 * H] * c + g[:, :H] * g[:, 2 * H:3 * H]
            h = g[:, 3 * H:] * np.tanh(c)
            gates[:, t], cs[:, t], hs[:, t] = g, c, h
        return hs, (x, hs, cs, gates)

    def backward(self, dh_seq: np.ndarray, cache) -> np.ndarray:
        x, hs, cs, gates = cache
        B, T, _ = x.shape
        H = self.units
        U = self.U.value
        dz_all = np.zeros_like(gates)
        dh_next = np.zeros((B, H), dtype=hs.dtype)
        dc_next = np.zeros((B, H), dtype=hs.dtype)
        for t in reversed(range(T)):
            g = gates[:, t]
            i, f, gg, o = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
            tc = np.tanh(cs[:, t])
            dh = dh_seq[:, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            c_prev = cs[:, t - 1] if t > 0 else np.zeros_like(dc)
            dz = dz_all[:, t]
            dz[:, :H] = dc * gg * i * (1.0 - i)
            dz[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = dc * i * (1.0 - gg * gg)
            dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
            dh_next = dz @ U.T
            dc_next = dc * f
        h_prev = np.concatenate([np.zeros((B, 1, H), dtype=hs.dtype), hs[:, :-1]], axis=1)
        dz2 = dz_all.reshape(-1, 4 * H)
        self.U.grad += h_prev.reshape(-1, H).T @ dz2
        self.W.grad += x.reshape(-1, x.shape[2]).T @ dz2
        self.b.grad += dz2.sum(axis=0)
        return dz_all @ self.W.value.T


class BiLSTM:
    """Forward and time-reversed LSTM, outputs concatenated to width ``2 * units``.

    Outputs at padded positions are zeroed.
    """

    def __init__(self, params: ParamSet, name: str, d_in: int, units: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.fwd = LSTM(params, f"{name}.fwd", d_in, units, rng, dtype)
        self.bwd = LSTM(params, f"{name}.bwd", d_in, units, rng, dtype)
        self.d_in, self.units = d_in, units

    @property
    def d_out(self) -> int:
        return 2 * self.units

    def forward(self, x: np.ndarray, lengths: np.ndarray):
        if x.ndim != 3 or x.shape[1] < 1:
            raise ValueError("BiLSTM expects a (B, T>=1, D) batch")
        mask = length_mask(lengths, x.shape[1])[:, :, None].astype(x.dtype)
        hf, cf = self.fwd.forward(x)
        hb_rev, cb = self.bwd.forward(reverse_padded(x, lengths))
        out = np.concatenate([hf, reverse_padded(hb_rev, lengths)], axis=-1) * mask
        return out, (cf, cb, lengths, mask)

    def backward(self, dout: np.ndarray, cache) -> np.ndarray:
        cf, cb, lengths, mask = cache
        dout = dout * mask
        H = self.units
        dx = self.fwd.backward(dout[:, :, :H], cf)
        dx += reverse_padded(self.bwd.backward(reverse_padded(dout[:, :, H:], lengths), cb), lengths)
        return dx
