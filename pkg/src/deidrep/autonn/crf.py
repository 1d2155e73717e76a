"""Linear-chain CRF with virtual start/stop states.

The transition matrix is ``(L + 2) x (L + 2)``; row ``L`` is the start state
and column ``L + 1`` the stop state. A path ``y`` scores
``trans[START, y0] + sum_t emis[t, y_t] + sum_t trans[y_{t-1}, y_t] + trans[y_last, STOP]``.
"""
from __future__ import annotations

import numpy as np

from .layers import length_mask
from .params import ParamSet

INVALID = -1.0e4


def logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(a - m), axis=axis))


class CRF:
    def __init__(self, params: ParamSet, name: str, n_labels: int, dtype=np.float32):
        self.L = n_labels
        self.trans = params.new(f"{name}.transitions", np.zeros((n_labels + 2, n_labels + 2), dtype=dtype))

    @property
    def start(self) -> int:
        return self.L

    @property
    def stop(self) -> int:
        return self.L + 1

    def _parts(self):
        T = self.trans.value
        L = self.L
        return T[:L, :L], T[L, :L], T[:L, L + 1]

    def forward_backward(self, emissions: np.ndarray, lengths: np.ndarray):
        """Log-space alpha/beta messages and log partition per sequence."""
        B, T, L = emissions.shape
        A, start, stop = self._parts()
        mask = length_mask(lengths, T)
        alpha = np.empty((B, T, L), dtype=emissions.dtype)
        alpha[:, 0] = start + emissions[:, 0]
        for t in range(1, T):
            new = logsumexp(alpha[:, t - 1, :, None] + A[None], axis=1) + emissions[:, t]
            alpha[:, t] = np.where(mask[:, t, None], new, alpha[:, t - 1])
        log_z = logsumexp(alpha[:, T - 1] + stop, axis=1)
        beta = np.empty_like(alpha)
        beta[:, T - 1] = stop
        for t in range(T - 2, -1, -1):
            nxt = logsumexp(A[None] + (emissions[:, t + 1] + beta[:, t + 1])[:, None, :], axis=2)
            beta[:, t] = np.where(mask[:, t + 1, None], nxt, stop)
        return alpha, beta, log_z, mask

    def log_partition(self, emissions: np.ndarray, lengths: np.ndarray) -> np.ndarray:
        return self.forward_backward(emissions, lengths)[2]

    def path_score(self, emissions: np.ndarray, labels: np.ndarray, lengths: np.ndarray) -> np.ndarray:
        A, start, stop = self._parts()
        B, T, _ = emissions.shape
        mask = length_mask(lengths, T)
        y = np.where(mask, labels, 0)
        rows = np.arange(B)
        score = start[y[:, 0]] + np.sum(np.take_along_axis(emissions, y[:, :, None], 2)[:, :, 0] * mask, axis=1)
        if T > 1:
            score = score + np.sum(A[y[:, :-1], y[:, 1:]] * mask[:, 1:], axis=1)
        last = y[rows, np.asarray(lengths) - 1]
        return score + stop[last]

    def nll(self, emissions: np.ndarray, labels: np.ndarray, lengths: np.ndarray):
        """Mean over the batch of ``log Z - gold path score``; returns ``(loss, cache)``."""
        B, T, L = emissions.shape
        if L != self.L:
            raise ValueError(f"CRF expects {self.L} emission scores, got {L}")
        if labels.shape != (B, T):
            raise ValueError("labels must be (B, T)")
        alpha, beta, log_z, mask = self.forward_backward(emissions, lengths)
        gold = self.path_score(emissions, labels, lengths)
        loss = float(np.mean(log_z - gold))
        return loss, (emissions, labels, lengths, alpha, beta, log_z, mask)

    def nll_backward(self, cache, scale: float = 1.0) -> np.ndarray:
        emissions, labels, lengths, alpha, beta, log_z, mask = cache
        B, T, L = emissions.shape
        A, _, _ = self._parts()
        w = scale / B
        m = mask[:, :, None]
        marg = np.exp(alpha + beta - log_z[:, None, None]) * m
        y = np.where(mask, labels, 0)
        onehot = np.zeros_like(marg)
        np.put_along_axis(onehot, y[:, :, None], 1.0, axis=2)
        onehot *= m
        d_emis = (marg - onehot) * w

        g = np.zeros_like(self.trans.value, dtype=np.float64)
        rows = np.arange(B)
        last = np.asarray(lengths) - 1
        g[self.L, :L] += marg[:, 0].sum(0) - onehot[:, 0].sum(0)
        g[:L, self.L + 1] += marg[rows, last].sum(0) - onehot[rows, last].sum(0)
        if T > 1:
            xi = np.exp(alpha[:, :-1, :, None] + A[None, None] +
                        (emissions[:, 1:] + beta[:, 1:])[:, :, None, :] - log_z[:, None, None, None])
            xi *= mask[:, 1:, None, None]
            g[:L, :L] += xi.sum(axis=(0, 1))
            pair = np.zeros((L, L))
            np.add.at(pair, (y[:, :-1][mask[:, 1:]], y[:, 1:][mask[:, 1:]]), 1.0)
            g[:L, :L] -= pair
        self.trans.grad += (g * w).astype(self.trans.grad.dtype)
        return d_emis.astype(emissions.dtype)

    def viterbi(self, emissions: np.ndarray) -> tuple[list[int], float]:
        """Best path for one ``(T, L)`` sequence.

        Ties go to the lowest label index, deciding from the last step backwards.
        """
        T, L = emissions.shape
        A, start, stop = self._parts()
        delta = start + emissions[0]
        back = np.zeros((T, L), dtype=np.int64)
        for t in range(1, T):
            scores = delta[:, None] + A
            back[t] = np.argmax(scores, axis=0)
            delta = scores[back[t], np.arange(L)] + emissions[t]
        final = delta + stop
        best = int(np.argmax(final))
        path = [best]
        for t in range(T - 1, 0, -1):
            best = int(back[t, best])
            path.append(best)
        path.reverse()
        return path, float(final[path[-1]])

    def mask_invalid_bio(self, labels: list[str]) -> None:
        """Set transitions that would break BIO validity to a large negative value."""
        T = self.trans.value
        for j, lab in enumerate(labels):
            if not lab.startswith("I-"):
                continue
            T[self.L, j] = INVALID
            for i, prev in enumerate(labels):
                if prev == "O" or prev[2:] != lab[2:]:
                    T[i, j] = INVALID
