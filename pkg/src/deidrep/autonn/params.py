"""Trainable arrays with gradient slots."""
from __future__ import annotations

import hashlib
from collections.abc import Iterator

import numpy as np


class Param:
    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.shape}, dtype={self.value.dtype})"


class ParamSet:
    """Ordered, named collection of :class:`Param`."""

    def __init__(self, params: list[Param] | None = None):
        self._params: dict[str, Param] = {}
        for p in params or []:
            self.add_param(p)

    def add_param(self, p: Param) -> Param:
        if p.name in self._params:
            raise KeyError(f"duplicate parameter {p.name!r}")
        self._params[p.name] = p
        return p

    def new(self, name: str, value: np.ndarray) -> Param:
        return self.add_param(Param(name, value))

    def extend(self, other: "ParamSet") -> None:
        for p in other:
            self.add_param(p)

    def __iter__(self) -> Iterator[Param]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for p in self:
            p.grad[...] = 0

    def astype(self, dtype) -> None:
        for p in self:
            p.value = p.value.astype(dtype)
            p.grad = np.zeros_like(p.value)

    def state(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for p in self:
            arr = state[p.name]
            if arr.shape != p.shape:
                raise ValueError(f"{p.name}: shape {arr.shape} != {p.shape}")
            p.value = np.array(arr, dtype=p.value.dtype)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for p in self:
            h.update(p.name.encode())
            h.update(np.ascontiguousarray(p.value).tobytes())
        return h.hexdigest()

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in self)))

    def size(self) -> int:
        return sum(p.value.size for p in self)
