"""Named parameters, gradient accumulators, initialisers and the SGD update."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from ..errors import NonFiniteError, ShapeError
from . import kernels

EMBEDDING_INIT = 0.05


def glorot_limit(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def uniform(rng: np.random.Generator, shape, limit: float, dtype=np.float64) -> np.ndarray:
    return rng.uniform(-limit, limit, size=shape).astype(dtype, copy=False)


class ParameterStore:
    """Parameters by name with same-shaped gradient buffers.

    Gradients are accumulated either densely (:meth:`accumulate`) or by row
    (:meth:`accumulate_rows`, for embedding tables). The store remembers which
    parameters, and which rows, were touched so :func:`sgd_step` only moves
    those. Names are slash-separated; ``shared/`` and ``head/<task>/`` are
    the prefixes the attribute model uses.
    """

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._touched: dict[str, list | None] = {}
        self.frozen: set[str] = set()

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        value = np.ascontiguousarray(value, dtype=self.dtype)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        return value

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.params if n.startswith(prefix)]

    def n_values(self, prefix: str = "") -> int:
        return sum(self.params[n].size for n in self.names(prefix))

    def accumulate(self, name: str, grad) -> None:
        g = self.grads[name]
        grad = np.asarray(grad)
        if grad.shape != g.shape:
            raise ShapeError(f"gradient for {name!r} has shape {grad.shape}, expected {g.shape}")
        g += grad
        self._touched[name] = None

    def accumulate_rows(self, name: str, rows, grad_rows) -> None:
        rows = np.asarray(rows, dtype=np.int64).reshape(-1)
        kernels.scatter_add_rows(self.grads[name], rows, grad_rows)
        if name in self._touched and self._touched[name] is None:
            return
        self._touched.setdefault(name, []).append(rows)

    def touched(self) -> list[str]:
        return list(self._touched)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0
        self._touched.clear()

    def freeze(self, prefix: str) -> None:
        """Test hook: parameters under ``prefix`` are skipped by :func:`sgd_step`."""
        self.frozen.add(prefix)

    def is_frozen(self, name: str) -> bool:
        return any(name.startswith(p) for p in self.frozen)

    def copy(self) -> "ParameterStore":
        other = ParameterStore(self.dtype)
        for n, v in self.params.items():
            other.add(n, v.copy())
        other.frozen = set(self.frozen)
        return other

    def state(self) -> dict[str, np.ndarray]:
        return {n: v.copy() for n, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for n, v in state.items():
            if n not in self.params or self.params[n].shape != np.shape(v):
                raise ShapeError(f"cannot load {n!r} with shape {np.shape(v)}")
            self.params[n][...] = v


def _touched_grads(store: ParameterStore):
    for name, rows in store._touched.items():
        g = store.grads[name]
        if rows is None:
            yield name, g, None
        else:
            rows = np.unique(np.concatenate(rows))
            yield name, g[rows], rows


def sgd_step(store: ParameterStore, learning_rate: float, max_grad_norm: float | None = None) -> ParameterStore:
    """``p -= lr * g`` for touched parameters only, then reset those gradients.

    With ``max_grad_norm`` the touched gradients are rescaled together so
    their global L2 norm is at most that value.
    """
    if not learning_rate > 0:
        raise ValueError("learning rate must be positive")
    grads = list(_touched_grads(store))
    for name, g, _ in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
    step = learning_rate
    if max_grad_norm:
        norm = math.sqrt(sum(float(np.vdot(g, g)) for _, g, _ in grads))
        if norm > max_grad_norm:
            step *= max_grad_norm / norm
    for name, g, rows in grads:
        p, buf = store.params[name], store.grads[name]
        if rows is None:
            if not store.is_frozen(name):
                p -= step * g
            buf[...] = 0.0
        else:
            if not store.is_frozen(name):
                p[rows] -= step * g
            buf[rows] = 0.0
    store._touched.clear()
    return store
