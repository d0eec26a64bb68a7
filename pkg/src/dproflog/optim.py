"""First-order optimizers over named parameter blocks."""
from __future__ import annotations

import numpy as np

from .scorer import ParamSet


class NonFiniteGradientError(RuntimeError):
    pass


def grad_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


def check_finite(grads: dict[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteGradientError(f"non-finite gradient in block {name!r}")


class Sgd:
    """Plain gradient step; set maximize=True for ascent."""

    def __init__(self, lr: float, maximize: bool = False) -> None:
        self.lr = lr
        self.sign = 1.0 if maximize else -1.0

    def step(self, params: ParamSet, grads: dict[str, np.ndarray]) -> None:
        check_finite(grads)
        for name, arr in params.blocks().items():
            arr += self.sign * self.lr * grads[name]


class Adam:
    """Adaptive per-parameter scaling via first/second-moment estimates."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, maximize: bool = False) -> None:
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.sign = 1.0 if maximize else -1.0
        self.t = 0
        self._m: dict[str, np.ndarray] | None = None
        self._v: dict[str, np.ndarray] | None = None

    def step(self, params: ParamSet, grads: dict[str, np.ndarray]) -> None:
        check_finite(grads)
        if self._m is None:
            self._m = {n: np.zeros_like(a) for n, a in params.blocks().items()}
            self._v = {n: np.zeros_like(a) for n, a in params.blocks().items()}
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for name, arr in params.blocks().items():
            g = grads[name]
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / corr1) / (np.sqrt(v / corr2) + self.eps)
            arr += self.sign * self.lr * update


def make_optimizer(kind: str, lr: float, maximize: bool = False):
    if kind == "sgd":
        return Sgd(lr, maximize=maximize)
    if kind == "adam":
        return Adam(lr, maximize=maximize)
    raise ValueError(f"unknown optimizer {kind!r}")
