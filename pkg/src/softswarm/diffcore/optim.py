"""SGD and Adam over named parameter tensors."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .tensor import DiffcoreError, Tensor

__all__ = ["Sgd", "Adam"]


class _Optimizer:
    kind = "base"

    def __init__(self, params: Iterable[Tensor], learning_rate: float):
        if learning_rate <= 0:
            raise DiffcoreError("learning_rate must be positive")
        self.params: list[Tensor] = list(params)
        self.learning_rate = float(learning_rate)
        self.step_count = 0

    def _check_grads(self) -> None:
        for p in self.params:
            g = p.grad
            if g is None:
                raise DiffcoreError(f"parameter {p.name!r} has no gradient")
            if not np.all(np.isfinite(g)):
                raise DiffcoreError(f"non-finite gradient in parameter {p.name!r}")

    def step(self) -> None:
        raise NotImplementedError


class Sgd(_Optimizer):
    """Plain gradient descent: p <- p - lr * grad."""

    kind = "sgd"

    def step(self) -> None:
        self._check_grads()
        self.step_count += 1
        for p in self.params:
            p.data -= self.learning_rate * p.grad


class Adam(_Optimizer):
    """Adam with bias-corrected first and second moments."""

    kind = "adam"

    def __init__(self, params: Iterable[Tensor], learning_rate: float,
                 betas: Sequence[float] = (0.9, 0.999), eps: float = 1e-8):
        super().__init__(params, learning_rate)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.first_moment = [np.zeros_like(p.data) for p in self.params]
        self.second_moment = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self._check_grads()
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self.first_moment, self.second_moment):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)
