"""Adam and reduce-on-plateau learning-rate scheduling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeMismatch, Tensor


class Adam:
    """Bias-corrected Adam over a fixed list of parameters."""

    def __init__(self, params: list[Tensor], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: list[np.ndarray | None] | None = None) -> None:
        if grads is None:
            grads = [p.grad for p in self.params]
        if len(grads) != len(self.params):
            raise ShapeMismatch("one gradient per parameter expected")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1**self.t
        corr2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g is None:
                continue
            if g.shape != p.shape:
                raise ShapeMismatch(f"gradient {g.shape} for parameter {p.shape}")
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            mhat = m / corr1
            vhat = v / corr2
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_dict(self) -> dict:
        return {"t": self.t, "lr": self.lr, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}


@dataclass
class PlateauScheduler:
    """Multiply the learning rate by ``factor`` once the metric stalls.

    A metric counts as an improvement only if it is strictly below the best
    seen so far. The rate drops when the count of consecutive non-improving
    epochs exceeds ``patience``; the count then restarts.
    """

    optimizer: Adam
    factor: float = 0.1
    patience: int = 3
    best: float = float("inf")
    bad_epochs: int = 0
    history: list[float] = field(default_factory=list)

    def step(self, metric: float) -> float:
        self.history.append(metric)
        if metric < self.best:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs > self.patience:
                self.optimizer.lr *= self.factor
                self.bad_epochs = 0
        return self.optimizer.lr
