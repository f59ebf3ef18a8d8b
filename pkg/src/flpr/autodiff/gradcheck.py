"""Central finite-difference checks against the reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_grad(fn: Callable[[], Tensor], x: Tensor, h: float = 1e-5) -> np.ndarray:
    """d fn() / d x by central differences, perturbing ``x.data`` in place."""
    grad = np.zeros_like(x.data, dtype=np.float64)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn().data.sum())
        flat[i] = orig - h
        fm = float(fn().data.sum())
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.linalg.norm(analytic - numeric)
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(diff / denom)


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> list[float]:
    """Relative error per input between backward() and central differences.

    ``fn`` must rebuild the graph from ``inputs`` each call and be deterministic.
    Non-scalar outputs are reduced with a plain sum.
    """
    for x in inputs:
        x.grad = None
    out = fn()
    total = out if out.size == 1 else out.sum()
    total.backward()
    errors = []
    for x in inputs:
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
        errors.append(relative_error(analytic, numerical_grad(fn, x, h)))
    return errors


def check_gradients_joint(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """One relative error over the concatenation of all input gradients.

    Suited to whole models, where some parameters (e.g. attention key biases)
    have an exactly-zero gradient and a per-tensor ratio would be noise/noise.
    """
    for x in inputs:
        x.grad = None
    out = fn()
    (out if out.size == 1 else out.sum()).backward()
    analytic = np.concatenate([(np.zeros_like(x.data) if x.grad is None else x.grad).ravel() for x in inputs])
    numeric = np.concatenate([numerical_grad(fn, x, h).ravel() for x in inputs])
    return relative_error(analytic, numeric)
