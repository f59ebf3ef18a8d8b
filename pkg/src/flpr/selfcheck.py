"""Finite-difference gradient suite over every differentiable op and a tiny model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import LPTransformer, ModelConfig

OP_TOL = 1e-6
MODEL_TOL = 1e-5

TINY_CONFIG = ModelConfig(d_model=8, seq_w=6, enc_layers=1, dec_layers=1, heads=2, d_ff=16,
                          k_classes=3, vocab_size=7, max_decode_len=5)


@dataclass(frozen=True)
class GradResult:
    name: str
    error: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.error < self.tol


def _leaf(rng, *shape, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


def _projected(rng, shape, op):
    w = Tensor(rng.normal(size=shape))
    return lambda *xs: ad.mul(op(*xs), w)


def op_cases(rng: np.random.Generator) -> list[tuple[str, tuple, Callable]]:
    r = rng
    mask = np.triu(np.ones((3, 3), dtype=bool), 1)
    drop_rng_seed = int(r.integers(2**31))
    return [
        ("add", (_leaf(r, 3, 4), _leaf(r, 4)), ad.add),
        ("neg", (_leaf(r, 3, 2),), ad.neg),
        ("mul", (_leaf(r, 3, 4), _leaf(r, 3, 1)), ad.mul),
        ("scale", (_leaf(r, 2, 5),), lambda x: ad.scale(x, -2.5)),
        ("matmul", (_leaf(r, 2, 3, 4), _leaf(r, 4, 5)), ad.matmul),
        ("linear", (_leaf(r, 2, 3, 4), _leaf(r, 4, 5), _leaf(r, 5)), ad.linear),
        ("reshape", (_leaf(r, 2, 6),), lambda x: ad.reshape(x, (3, 4))),
        ("transpose", (_leaf(r, 2, 3, 4),), lambda x: ad.transpose(x, (2, 0, 1))),
        ("swapaxes", (_leaf(r, 2, 3, 4),), lambda x: ad.swapaxes(x, 0, 2)),
        ("getitem", (_leaf(r, 4, 3),), lambda x: x[np.array([0, 2, 2])]),
        ("concat", (_leaf(r, 2, 3), _leaf(r, 4, 3)), lambda a, b: ad.concat([a, b], axis=0)),
        ("sum", (_leaf(r, 3, 5),), lambda x: ad.tsum(x, axis=1)),
        ("mean", (_leaf(r, 3, 5),), lambda x: ad.mean(x, axis=0)),
        ("relu", (_leaf(r, 3, 5),), ad.relu),
        ("exp", (_leaf(r, 3, 5),), ad.exp),
        ("log", (_leaf(r, 3, 5, low=0.5, high=2.0),), ad.log),
        ("tanh", (_leaf(r, 3, 5),), ad.tanh),
        ("masked_fill", (_leaf(r, 3, 3),), lambda x: ad.masked_fill(x, mask, 0.0)),
        ("softmax", (_leaf(r, 3, 5, low=-3, high=3),), _projected(r, (3, 5), ad.softmax)),
        ("log_softmax", (_leaf(r, 3, 5),), _projected(r, (3, 5), ad.log_softmax)),
        ("layer_norm", (_leaf(r, 4, 6), _leaf(r, 6), _leaf(r, 6)), _projected(r, (4, 6), ad.layer_norm)),
        ("embedding", (_leaf(r, 6, 3),), _projected(r, (2, 2, 3), lambda t: ad.embedding(t, [[0, 5], [5, 2]]))),
        ("dropout", (_leaf(r, 4, 5),),
         lambda x: ad.dropout(x, 0.3, True, np.random.default_rng(drop_rng_seed))),
        ("cross_entropy", (_leaf(r, 5, 4, low=-2, high=2),),
         lambda x: ad.cross_entropy(x, [0, 3, 1, 3, 2], ignore_id=2)),
    ]


def _scalar(fn):
    def wrapped():
        out = fn()
        return out if out.data.ndim == 0 else ad.tsum(out)
    return wrapped


def check_ops(seed: int = 0) -> list[GradResult]:
    out = []
    for name, inputs, fn in op_cases(np.random.default_rng(seed)):
        errs = ad.check_gradients(_scalar(lambda fn=fn, inputs=inputs: fn(*inputs)), inputs)
        out.append(GradResult(name, max(errs), OP_TOL))
    return out


def check_model(seed: int = 0) -> GradResult:
    """Joint relative error over all parameters of a tiny model, double precision, eval mode."""
    model = LPTransformer(TINY_CONFIG, seed=seed).eval()
    rng = np.random.default_rng(seed)
    # the class table starts at zero; random rows make its gradient path non-trivial
    model.knowledge.data[:] = rng.normal(size=model.knowledge.shape)
    images = rng.random((2, TINY_CONFIG.d_model, TINY_CONFIG.seq_w))
    targets = np.array([[4, 0, 1, 5, 6], [4, 2, 5, 6, 6]])
    err = ad.check_gradients_joint(lambda: model.loss(images, [0, 2], targets), model.parameters())
    return GradResult("end_to_end", err, MODEL_TOL)


def run_gradcheck(seed: int = 0) -> list[GradResult]:
    return check_ops(seed) + [check_model(seed)]
