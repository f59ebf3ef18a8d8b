"""Teacher-forced training with Adam + plateau schedule, and evaluation."""

from __future__ import annotations

import hashlib
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, PlateauScheduler
from .checkpoint import Checkpoint
from .data import Corpus
from .metrics import EvalReport, score
from .model import LPTransformer, ModelConfig
from .plates import GERMAN, Alphabet
from .qtables import estimate_qf, qf_to_class, standard_qtable

log = logging.getLogger(__name__)

SIDE_INFO_MODES = ("oracle", "estimated", "disabled")


class NonFiniteLoss(RuntimeError):
    pass


class ModeUnavailable(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-4
    seed: int = 0
    factor: float = 0.1
    patience: int = 3
    dtype: str = "float32"
    # stop once greedy decoding reproduces every training label; checked every n epochs (0 = never)
    stop_on_train_acc_every: int = 0
    log_every: int = 1


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    model: LPTransformer
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1


def class_ids(qf: np.ndarray, k: int, mode: str = "oracle", tables=None) -> np.ndarray | None:
    """Knowledge class per sample for the given side-information mode."""
    if mode not in SIDE_INFO_MODES:
        raise ValueError(f"unknown side-information mode {mode!r}")
    if mode == "disabled":
        if k:
            raise ModeUnavailable(f"model embeds K={k} classes and needs side information")
        return None
    if not k:
        raise ModeUnavailable(f"side information mode {mode!r} requested for a model without embedding")
    qf = np.asarray(qf)
    if mode == "estimated":
        tables = [standard_qtable(int(q)) for q in qf] if tables is None else tables
        qf = np.array([estimate_qf(t) for t in tables])
    return np.array([qf_to_class(int(q), k).index for q in qf], dtype=np.int64)


def weights_digest(model: LPTransformer) -> str:
    h = hashlib.sha256()
    for name, p in model.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


def mean_loss(model: LPTransformer, corpus: Corpus, classes, batch_size: int = 256) -> float:
    """Token-weighted teacher-forced loss in eval mode, no graph, no updates."""
    was_training = model.training
    model.eval()
    total, count = 0.0, 0
    pad = model.cfg.pad
    try:
        with ad.no_grad():
            for s in range(0, len(corpus), batch_size):
                sl = slice(s, s + batch_size)
                tgt = corpus.targets[sl]
                n = int((tgt[:, 1:] != pad).sum())
                c = None if classes is None else classes[sl]
                total += float(model.loss(corpus.images[sl], c, tgt).data) * n
                count += n
    finally:
        model.train(was_training)
    return total / count


def decode_corpus(model: LPTransformer, corpus: Corpus, classes, alphabet: Alphabet = GERMAN,
                  batch_size: int = 256) -> list[str]:
    preds = []
    for s in range(0, len(corpus), batch_size):
        c = None if classes is None else classes[s: s + batch_size]
        for ids in model.greedy_decode(corpus.images[s: s + batch_size], c):
            preds.append("".join(alphabet.glyph_of(t) for t in ids))
    return preds


def evaluate(model: LPTransformer | Checkpoint, corpus: Corpus, side_info_mode: str = "oracle",
             alphabet: Alphabet = GERMAN, tables=None) -> EvalReport:
    """acc_lp / CER with a per-(qf, r_w) breakdown."""
    if isinstance(model, Checkpoint):
        model = model.build_model()
    if model.cfg.vocab_size != alphabet.vocab_size:
        raise ValueError(f"model vocabulary {model.cfg.vocab_size} != alphabet {alphabet.vocab_size}")
    classes = class_ids(corpus.qf, model.cfg.k_classes, side_info_mode, tables)
    preds = decode_corpus(model, corpus, classes, alphabet)
    keys = list(zip(corpus.qf.tolist(), corpus.r_w.tolist()))
    return score(preds, corpus.labels, keys)


def train(model_cfg: ModelConfig, train_set: Corpus, val_set: Corpus, cfg: TrainConfig | None = None,
          model: LPTransformer | None = None) -> TrainResult:
    """Train with oracle side information; keep the best-validation-loss weights."""
    cfg = cfg or TrainConfig()
    dtype = np.dtype(cfg.dtype)
    model = model or LPTransformer(model_cfg, seed=cfg.seed, dtype=dtype)
    k = model_cfg.k_classes
    mode = "oracle" if k else "disabled"
    train_cls = class_ids(train_set.qf, k, mode)
    val_cls = class_ids(val_set.qf, k, mode)
    opt = Adam(model.parameters(), lr=cfg.lr)
    sched = PlateauScheduler(opt, factor=cfg.factor, patience=cfg.patience)
    order_rng = np.random.default_rng([cfg.seed, 7])

    history: list[dict] = []
    best_loss, best_state, best_epoch = math.inf, model.state_dict(), -1
    step = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        model.train()
        order = order_rng.permutation(len(train_set))
        losses = []
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s: s + cfg.batch_size]
            model.reseed_dropout(step)
            opt.zero_grad()
            c = None if train_cls is None else train_cls[idx]
            loss = model.loss(train_set.images[idx], c, train_set.targets[idx])
            value = float(loss.data)
            if not math.isfinite(value):
                raise NonFiniteLoss(f"loss {value} at epoch {epoch}, step {step}")
            loss.backward()
            opt.step()
            losses.append(value)
            step += 1

        val_loss = mean_loss(model, val_set, val_cls)
        lr_used = opt.lr
        sched.step(val_loss)
        if val_loss < best_loss:
            best_loss, best_state, best_epoch = val_loss, model.state_dict(), epoch
        rec = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_loss": val_loss,
               "lr": lr_used, "seconds": time.perf_counter() - t0}
        if cfg.stop_on_train_acc_every and (epoch + 1) % cfg.stop_on_train_acc_every == 0:
            rec["train_acc_lp"] = evaluate(model, train_set, mode).acc_lp
        history.append(rec)
        if cfg.log_every and epoch % cfg.log_every == 0:
            log.info("epoch %d train %.4f val %.4f lr %.1e (%.1fs)", epoch, rec["train_loss"],
                     val_loss, lr_used, rec["seconds"])
        if rec.get("train_acc_lp") == 1.0:
            break

    if cfg.stop_on_train_acc_every:
        # overfitting runs are judged on the final weights
        best_state, best_epoch = model.state_dict(), len(history) - 1
    model.load_state_dict(best_state)
    model.eval()
    ckpt = Checkpoint.from_model(model, seed=cfg.seed, best_epoch=best_epoch, best_val_loss=best_loss,
                                 epochs_run=len(history))
    return TrainResult(ckpt, model, history, best_epoch)
