"""Side-informed encoder-decoder Transformer over image column slices.

Each image column is one encoder token of width H, so d_model equals the image
height. The compression class selects a learned row that is added to every
column (after sinusoidal position encoding) before embedding dropout.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import LayerNorm, Linear, Module, Tensor
from .plates import MAX_LABEL_LEN


class ConfigError(ValueError):
    pass


class ClassOutOfRange(ValueError):
    pass


class OddDModel(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 40
    seq_w: int = 180
    enc_layers: int = 5
    dec_layers: int = 5
    heads: int = 8
    d_ff: int = 2160
    k_classes: int = 0
    vocab_size: int = 43
    max_decode_len: int = MAX_LABEL_LEN
    dropout_emb: float = 0.5
    dropout_inner: float = 0.1

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        if self.k_classes < 0:
            raise ConfigError("k_classes must be >= 0")
        if self.max_decode_len < 3:
            raise ConfigError("max_decode_len must be >= 3")
        if self.vocab_size < 4:
            raise ConfigError("vocab_size must leave room for three special tokens")

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads

    @property
    def sos(self) -> int:
        return self.vocab_size - 3

    @property
    def eos(self) -> int:
        return self.vocab_size - 2

    @property
    def pad(self) -> int:
        return self.vocab_size - 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        return cls(**d)

    def with_(self, **changes) -> ModelConfig:
        return replace(self, **changes)


def full_config(k_classes: int = 50, vocab_size: int = 44) -> ModelConfig:
    """Full-size profile: 180x40 input, 5+5 layers, 8 heads, d_ff 2160."""
    return ModelConfig(k_classes=k_classes, vocab_size=vocab_size)


def desk_config(k_classes: int = 0, vocab_size: int = 43) -> ModelConfig:
    """Desk-scale profile for 120x28 plates on a single CPU core."""
    return ModelConfig(d_model=28, seq_w=120, enc_layers=2, dec_layers=2, heads=4, d_ff=256,
                       k_classes=k_classes, vocab_size=vocab_size)


def param_count(cfg: ModelConfig) -> int:
    """Closed-form count of trainable scalars."""
    d, f, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
    attn = 4 * (d * d + d)
    ffn = d * f + f + f * d + d
    ln = 2 * d
    enc = cfg.enc_layers * (attn + ffn + 2 * ln)
    dec = cfg.dec_layers * (2 * attn + ffn + 3 * ln)
    return enc + dec + v * d + (d * v + v) + cfg.k_classes * d


def positional_encoding(seq_len: int, d_model: int) -> np.ndarray:
    """Sinusoidal table: sin on even dims, cos on odd dims, base 10000."""
    if d_model % 2:
        raise OddDModel(f"d_model must be even, got {d_model}")
    pos = np.arange(seq_len)[:, None]
    i2 = np.arange(0, d_model, 2)[None, :]
    angle = pos / np.power(10000.0, i2 / d_model)
    pe = np.empty((seq_len, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def column_slices(images: np.ndarray, height: int | None = None, width: int | None = None) -> np.ndarray:
    """(…, H, W) images to (…, W, H) sequences: slice w is column w top to bottom."""
    images = np.asarray(images)
    if images.ndim < 2:
        raise ad.ShapeMismatch(f"expected an image or image batch, got shape {images.shape}")
    if (height is not None and images.shape[-2] != height) or (width is not None and images.shape[-1] != width):
        raise ad.ShapeMismatch(f"image shape {images.shape[-2:]} != configured {(height, width)}")
    return np.swapaxes(images, -1, -2)


def causal_mask(n: int) -> np.ndarray:
    """True above the diagonal: position t may not look at positions > t."""
    return np.triu(np.ones((n, n), dtype=bool), k=1)


def multi_head_attention(q_in: Tensor, k_in: Tensor, v_in: Tensor, wq: Linear, wk: Linear, wv: Linear,
                         wo: Linear, heads: int, mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention softmax(Q K^T / sqrt(d_k)) V per head."""
    B, Tq, d = q_in.shape
    Tk = k_in.shape[1]
    if k_in.shape[-1] != d or v_in.shape[-1] != d or v_in.shape[1] != Tk:
        raise ad.ShapeMismatch(f"attention inputs {q_in.shape}, {k_in.shape}, {v_in.shape}")
    dk = d // heads
    # 1/sqrt(d_k) is applied to Q, which is cheaper than scaling the score matrix
    q = ad.transpose(ad.reshape(ad.scale(wq(q_in), 1.0 / math.sqrt(dk)), (B, Tq, heads, dk)), (0, 2, 1, 3))
    kt = ad.transpose(ad.reshape(wk(k_in), (B, Tk, heads, dk)), (0, 2, 3, 1))
    v = ad.transpose(ad.reshape(wv(v_in), (B, Tk, heads, dk)), (0, 2, 1, 3))
    scores = ad.matmul(q, kt)
    if mask is not None:
        scores = ad.masked_fill(scores, mask, -np.inf)
    ctx = ad.matmul(ad.softmax(scores, axis=-1), v)
    ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (B, Tq, d))
    return wo(ctx)


class MultiHeadAttention(Module):
    def __init__(self, d_model: int, heads: int, rng: np.random.Generator, dtype=np.float64):
        self.heads = heads
        self.wq = Linear(d_model, d_model, rng, dtype=dtype)
        self.wk = Linear(d_model, d_model, rng, dtype=dtype)
        self.wv = Linear(d_model, d_model, rng, dtype=dtype)
        self.wo = Linear(d_model, d_model, rng, dtype=dtype)

    def __call__(self, q_in, k_in, v_in, mask=None) -> Tensor:
        return multi_head_attention(q_in, k_in, v_in, self.wq, self.wk, self.wv, self.wo, self.heads, mask)


class FeedForward(Module):
    def __init__(self, d_model: int, d_ff: int, rng, dtype=np.float64):
        self.fc1 = Linear(d_model, d_ff, rng, dtype=dtype)
        self.fc2 = Linear(d_ff, d_model, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ad.relu(self.fc1(x)))


class EncoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng, drop, dtype=np.float64):
        self.attn = MultiHeadAttention(cfg.d_model, cfg.heads, rng, dtype)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, rng, dtype)
        self.ln1 = LayerNorm(cfg.d_model, dtype=dtype)
        self.ln2 = LayerNorm(cfg.d_model, dtype=dtype)
        self.drop = drop

    def __call__(self, x: Tensor) -> Tensor:
        x = self.ln1(x + self.drop(self.attn(x, x, x)))
        return self.ln2(x + self.drop(self.ff(x)))


class DecoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng, drop, dtype=np.float64):
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.heads, rng, dtype)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.heads, rng, dtype)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, rng, dtype)
        self.ln1 = LayerNorm(cfg.d_model, dtype=dtype)
        self.ln2 = LayerNorm(cfg.d_model, dtype=dtype)
        self.ln3 = LayerNorm(cfg.d_model, dtype=dtype)
        self.drop = drop

    def __call__(self, y: Tensor, memory: Tensor, mask: np.ndarray) -> Tensor:
        y = self.ln1(y + self.drop(self.self_attn(y, y, y, mask)))
        y = self.ln2(y + self.drop(self.cross_attn(y, memory, memory)))
        return self.ln3(y + self.drop(self.ff(y)))


class LPTransformer(Module):
    """Encoder-decoder plate reader with optional compression-class embedding."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float64):
        self.cfg = cfg
        self.seed = seed
        self._rng = np.random.default_rng([seed, 0])
        rng = np.random.default_rng(seed)
        source = lambda: self._rng  # noqa: E731
        self.drop_emb = ad.Dropout(cfg.dropout_emb, source)
        self.drop = ad.Dropout(cfg.dropout_inner, source)
        if cfg.k_classes:
            # zero rows: an untrained side-informed model equals the baseline, and
            # the remaining weights match the K=0 model drawn from the same seed
            self.knowledge = ad.parameter(np.zeros((cfg.k_classes, cfg.d_model), dtype=dtype))
        else:
            self.knowledge = None
        self.encoder = [EncoderLayer(cfg, rng, self.drop, dtype) for _ in range(cfg.enc_layers)]
        self.token_emb = ad.parameter(ad.nn.xavier_uniform(rng, cfg.vocab_size, cfg.d_model, dtype))
        self.decoder = [DecoderLayer(cfg, rng, self.drop, dtype) for _ in range(cfg.dec_layers)]
        self.out = Linear(cfg.d_model, cfg.vocab_size, rng, dtype=dtype)
        self._pe = positional_encoding(max(cfg.seq_w, cfg.max_decode_len), cfg.d_model)

    @property
    def dtype(self):
        return self.token_emb.dtype

    def reseed_dropout(self, step: int) -> None:
        """Dropout masks depend only on (seed, step)."""
        self._rng = np.random.default_rng([self.seed, int(step) + 1])

    # -- encoder side ---------------------------------------------------
    def _class_ids(self, classes, batch: int) -> np.ndarray | None:
        if not self.cfg.k_classes:
            return None
        if classes is None:
            raise ClassOutOfRange("this model embeds a compression class; none given")
        ids = np.broadcast_to(np.asarray(classes, dtype=np.int64), (batch,))
        if ids.min() < 0 or ids.max() >= self.cfg.k_classes:
            raise ClassOutOfRange(f"class ids must lie in [0, {self.cfg.k_classes})")
        return ids

    def knowledge_embed(self, x_pos: Tensor, classes) -> Tensor:
        """Add the class row to every column, then embedding dropout."""
        ids = self._class_ids(classes, x_pos.shape[0])
        if ids is not None:
            e = ad.embedding(self.knowledge, ids)
            x_pos = x_pos + ad.reshape(e, (x_pos.shape[0], 1, self.cfg.d_model))
        return self.drop_emb(x_pos)

    def embed_input(self, images, classes=None) -> Tensor:
        images = np.asarray(images, dtype=self.dtype)
        if images.ndim == 2:
            images = images[None]
        seq = column_slices(images, self.cfg.d_model, self.cfg.seq_w)
        x_pos = Tensor(seq + self._pe[: seq.shape[1]].astype(self.dtype))
        return self.knowledge_embed(x_pos, classes)

    def encode(self, x_emb: Tensor) -> Tensor:
        x = x_emb
        for layer in self.encoder:
            x = layer(x)
        return x

    # -- decoder side ---------------------------------------------------
    def embed_targets(self, tokens) -> Tensor:
        tokens = np.asarray(tokens, dtype=np.int64)
        e = ad.embedding(self.token_emb, tokens)
        return self.drop(e + Tensor(self._pe[: tokens.shape[1]].astype(self.dtype)))

    def decode(self, y_emb: Tensor, memory: Tensor) -> Tensor:
        mask = causal_mask(y_emb.shape[1])
        y = y_emb
        for layer in self.decoder:
            y = layer(y, memory, mask)
        return self.out(y)

    def forward(self, images, classes, targets) -> Tensor:
        """Teacher-forced logits (B, T-1, V) predicting targets[:, 1:]."""
        targets = np.asarray(targets, dtype=np.int64)
        if targets.ndim == 1:
            targets = targets[None]
        if np.any(targets[:, 0] != self.cfg.sos):
            raise ValueError("target sequences must start with SOS")
        memory = self.encode(self.embed_input(images, classes))
        return self.decode(self.embed_targets(targets[:, :-1]), memory)

    def loss(self, images, classes, targets) -> Tensor:
        targets = np.asarray(targets, dtype=np.int64)
        if targets.ndim == 1:
            targets = targets[None]
        logits = self.forward(images, classes, targets)
        return ad.cross_entropy(logits, targets[:, 1:], ignore_id=self.cfg.pad)

    def greedy_decode(self, images, classes=None) -> list[list[int]]:
        """Argmax decoding from SOS; returns glyph ids per image, specials stripped."""
        cfg = self.cfg
        was_training = self.training
        self.eval()
        try:
            with ad.no_grad():
                memory = self.encode(self.embed_input(images, classes))
                B = memory.shape[0]
                tokens = np.full((B, 1), cfg.sos, dtype=np.int64)
                done = np.zeros(B, dtype=bool)
                for _ in range(cfg.max_decode_len - 2):
                    logits = self.decode(self.embed_targets(tokens), memory).data[:, -1]
                    nxt = np.argmax(logits, axis=-1)
                    nxt = np.where(done, cfg.pad, nxt)
                    done |= nxt == cfg.eos
                    tokens = np.concatenate([tokens, nxt[:, None]], axis=1)
                    if done.all():
                        break
        finally:
            self.train(was_training)
        out = []
        for row in tokens[:, 1:]:
            ids = []
            for t in row.tolist():
                if t == cfg.eos or t == cfg.pad:
                    break
                if t < cfg.sos:
                    ids.append(t)
            out.append(ids)
        return out
