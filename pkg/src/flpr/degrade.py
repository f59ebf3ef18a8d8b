"""Resolution and JPEG degradation of grayscale plate images.

The JPEG step is simulated in the quantization domain (level shift, 8x8 DCT,
quantize/dequantize, inverse DCT). Entropy coding is lossless and skipped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .qtables import QfOutOfRange, standard_qtable, validate_table

R_W_MIN, R_W_MAX = 20, 180


def _dct_matrix(n: int = 8) -> np.ndarray:
    k = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    c = np.cos(np.pi * (2 * x + 1) * k / (2 * n)) * math.sqrt(2.0 / n)
    c[0] /= math.sqrt(2.0)
    return c


DCT8 = _dct_matrix()
DCT8.setflags(write=False)


def blockwise_dct(block: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DCT-II of one 8x8 block or a stack (..., 8, 8)."""
    return DCT8 @ np.asarray(block, dtype=np.float64) @ DCT8.T


def blockwise_idct(coeffs: np.ndarray) -> np.ndarray:
    return DCT8.T @ np.asarray(coeffs, dtype=np.float64) @ DCT8


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _resize_axis(img: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    n_in = img.shape[axis]
    if n_out == n_in:
        return img
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    a = np.take(img, i0, axis=axis)
    b = np.take(img, i1, axis=axis)
    shape = [1] * img.ndim
    shape[axis] = n_out
    frac = frac.reshape(shape)
    return a * (1.0 - frac) + b * frac


def bilinear_resize(img: np.ndarray, w: int, h: int) -> np.ndarray:
    """Separable bilinear resize, half-pixel centres, clamped edges, no prefilter."""
    if w < 1 or h < 1:
        raise ValueError(f"target size must be positive, got {w}x{h}")
    img = np.asarray(img, dtype=np.float64)
    out = _resize_axis(img, w, axis=1)
    return _resize_axis(out, h, axis=0)


def jpeg_degrade(img: np.ndarray, qtable) -> np.ndarray:
    """Quantization-domain JPEG round trip of a [0, 1] grayscale image."""
    q = validate_table(qtable).astype(np.float64)
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    ph, pw = -h % 8, -w % 8
    x = np.pad(img * 255.0 - 128.0, ((0, ph), (0, pw)), mode="edge")
    H, W = x.shape
    blocks = x.reshape(H // 8, 8, W // 8, 8).transpose(0, 2, 1, 3)
    coeffs = blockwise_dct(blocks)
    coeffs = round_half_away(coeffs / q) * q
    recon = blockwise_idct(coeffs).transpose(0, 2, 1, 3).reshape(H, W)
    recon = np.clip(recon[:h, :w] + 128.0, 0.0, 255.0)
    return recon / 255.0


def normalize(img: np.ndarray) -> np.ndarray:
    """Clip to [0, 1] and snap to the 8-bit grid a camera would deliver."""
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(img * 255.0 + 0.5) / 255.0


@dataclass(frozen=True)
class DegradeParams:
    r_w: int
    qf: int
    seed: int = 0

    def __post_init__(self):
        if not R_W_MIN <= self.r_w <= R_W_MAX:
            raise ValueError(f"r_w must lie in [{R_W_MIN}, {R_W_MAX}], got {self.r_w}")
        if not 1 <= self.qf <= 100:
            raise QfOutOfRange(f"qf must lie in [1, 100], got {self.qf}")


def downsampled_height(height: int, width: int, r_w: int) -> int:
    return max(1, math.floor(height * r_w / width + 0.5))


def degrade_pipeline(img: np.ndarray, p: DegradeParams, qtable=None) -> np.ndarray:
    """normalize -> bilinear down to width r_w -> JPEG -> bilinear back up.

    ``qtable`` overrides the standard table for ``p.qf`` (e.g. a foreign
    camera table whose QF must later be estimated).
    """
    img = normalize(img)
    h, w = img.shape
    small = bilinear_resize(img, p.r_w, downsampled_height(h, w, p.r_w))
    table = standard_qtable(p.qf) if qtable is None else qtable
    small = jpeg_degrade(small, table)
    return bilinear_resize(small, w, h)
