"""JPEG luminance quantization tables, quality-factor estimation and QF classes.

Tables follow the libjpeg quality scaling of the ITU-T T.81 Annex K
luminance table. QF estimation is a nearest-neighbour search over the 100
standard tables in squared Euclidean distance.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

# ITU-T T.81 Annex K, Table K.1 (luminance), row-major.
ANNEX_K_LUMINANCE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.int64,
)

DEFAULT_CLASS_COUNTS = (5, 10, 25, 50, 100)


class QfOutOfRange(ValueError):
    pass


class InvalidTable(ValueError):
    pass


def _check_qf(qf: int) -> int:
    if isinstance(qf, bool) or int(qf) != qf or not 1 <= qf <= 100:
        raise QfOutOfRange(f"quality factor must be an integer in [1, 100], got {qf!r}")
    return int(qf)


def validate_table(m) -> np.ndarray:
    arr = np.asarray(m)
    if arr.shape != (8, 8):
        raise InvalidTable(f"quantization table must be 8x8, got shape {arr.shape}")
    if not np.all(np.equal(np.mod(arr, 1), 0)):
        raise InvalidTable("quantization table entries must be integers")
    arr = arr.astype(np.int64)
    if arr.min() < 1 or arr.max() > 255:
        raise InvalidTable("quantization table entries must lie in [1, 255]")
    return arr


def quality_scale(qf: int) -> int:
    qf = _check_qf(qf)
    return 5000 // qf if qf < 50 else 200 - 2 * qf


def standard_qtable(qf: int) -> np.ndarray:
    """libjpeg-scaled luminance table for ``qf`` (a fresh 8x8 int array)."""
    return _standard_tables()[_check_qf(qf) - 1].copy()


@lru_cache(maxsize=1)
def _standard_tables() -> np.ndarray:
    out = np.empty((100, 8, 8), dtype=np.int64)
    for qf in range(1, 101):
        s = quality_scale(qf)
        out[qf - 1] = np.clip((s * ANNEX_K_LUMINANCE + 50) // 100, 1, 255)
    out.setflags(write=False)
    return out


def table_distances(m) -> np.ndarray:
    """Squared distance of ``m`` to the standard table of each QF 1..100."""
    m = validate_table(m)
    diff = _standard_tables() - m[None]
    return (diff * diff).sum(axis=(1, 2))


def estimate_qf(m) -> int:
    """Closest standard QF to table ``m``; ties go to the larger QF."""
    d = table_distances(m)
    # argmin returns the first minimum, so scan from QF=100 downwards
    return int(100 - np.argmin(d[::-1]))


@dataclass(frozen=True)
class KnowledgeClass:
    k_total: int
    index: int

    def __post_init__(self):
        if self.k_total < 1:
            raise ValueError(f"k_total must be positive, got {self.k_total}")
        if not 0 <= self.index < self.k_total:
            raise ValueError(f"class index {self.index} outside [0, {self.k_total})")


def qf_to_class(qf: int, k: int) -> KnowledgeClass:
    """Map QF 1..100 onto ``k`` equal-width bins: ceil(k*qf/100) - 1."""
    qf = _check_qf(qf)
    if k < 1:
        raise ValueError(f"number of classes must be positive, got {k}")
    return KnowledgeClass(k, (k * qf + 99) // 100 - 1)


def parse_table(text: str) -> np.ndarray:
    """Parse 64 whitespace-separated integers (row-major) into a table."""
    tokens = text.split()
    if len(tokens) != 64:
        raise InvalidTable(f"expected 64 integers, found {len(tokens)}")
    try:
        values = [int(t) for t in tokens]
    except ValueError as exc:
        raise InvalidTable(f"non-integer entry in table: {exc}") from None
    return validate_table(np.array(values).reshape(8, 8))


def format_table(m) -> str:
    m = validate_table(m)
    return "\n".join(" ".join(f"{v:3d}" for v in row) for row in m) + "\n"
