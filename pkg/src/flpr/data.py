"""Seeded dataset specs, sample streams, manifests and in-memory corpora."""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .degrade import R_W_MAX, R_W_MIN, DegradeParams, degrade_pipeline
from .plates import GERMAN, PLATE_HEIGHT, PLATE_WIDTH, Alphabet, encode_label, render_text, sample_plate_string
from .qtables import qf_to_class

# quality factors {4i+1 | i in 0..24} plus 100
QF_GRID_FULL = tuple([4 * i + 1 for i in range(25)] + [100])
# widths {5i | i in 4..36}
RW_GRID_FULL = tuple(5 * i for i in range(4, 37))
RW_GRID_LOW = tuple(range(20, 26))

GRID_PRESETS = {
    "full": (QF_GRID_FULL, RW_GRID_FULL),
    "low": (QF_GRID_FULL, RW_GRID_LOW),
}

WORKERS_ENV = "FLPR_WORKERS"


@dataclass(frozen=True)
class DatasetSpec:
    """What to generate.

    In ``random`` mode ``sample_count`` plates each get their own (r_w, qf).
    In a grid mode the same ``sample_count`` plates are degraded once per
    (qf, r_w) cell of the preset grid.
    """

    sample_count: int
    base_seed: int = 0
    r_w_range: tuple[int, int] = (R_W_MIN, R_W_MAX)
    qf_range: tuple[int, int] = (1, 100)
    grid: str = "random"
    width: int = PLATE_WIDTH
    height: int = PLATE_HEIGHT
    chars_range: tuple[int, int] = (3, 7)
    k_classes: int = 100

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        lo, hi = self.r_w_range
        if not R_W_MIN <= lo <= hi <= R_W_MAX:
            raise ValueError(f"r_w range {self.r_w_range} outside [{R_W_MIN}, {R_W_MAX}]")
        lo, hi = self.qf_range
        if not 1 <= lo <= hi <= 100:
            raise ValueError(f"qf range {self.qf_range} outside [1, 100]")
        if self.grid != "random" and self.grid not in GRID_PRESETS:
            raise ValueError(f"unknown grid mode {self.grid!r}")
        object.__setattr__(self, "r_w_range", tuple(self.r_w_range))
        object.__setattr__(self, "qf_range", tuple(self.qf_range))
        object.__setattr__(self, "chars_range", tuple(self.chars_range))

    def cells(self) -> list[tuple[int, int]]:
        """(qf, r_w) grid cells in generation order; empty in random mode."""
        if self.grid == "random":
            return []
        qfs, rws = GRID_PRESETS[self.grid]
        return [(q, r) for q in qfs for r in rws]

    def __len__(self) -> int:
        return self.sample_count * max(1, len(self.cells()))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> DatasetSpec:
        return cls(**d)


def desk_spec(sample_count: int, base_seed: int = 0, **overrides) -> DatasetSpec:
    """120x28 plates with 4-6 letters/digits."""
    kw = dict(width=120, height=28, chars_range=(4, 6), r_w_range=(20, 120))
    kw.update(overrides)
    return DatasetSpec(sample_count, base_seed, **kw)


def sample_seed(base_seed: int, index: int) -> int:
    """Independent 64-bit seed per sample index."""
    state = np.random.SeedSequence([int(base_seed) & 0xFFFF_FFFF_FFFF_FFFF, index]).generate_state(1, np.uint64)
    return int(state[0])


@dataclass
class PlateSample:
    index: int
    label: str
    qf: int
    r_w: int
    seed: int
    c_n: int
    image: np.ndarray | None = field(default=None, repr=False)

    def record(self) -> dict:
        return {"index": self.index, "label": self.label, "qf": self.qf, "r_w": self.r_w,
                "seed": self.seed, "c_n": self.c_n}


def _records(spec: DatasetSpec) -> Iterator[dict]:
    cells = spec.cells()
    lo_c, hi_c = spec.chars_range
    if not cells:
        for i in range(spec.sample_count):
            seed = sample_seed(spec.base_seed, i)
            rng = np.random.default_rng([seed, 1])
            r_w = int(rng.integers(spec.r_w_range[0], spec.r_w_range[1] + 1))
            qf = int(rng.integers(spec.qf_range[0], spec.qf_range[1] + 1))
            label = sample_plate_string(seed, lo_c, hi_c).text
            yield {"index": i, "label": label, "qf": qf, "r_w": r_w, "seed": seed}
        return
    seeds = [sample_seed(spec.base_seed, j) for j in range(spec.sample_count)]
    plates = [(s, sample_plate_string(s, lo_c, hi_c).text) for s in seeds]
    i = 0
    for qf, r_w in cells:
        for seed, label in plates:
            yield {"index": i, "label": label, "qf": qf, "r_w": r_w, "seed": seed}
            i += 1


def render_record(rec: dict, width: int, height: int) -> np.ndarray:
    clean = render_text(rec["label"], width, height)
    return degrade_pipeline(clean, DegradeParams(rec["r_w"], rec["qf"], rec["seed"]))


def build_dataset(spec: DatasetSpec, images: bool = True) -> Iterator[PlateSample]:
    """Deterministic sample stream; degradations are computed on the fly."""
    for rec in _records(spec):
        img = render_record(rec, spec.width, spec.height) if images else None
        c_n = qf_to_class(rec["qf"], spec.k_classes).index
        yield PlateSample(rec["index"], rec["label"], rec["qf"], rec["r_w"], rec["seed"], c_n, img)


def write_manifest(path: str | Path, spec: DatasetSpec) -> int:
    """JSON lines: a header with the spec, then one record per sample."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"spec": spec.to_dict()}, sort_keys=True) + "\n")
        for s in build_dataset(spec, images=False):
            fh.write(json.dumps(s.record(), sort_keys=True, ensure_ascii=False) + "\n")
            n += 1
    return n


def read_manifest(path: str | Path) -> tuple[DatasetSpec, list[dict]]:
    with open(path, encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or "spec" not in lines[0]:
        raise ValueError(f"{path}: missing manifest header")
    return DatasetSpec.from_dict(lines[0]["spec"]), lines[1:]


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _render_chunk(args):
    recs, width, height = args
    return [render_record(r, width, height).astype(np.float32) for r in recs]


@dataclass
class Corpus:
    """A materialized dataset: images, token targets and degradation labels."""

    images: np.ndarray  # (N, H, W) float32
    targets: np.ndarray  # (N, L) int64
    labels: list[str]
    qf: np.ndarray
    r_w: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> Corpus:
        idx = np.asarray(idx)
        return Corpus(self.images[idx], self.targets[idx], [self.labels[i] for i in idx],
                      self.qf[idx], self.r_w[idx])


def materialize(spec: DatasetSpec, alphabet: Alphabet = GERMAN, workers: int | None = None) -> Corpus:
    recs = list(_records(spec))
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(recs) > 64:
        chunks = [recs[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_render_chunk, [(c, spec.width, spec.height) for c in chunks]))
        imgs = [None] * len(recs)
        for w, part in enumerate(parts):
            imgs[w::workers] = part
    else:
        imgs = _render_chunk((recs, spec.width, spec.height))
    return Corpus(
        images=np.stack(imgs),
        targets=np.stack([encode_label(r["label"], alphabet) for r in recs]),
        labels=[r["label"] for r in recs],
        qf=np.array([r["qf"] for r in recs], dtype=np.int64),
        r_w=np.array([r["r_w"] for r in recs], dtype=np.int64),
    )
