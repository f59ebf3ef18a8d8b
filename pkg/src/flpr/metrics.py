"""Plate accuracy (acc_lp) and corpus-level character error rate."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Hashable, Sequence


class LengthMismatch(ValueError):
    pass


class EmptyReference(ValueError):
    pass


def levenshtein(a: str, b: str) -> int:
    """Unit-cost insert/delete/substitute distance."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


@dataclass
class CellStats:
    n: int = 0
    exact: int = 0
    edits: int = 0
    ref_chars: int = 0

    @property
    def acc_lp(self) -> float:
        return self.exact / self.n if self.n else 0.0

    @property
    def cer(self) -> float:
        return self.edits / self.ref_chars if self.ref_chars else 0.0


@dataclass
class EvalReport:
    acc_lp: float
    cer: float
    n: int
    cells: dict[Hashable, CellStats] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "acc_lp": self.acc_lp,
            "cer": self.cer,
            "n": self.n,
            "cells": [
                {"qf": k[0], "r_w": k[1], "n": c.n, "acc_lp": c.acc_lp, "cer": c.cer}
                if isinstance(k, tuple) and len(k) == 2 else
                {"key": k, "n": c.n, "acc_lp": c.acc_lp, "cer": c.cer}
                for k, c in sorted(self.cells.items(), key=lambda kv: str(kv[0]))
            ],
        }


def score(predictions: Sequence[str], references: Sequence[str], keys: Sequence[Hashable] | None = None) -> EvalReport:
    """Exact-match fraction and sum(edit distance) / sum(reference length).

    ``keys`` optionally groups samples into cells, e.g. by (qf, r_w).
    """
    if len(predictions) != len(references):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(references)} references")
    if keys is not None and len(keys) != len(references):
        raise LengthMismatch("one cell key per sample required")
    if not references:
        raise EmptyReference("no references to score against")
    total = CellStats()
    cells: dict[Hashable, CellStats] = defaultdict(CellStats)
    for i, (pred, ref) in enumerate(zip(predictions, references)):
        if not ref:
            raise EmptyReference(f"reference {i} is empty")
        d = levenshtein(pred, ref)
        targets = (total, cells[keys[i]]) if keys is not None else (total,)
        for c in targets:
            c.n += 1
            c.exact += pred == ref
            c.edits += d
            c.ref_chars += len(ref)
    return EvalReport(total.acc_lp, total.cer, total.n, dict(cells))
