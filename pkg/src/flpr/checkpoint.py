"""Byte-stable checkpoint files.

Layout::

    b"FLPRCKPT"                  magic
    uint32 LE                    format version
    uint32 LE                    header length N
    N bytes UTF-8 JSON           {"config", "meta", "tensors": [{"name", "shape"}]}
    float32 LE tensor payloads   in header order, row-major
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import LPTransformer, ModelConfig

MAGIC = b"FLPRCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    weights: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: LPTransformer, **meta) -> Checkpoint:
        return cls(model.cfg, model.state_dict(), dict(meta))

    def build_model(self, dtype=np.float32) -> LPTransformer:
        model = LPTransformer(self.config, seed=int(self.meta.get("seed", 0)), dtype=dtype)
        model.load_state_dict(self.weights)
        return model.eval()

    def to_bytes(self) -> bytes:
        names = sorted(self.weights)
        header = {
            "config": self.config.to_dict(),
            "meta": self.meta,
            "tensors": [{"name": n, "shape": list(self.weights[n].shape)} for n in names],
        }
        head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(head)), head]
        parts += [np.ascontiguousarray(self.weights[n], dtype="<f4").tobytes() for n in names]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, raw: bytes) -> Checkpoint:
        if raw[: len(MAGIC)] != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        pos = len(MAGIC)
        version, n = struct.unpack_from("<II", raw, pos)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos += 8
        header = json.loads(raw[pos: pos + n].decode("utf-8"))
        pos += n
        weights = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * count > len(raw):
                raise CheckpointError(f"truncated payload for {entry['name']}")
            weights[entry["name"]] = np.frombuffer(raw, dtype="<f4", count=count, offset=pos).reshape(shape).copy()
            pos += 4 * count
        if pos != len(raw):
            raise CheckpointError("trailing bytes after last tensor")
        return cls(ModelConfig.from_dict(header["config"]), weights, header["meta"])

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> Checkpoint:
        return cls.from_bytes(Path(path).read_bytes())
