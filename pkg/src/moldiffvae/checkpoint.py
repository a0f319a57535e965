"""Flat binary checkpoints for named float64 tensors.

Layout, all integers little-endian unsigned 32-bit:

    magic b"MDVC" | version | header length | header JSON (utf-8)
    tensor count
    per tensor: name length | name utf-8 | rank | dims... | float64 data

The header JSON carries the full run-configuration snapshot, a hash of
its architecture-determining subtree, and a free-form metadata dict
(training-set size histogram and similar).  Loading verifies structure;
compatibility against a current configuration is a separate explicit
check so callers can distinguish corruption from mismatch.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from typing import Any

import numpy as np

from .fileio import atomic_write_bytes

MAGIC = b"MDVC"
VERSION = 1

# The hash guards against loading weights into a model of a different
# shape or schedule, so it covers only the keys that determine those.
# Training hyperparameters (learning rates, step counts, paths) may
# differ between the producing run and the consuming run.
ARCHITECTURE_KEYS = ("v_max", "schedule", "encoder", "decoder", "denoiser", "head")


class CheckpointError(ValueError):
    """File is not a readable checkpoint."""


class IncompatibleCheckpoint(CheckpointError):
    """Checkpoint was produced under a different architecture."""


@dataclass(frozen=True)
class Checkpoint:
    config: dict
    meta: dict
    tensors: dict[str, np.ndarray]
    architecture_hash: str


def _canonical_json(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


def architecture_hash(config_dict: dict) -> str:
    subtree = {k: config_dict[k] for k in ARCHITECTURE_KEYS if k in config_dict}
    missing = [k for k in ARCHITECTURE_KEYS if k not in config_dict]
    if missing:
        raise CheckpointError(f"config dict lacks architecture keys {missing}")
    return hashlib.sha256(_canonical_json(subtree).encode("utf-8")).hexdigest()


def save_checkpoint(
    path: str,
    config_dict: dict,
    tensors: dict[str, np.ndarray],
    meta: dict | None = None,
) -> None:
    header = {
        "config": config_dict,
        "architecture_hash": architecture_hash(config_dict),
        "meta": meta or {},
    }
    header_bytes = _canonical_json(header).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION)]
    parts.append(struct.pack("<I", len(header_bytes)))
    parts.append(header_bytes)
    parts.append(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        array = np.asarray(tensors[name], dtype="<f8", order="C")
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<I", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<I", array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(array.tobytes())
    atomic_write_bytes(path, b"".join(parts))


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.offset = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise CheckpointError(
                f"{self.path} is truncated: wanted {n} bytes at offset {self.offset}, "
                f"file has {len(self.data)}"
            )
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with open(path, "rb") as handle:
            data = handle.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc

    reader = _Reader(data, path)
    magic = reader.take(4)
    if magic != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic {magic!r})")
    version = reader.u32()
    if version != VERSION:
        raise CheckpointError(f"{path} has unsupported version {version}")
    header_len = reader.u32()
    try:
        header = json.loads(reader.take(header_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path} has a corrupt header: {exc}") from exc
    for key in ("config", "architecture_hash", "meta"):
        if key not in header:
            raise CheckpointError(f"{path} header lacks {key!r}")

    n_tensors = reader.u32()
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        name_len = reader.u32()
        name = reader.take(name_len).decode("utf-8")
        rank = reader.u32()
        if rank > 8:
            raise CheckpointError(f"{path}: tensor {name} claims rank {rank}")
        shape = struct.unpack(f"<{rank}I", reader.take(4 * rank))
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        raw = reader.take(8 * count)
        tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    if reader.offset != len(data):
        raise CheckpointError(
            f"{path} has {len(data) - reader.offset} trailing bytes after the last tensor"
        )

    stored_hash = architecture_hash(header["config"])
    if stored_hash != header["architecture_hash"]:
        raise CheckpointError(
            f"{path} header hash does not match its own config (corrupt or edited)"
        )
    return Checkpoint(
        config=header["config"],
        meta=header["meta"],
        tensors=tensors,
        architecture_hash=header["architecture_hash"],
    )


def verify_compatible(checkpoint: Checkpoint, config_dict: dict) -> None:
    current = architecture_hash(config_dict)
    if current != checkpoint.architecture_hash:
        raise IncompatibleCheckpoint(
            "checkpoint architecture hash "
            f"{checkpoint.architecture_hash[:12]} does not match the current "
            f"configuration's {current[:12]}; schedule, model sizes, and v_max "
            "must match the producing run"
        )
