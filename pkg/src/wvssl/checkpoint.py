"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    magic 'WVCK' | version u16
    config blob:      len u32 + UTF-8 JSON
    parameter tensors: count u32, then per tensor
                       name (len u16 + UTF-8), rank u8, dims u32 * rank,
                       payload row-major float32
    optimizer tensors: same encoding
    rng state:         len u32 + raw bytes

Float32 payloads round-trip bit-exactly, so saving and reloading a model
reproduces training exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

CHECKPOINT_MAGIC = b"WVCK"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    config: dict
    tensors: dict[str, np.ndarray]
    optimizer: dict[str, np.ndarray] = field(default_factory=dict)
    rng_state: bytes = b""


def _pack_tensor_section(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        shape = arr.shape  # before any conversion: 0-dim stays 0-dim
        payload = arr.astype("<f4", copy=False).tobytes(order="C")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", len(shape)))
        parts.append(struct.pack(f"<{len(shape)}I", *shape) if shape else b"")
        parts.append(payload)
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DataError(f"{self.path}: truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))


def _read_tensor_section(reader: _Reader) -> dict[str, np.ndarray]:
    (count,) = reader.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (rank,) = reader.unpack("<B")
        dims = reader.unpack(f"<{rank}I") if rank else ()
        n_elem = int(np.prod(dims)) if rank else 1
        payload = reader.take(n_elem * 4)
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    return tensors


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    config_bytes = json.dumps(ckpt.config, sort_keys=True).encode("utf-8")
    blob = b"".join([
        CHECKPOINT_MAGIC,
        struct.pack("<H", CHECKPOINT_VERSION),
        struct.pack("<I", len(config_bytes)),
        config_bytes,
        _pack_tensor_section(ckpt.tensors),
        _pack_tensor_section(ckpt.optimizer),
        struct.pack("<I", len(ckpt.rng_state)),
        ckpt.rng_state,
    ])
    Path(path).write_bytes(blob)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    reader = _Reader(path.read_bytes(), path)
    magic = reader.take(4)
    if magic != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: bad checkpoint magic {magic!r}")
    (version,) = reader.unpack("<H")
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (config_len,) = reader.unpack("<I")
    try:
        config = json.loads(reader.take(config_len).decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: corrupt config blob: {exc}") from exc
    tensors = _read_tensor_section(reader)
    optimizer = _read_tensor_section(reader)
    (rng_len,) = reader.unpack("<I")
    rng_state = reader.take(rng_len)
    if reader.pos != len(reader.data):
        raise DataError(f"{path}: {len(reader.data) - reader.pos} trailing bytes")
    return Checkpoint(config=config, tensors=tensors, optimizer=optimizer,
                      rng_state=rng_state)
