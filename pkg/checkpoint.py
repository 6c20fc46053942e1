"""Binary weight checkpoints.

Layout, all little-endian:
  b"GLSR" | version u32 | channels, blocks, scale, scam, cfc, glie (u32 each)
  | tensor count u32 | per tensor: name length u16, UTF-8 name, rank u8,
  dims (u32 each), float32 data.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from errors import FormatError
from nn_blocks import ModelConfig, WeightStore
from tensor import Tensor

MAGIC = b"GLSR"
VERSION = 1
_CONFIG = struct.Struct("<6I")


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated checkpoint while reading {what}", self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str) -> tuple:
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size, what))


def encode_checkpoint(config: ModelConfig, weights: WeightStore) -> bytes:
    weights.validate(config)
    parts = [
        MAGIC,
        struct.pack("<I", VERSION),
        _CONFIG.pack(
            config.channels,
            config.num_blocks,
            config.scale,
            int(config.enable_scam),
            int(config.enable_cfc),
            int(config.enable_glie),
        ),
        struct.pack("<I", len(weights)),
    ]
    for path, tensor in weights.items():
        name = path.encode("utf-8")
        parts.append(struct.pack("<H", len(name)) + name)
        parts.append(struct.pack("<B", len(tensor.shape)) + struct.pack(f"<{len(tensor.shape)}I", *tensor.shape))
        parts.append(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_checkpoint(data: bytes) -> tuple[ModelConfig, WeightStore]:
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad checkpoint magic", 0)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    channels, blocks, scale, scam, cfc, glie = r.unpack(_CONFIG.format, "model config")
    config = ModelConfig(channels, blocks, scale, bool(scam), bool(cfc), bool(glie), dtype="single")
    (count,) = r.unpack("<I", "tensor count")
    items = []
    for _ in range(count):
        (name_len,) = r.unpack("<H", "name length")
        try:
            name = r.take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("tensor name is not valid UTF-8", r.pos - name_len) from None
        (rank,) = r.unpack("<B", "rank")
        if rank != 4:
            raise FormatError(f"tensor {name!r} has rank {rank}, expected 4", r.pos - 1)
        dims = r.unpack(f"<{rank}I", f"dims of {name!r}")
        n = int(np.prod(dims))
        raw = r.take(4 * n, f"data of {name!r}")
        items.append((name, Tensor(np.frombuffer(raw, dtype="<f4").reshape(dims), dtype="single")))
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after last tensor", r.pos)
    weights = WeightStore(items)
    weights.validate(config)
    return config, weights


def save_weights(path: str | Path, config: ModelConfig, weights: WeightStore) -> None:
    Path(path).write_bytes(encode_checkpoint(config, weights))


def load_weights(path: str | Path, expected: ModelConfig | None = None) -> tuple[ModelConfig, WeightStore]:
    """Read a checkpoint. With `expected`, its layer enumeration must match the stored tensors."""
    config, weights = decode_checkpoint(Path(path).read_bytes())
    if expected is not None:
        weights.validate(expected)
        config = expected
    return config, weights
