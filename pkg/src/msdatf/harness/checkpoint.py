"""Little-endian binary checkpoints of named f64 tensors.

Layout::

    8 bytes   magic  b"MSDATFCK"
    u32       format version
    u32 + n   config, UTF-8 JSON (sorted keys)
    u32       record count
    records:  u32 name length, UTF-8 name, u32 rank, rank x u64 dims,
              prod(dims) x f64 payload (row-major)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import FormatError, SchemaMismatchError

MAGIC = b"MSDATFCK"
VERSION = 1


@dataclass
class Checkpoint:
    version: int
    config: dict
    tensors: dict          # name -> ndarray, in file order

    @property
    def rng_state(self):
        return self.config.get("rng_state")


def encode(tensors, config) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    cfg = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts += [struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        nb = name.encode("utf-8")
        parts += [struct.pack("<I", len(nb)), nb, struct.pack("<I", arr.ndim)]
        parts += [struct.pack("<Q", d) for d in arr.shape]
        parts.append(arr.tobytes())
    return b"".join(parts)


def save_checkpoint(path, tensors, config):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(tensors, config))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated checkpoint: need {n} bytes for {what} at offset {self.pos}, "
                              f"file has {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what):
        return struct.unpack("<Q", self.take(8, what))[0]


def decode(buf) -> Checkpoint:
    r = _Reader(buf)
    magic = r.take(8, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r} at offset 0")
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} at offset 8 (expected {VERSION})")
    n = r.u32("config length")
    start = r.pos
    try:
        config = json.loads(r.take(n, "config").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt config block at offset {start}: {exc}") from None
    count = r.u32("record count")
    tensors = {}
    for _ in range(count):
        off = r.pos
        name_len = r.u32("name length")
        try:
            name = r.take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"corrupt tensor name at offset {off}") from None
        rank = r.u32(f"rank of {name}")
        if rank > 16:
            raise FormatError(f"implausible rank {rank} for {name} at offset {off}")
        dims = tuple(r.u64(f"dims of {name}") for _ in range(rank))
        size = int(np.prod(dims)) if dims else 1
        payload = r.take(8 * size, f"payload of {name}")
        tensors[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes at offset {r.pos}")
    return Checkpoint(version, config, tensors)


def load_checkpoint(path) -> Checkpoint:
    return decode(Path(path).read_bytes())


def check_schema(expected, tensors):
    """``expected`` maps names to shapes; raises on any missing/extra/mis-shaped entry."""
    missing = set(expected) - set(tensors)
    extra = set(tensors) - set(expected)
    bad = [n for n in set(expected) & set(tensors) if tuple(expected[n]) != tuple(tensors[n].shape)]
    if missing or extra or bad:
        msg = f"parameter schema mismatch: missing={sorted(missing)} extra={sorted(extra)}"
        if bad:
            msg += f" shape_mismatch={sorted(bad)}"
        raise SchemaMismatchError(missing, extra, msg)
