"""Bit-exact named-tensor file format.

Layout (all integers little-endian):

    magic "LFW1"
    u32 entry count
    per entry: u32 name length | UTF-8 name | u32 rank | rank x u64 dims
               | raw float32 payload, row-major

Entries are written sorted by name so identical contents always produce
identical bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"LFW1"

_MAX_NAME = 1 << 16
_MAX_RANK = 64


class CheckpointError(ValueError):
    pass


def save_tensors(path, named: dict) -> None:
    path = Path(path)
    for name in named:
        if not isinstance(name, str) or not name:
            raise CheckpointError("tensor names must be non-empty strings")
    blobs = [MAGIC, struct.pack("<I", len(named))]
    for name in sorted(named):
        arr = np.asarray(named[name], dtype=np.float32, order="C")
        raw = name.encode("utf-8")
        if len(raw) >= _MAX_NAME:
            raise CheckpointError(f"tensor name too long: {len(raw)} bytes")
        blobs.append(struct.pack("<I", len(raw)))
        blobs.append(raw)
        blobs.append(struct.pack("<I", arr.ndim))
        blobs.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        blobs.append(arr.tobytes())
    path.write_bytes(b"".join(blobs))


def load_tensors(path) -> dict:
    data = Path(path).read_bytes()
    if len(data) < 8 or data[:4] != MAGIC:
        raise CheckpointError(f"bad magic in {path}")
    (count,) = struct.unpack_from("<I", data, 4)
    offset = 8
    out: dict[str, np.ndarray] = {}

    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(data):
            raise CheckpointError(f"truncated payload in {path}")
        chunk = data[offset : offset + n]
        offset += n
        return chunk

    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        if name_len == 0 or name_len >= _MAX_NAME:
            raise CheckpointError(f"malformed header in {path}: name length {name_len}")
        name = take(name_len).decode("utf-8")
        if name in out:
            raise CheckpointError(f"duplicate name {name!r} in {path}")
        (rank,) = struct.unpack("<I", take(4))
        if rank > _MAX_RANK:
            raise CheckpointError(f"malformed header in {path}: rank {rank}")
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        numel = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(take(4 * numel), dtype="<f4").reshape(shape)
        out[name] = arr.astype(np.float32, copy=True)
    if offset != len(data):
        raise CheckpointError(f"trailing bytes in {path}")
    return out
