"""Flat binary checkpoint files of named float64 arrays.

Layout (all integers little-endian, documented in docs/checkpoint-format.md):

    bytes 0..5   magic  b"MBNET\\x00"
    bytes 6..7   format version, uint16 (currently 1)
    bytes 8..11  array count, uint32
    per array:
        uint16   name length in bytes
        ...      name, utf-8
        uint8    ndim
        uint32 * ndim   dimensions
        float64 * prod(dims)   row-major data
    final 32 bytes: sha256 digest of everything before it
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MBNET\x00"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<H", VERSION), struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype=np.float64)
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<B", data.ndim))
        for dim in data.shape:
            chunks.append(struct.pack("<I", dim))
        chunks.append(data.tobytes())
    body = b"".join(chunks)
    digest = hashlib.sha256(body).digest()
    Path(path).write_bytes(body + digest)


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 2 + 4 + 32:
        raise CheckpointError(f"checkpoint {path} too short ({len(raw)} bytes)")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"checkpoint {path} failed integrity check")
    if body[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"checkpoint {path} has bad magic {body[:6]!r}")
    off = len(MAGIC)
    (version,) = struct.unpack_from("<H", body, off)
    off += 2
    if version != VERSION:
        raise CheckpointError(f"checkpoint {path} version {version}, expected {VERSION}")
    (count,) = struct.unpack_from("<I", body, off)
    off += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", body, off)
        off += 2
        name = body[off:off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<B", body, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", body, off) if ndim else ()
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(body, dtype="<f8", count=size, offset=off).reshape(shape)
        off += size * 8
        arrays[name] = arr.astype(np.float64)
    if off != len(body):
        raise CheckpointError(f"checkpoint {path} has {len(body) - off} trailing bytes")
    return arrays
