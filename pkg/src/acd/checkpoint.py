"""Binary checkpoint files for named float64 tensors plus config metadata.

Layout (all integers little-endian):

    magic   b"ACDT"
    u32     format version (currently 1)
    u32     metadata length, then UTF-8 JSON metadata
    u32     tensor count
    per tensor: u16 name length, name bytes, u8 ndim, u32*ndim shape, u64 offset
    payload: raw little-endian float64 data per tensor at its offset

Offsets are relative to the payload start. Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

__all__ = ["save_checkpoint", "load_checkpoint", "CheckpointError"]

MAGIC = b"ACDT"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, named_arrays, metadata: dict | None = None):
    """Write named float64 arrays and a JSON metadata blob.

    `named_arrays` is an iterable of (name, array-like) pairs; iteration
    order is preserved in the manifest.
    """
    entries = []
    for name, arr in named_arrays:
        arr = np.asarray(arr, dtype="<f8")
        if not arr.flags.c_contiguous:
            arr = arr.copy()
        entries.append((name, arr))
    meta_bytes = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")

    manifest = bytearray()
    offset = 0
    for name, arr in entries:
        nb = name.encode("utf-8")
        manifest += struct.pack("<H", len(nb)) + nb
        manifest += struct.pack("<B", arr.ndim)
        manifest += struct.pack(f"<{arr.ndim}I", *arr.shape)
        manifest += struct.pack("<Q", offset)
        offset += arr.nbytes

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(meta_bytes)))
        f.write(meta_bytes)
        f.write(struct.pack("<I", len(entries)))
        f.write(bytes(manifest))
        for _, arr in entries:
            f.write(arr.tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (dict name -> float64 array, metadata dict)."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    pos = 4
    (version,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (meta_len,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    metadata = json.loads(raw[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    specs = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        (offset,) = struct.unpack_from("<Q", raw, pos)
        pos += 8
        specs.append((name, shape, offset))
    payload = raw[pos:]
    arrays = {}
    for name, shape, offset in specs:
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=offset)
        arrays[name] = arr.reshape(shape).astype(np.float64)
    return arrays, metadata
