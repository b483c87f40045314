"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    magic  b"RVLPCKPT"
    u32    format version
    64 B   config hash, ASCII hex
    u32    metadata length, then that many bytes of UTF-8 JSON
    u32    number of blobs
    blobs  u16 name length, name (UTF-8), u8 ndim, ndim x u32 shape,
           float64 data in row-major order
"""
import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"RVLPCKPT"
VERSION = 1


def save_checkpoint(path, blobs: dict, config_hash: str, meta: dict) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(config_hash.encode("ascii").ljust(64, b"\0")[:64])
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(blobs)))
        for name in sorted(blobs):
            arr = np.asarray(blobs[name], dtype="<f8", order="C")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())
    os.replace(tmp, path)


def load_checkpoint(path, expected_hash: str = None):
    """Returns ``(blobs, config_hash, meta)``; rejects a config-hash mismatch."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    pos = 8
    (version,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    config_hash = data[pos:pos + 64].rstrip(b"\0").decode("ascii")
    pos += 64
    if expected_hash is not None and config_hash != expected_hash:
        raise CheckpointError(
            f"{path}: config hash mismatch (checkpoint {config_hash[:12]}, config {expected_hash[:12]})")
    (n_meta,) = struct.unpack_from("<I", data, pos)
    pos += 4
    meta = json.loads(data[pos:pos + n_meta].decode("utf-8"))
    pos += n_meta
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    blobs = {}
    for _ in range(count):
        (n_name,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + n_name].decode("utf-8")
        pos += n_name
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        size = int(np.prod(shape, dtype=np.int64))
        blobs[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
        pos += 8 * size
    if pos != len(data):
        raise CheckpointError(f"{path}: trailing bytes after the last blob")
    return blobs, config_hash, meta
