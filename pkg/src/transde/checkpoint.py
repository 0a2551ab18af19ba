"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    b"TRDECKPT"  u32 version
    u32 len, config JSON (UTF-8, sorted keys)
    u32 tensor count, then per tensor:
        u16 len, name (UTF-8)  u8 dtype code  u8 ndim  ndim * u32 dims  raw data

Tensors are written in sorted name order, so writing what was read yields
the identical byte string.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from transde.errors import DataError

MAGIC = b"TRDECKPT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {v: k for k, v in _DTYPES.items()}


def dumps(tensors: dict, config: dict) -> bytes:
    out = [MAGIC, struct.pack("<I", VERSION)]
    cfg = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out += [struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        dt = arr.dtype.newbyteorder("<")
        if dt not in _CODES:
            raise TypeError(f"unsupported dtype {arr.dtype} for {name}")
        raw_name = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw_name)) + raw_name)
        out.append(struct.pack("<BB", _CODES[dt], arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return b"".join(out)


def loads(blob: bytes):
    """Return ``(tensors, config)``."""
    view = memoryview(blob)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise DataError("truncated checkpoint")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(len(MAGIC))) != MAGIC:
        raise DataError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    (clen,) = struct.unpack("<I", take(4))
    config = json.loads(bytes(take(clen)).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = bytes(take(nlen)).decode("utf-8")
        code, ndim = struct.unpack("<BB", take(2))
        if code not in _DTYPES:
            raise DataError(f"unknown dtype code {code} for {name}")
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        dt = _DTYPES[code]
        n = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        tensors[name] = np.frombuffer(bytes(take(n)), dtype=dt).reshape(shape).copy()
    if pos != len(view):
        raise DataError("trailing bytes after checkpoint")
    return tensors, config


def save(path, tensors: dict, config: dict) -> None:
    Path(path).write_bytes(dumps(tensors, config))


def load(path):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing checkpoint: {path}")
    return loads(path.read_bytes())
