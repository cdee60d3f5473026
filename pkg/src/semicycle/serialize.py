"""Binary checkpoint container for named tensors.

Layout (all integers u32 little-endian)::

    b"SCGT" | version | count | { name_len | utf-8 name | rank | dims... | payload }*

Version 1 stores float32 payloads. Version 2 inserts a u32 element size (4 or 8)
after ``count`` so double-precision runs resume without rounding.
"""

from __future__ import annotations

import io
import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import CheckpointError

MAGIC = b"SCGT"
_U32 = struct.Struct("<I")


def _dtype_for(width: int):
    return {4: np.dtype("<f4"), 8: np.dtype("<f8")}[width]


def dumps(tensors: Mapping[str, np.ndarray], double: bool = False) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(_U32.pack(2 if double else 1))
    buf.write(_U32.pack(len(tensors)))
    if double:
        buf.write(_U32.pack(8))
    dt = _dtype_for(8 if double else 4)
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        raw = name.encode("utf-8")
        buf.write(_U32.pack(len(raw)))
        buf.write(raw)
        buf.write(_U32.pack(arr.ndim))
        for d in arr.shape:
            buf.write(_U32.pack(d))
        buf.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise CheckpointError("bad magic bytes: not a checkpoint file")
    pos = 4

    def u32():
        nonlocal pos
        if pos + 4 > len(blob):
            raise CheckpointError("truncated checkpoint")
        (v,) = _U32.unpack_from(blob, pos)
        pos += 4
        return v

    version = u32()
    if version not in (1, 2):
        raise CheckpointError(f"unsupported checkpoint version {version}")
    count = u32()
    width = u32() if version == 2 else 4
    if width not in (4, 8):
        raise CheckpointError(f"unsupported element size {width}")
    dt = _dtype_for(width)
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        n = u32()
        name = blob[pos:pos + n].decode("utf-8")
        pos += n
        rank = u32()
        dims = tuple(u32() for _ in range(rank))
        nbytes = int(np.prod(dims, dtype=np.int64)) * width
        if pos + nbytes > len(blob):
            raise CheckpointError(f"truncated payload for {name!r}")
        out[name] = np.frombuffer(blob, dtype=dt, count=nbytes // width, offset=pos).reshape(dims).copy()
        pos += nbytes
    if pos != len(blob):
        raise CheckpointError("trailing bytes after last tensor")
    return out


def save(path, tensors: Mapping[str, np.ndarray], double: bool = False) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(tensors, double))
    os.replace(tmp, path)


def load(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
