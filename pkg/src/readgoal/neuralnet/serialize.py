"""Little-endian binary container for named parameter tensors.

Layout::

    magic   b"RGDM"
    version uint32 (=1)
    count   uint32   number of tensors
    meta    uint32 length + UTF-8 JSON (model kind, hyperparameters, vocabularies)
    then per tensor:
        uint32 name length, UTF-8 name
        uint32 ndim, ndim x uint32 dims
        float64 values, row-major
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import DataError

MAGIC = b"RGDM"
VERSION = 1


def save_tensors(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(tensors)))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise DataError(f"{path}: not a model container (bad magic)")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported container version {version}")
    pos = 12
    (mlen,) = struct.unpack_from("<I", data, pos)
    pos += 4
    meta = json.loads(data[pos:pos + mlen].decode("utf-8"))
    pos += mlen
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
        pos += 8 * size
        tensors[name] = arr
    return tensors, meta
