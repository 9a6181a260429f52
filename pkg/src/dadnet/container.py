"""ACSD tensor container.

Layout (all little-endian)::

    b"ACSD"  u16 version
    repeated: u8 rank, rank x u32 dims, prod(dims) x payload

Version 1 stores float32 payloads (datasets); version 2 stores float64
payloads (checkpoints, where round-trips must be bit-exact).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from dadnet.errors import FormatError

MAGIC = b"ACSD"
VERSION_F32 = 1
VERSION_F64 = 2
_DTYPES = {VERSION_F32: np.dtype("<f4"), VERSION_F64: np.dtype("<f8")}


def encode(tensors, version: int = VERSION_F64) -> bytes:
    if version not in _DTYPES:
        raise FormatError(f"unknown container version {version}")
    dtype = _DTYPES[version]
    out = [MAGIC, struct.pack("<H", version)]
    for t in tensors:
        arr = np.asarray(t)
        if arr.ndim > 255:
            raise FormatError("tensor rank exceeds 255")
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=dtype).tobytes())
    return b"".join(out)


def decode(data: bytes) -> list[np.ndarray]:
    if len(data) < 6 or data[:4] != MAGIC:
        raise FormatError("not an ACSD container (bad magic)")
    (version,) = struct.unpack_from("<H", data, 4)
    if version not in _DTYPES:
        raise FormatError(f"unsupported ACSD version {version}")
    dtype = _DTYPES[version]
    pos = 6
    tensors = []
    while pos < len(data):
        rank = data[pos]
        pos += 1
        if pos + 4 * rank > len(data):
            raise FormatError("truncated tensor header")
        dims = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        if pos + nbytes > len(data):
            raise FormatError("truncated tensor payload")
        arr = np.frombuffer(data, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos)
        tensors.append(arr.reshape(dims).astype(np.float64))
        pos += nbytes
    return tensors


def write(path, tensors, version: int = VERSION_F64) -> None:
    Path(path).write_bytes(encode(tensors, version))


def read(path) -> list[np.ndarray]:
    return decode(Path(path).read_bytes())
