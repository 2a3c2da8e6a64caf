"""Minimal binary tensor container used by datasets and checkpoints.

Layout (all integers little-endian):
    magic   4 bytes  b"GART"
    version u8       currently 1
    dtype   u8       0 = float32, 1 = float64, 2 = uint8
    rank    u32
    dims    u32 * rank
    payload raw row-major array data
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DatasetIOError

MAGIC = b"GART"
VERSION = 1

_DTYPE_CODES = {
    np.dtype("<f4"): 0,
    np.dtype("<f8"): 1,
    np.dtype("u1"): 2,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def write_tensor(path, array: np.ndarray) -> Path:
    """Write an array; dtype must be float32, float64, or uint8."""
    path = Path(path)
    arr = np.asarray(array)
    if arr.ndim:
        arr = np.ascontiguousarray(arr)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    if dt not in _DTYPE_CODES:
        raise DatasetIOError(f"unsupported dtype {arr.dtype} for {path}")
    header = MAGIC + struct.pack("<BBI", VERSION, _DTYPE_CODES[dt], arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(arr.astype(dt, copy=False).tobytes())
    return path


def read_tensor(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 10:
        raise DatasetIOError(f"{path}: truncated header ({len(data)} bytes)")
    if data[:4] != MAGIC:
        raise DatasetIOError(f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    version, dtype_code, rank = struct.unpack("<BBI", data[4:10])
    if version != VERSION:
        raise DatasetIOError(f"{path}: unsupported version {version}")
    if dtype_code not in _CODE_DTYPES:
        raise DatasetIOError(f"{path}: unknown dtype code {dtype_code}")
    offset = 10 + 4 * rank
    if len(data) < offset:
        raise DatasetIOError(f"{path}: truncated dims")
    dims = struct.unpack(f"<{rank}I", data[10:offset])
    dtype = _CODE_DTYPES[dtype_code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
    payload = data[offset:]
    if len(payload) != expected:
        raise DatasetIOError(
            f"{path}: payload is {len(payload)} bytes, shape {dims} needs {expected}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
