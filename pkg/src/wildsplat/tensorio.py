"""Binary tensor blobs used by the scene and checkpoint formats.

Layout (all little-endian):
    bytes 0..7   magic b"WSPLTNSR"
    byte  8      dtype code (0=float32, 1=float64, 2=uint8, 3=int64)
    byte  9      ndim
    10..         ndim * int64 shape entries, then raw row-major data
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"WSPLTNSR"

_DTYPE_CODES = {
    np.dtype("<f4"): 0,
    np.dtype("<f8"): 1,
    np.dtype("u1"): 2,
    np.dtype("<i8"): 3,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


class TensorFormatError(IOError):
    """Raised for malformed or truncated tensor blobs."""


def write_tensor(path: Path | str, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array)
    dtype = array.dtype.newbyteorder("<")
    if dtype not in _DTYPE_CODES:
        raise TensorFormatError(f"unsupported dtype {array.dtype}")
    header = MAGIC + struct.pack("<BB", _DTYPE_CODES[dtype], array.ndim)
    header += struct.pack(f"<{array.ndim}q", *array.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(array.astype(dtype, copy=False).tobytes())


def read_tensor(path: Path | str) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 2:
        raise TensorFormatError(f"{path}: truncated header")
    if blob[: len(MAGIC)] != MAGIC:
        raise TensorFormatError(f"{path}: bad magic")
    code, ndim = struct.unpack_from("<BB", blob, len(MAGIC))
    if code not in _CODE_DTYPES:
        raise TensorFormatError(f"{path}: unknown dtype code {code}")
    offset = len(MAGIC) + 2
    if len(blob) < offset + 8 * ndim:
        raise TensorFormatError(f"{path}: truncated shape header")
    shape = struct.unpack_from(f"<{ndim}q", blob, offset)
    offset += 8 * ndim
    dtype = _CODE_DTYPES[code]
    count = int(np.prod(shape)) if ndim else 1
    expected = offset + count * dtype.itemsize
    if len(blob) != expected:
        raise TensorFormatError(
            f"{path}: payload is {len(blob) - offset} bytes, expected {expected - offset}"
        )
    return np.frombuffer(blob[offset:], dtype=dtype).reshape(shape).copy()
