"""DCLT binary tensor files.

Layout (all little-endian)::

    b"DCLT" | version u8 (=1) | dtype u8 | rank u8 | rank x u64 dims | payload

dtype 0 is float64; dtype 1 is a complex value stored as a (real, imag)
float64 pair.  For complex tensors ``dims`` is the logical shape (the plane
axis of the in-memory layout is not listed) and the payload interleaves
real and imaginary parts element by element, row-major.
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .tensor import REAL, Tensor

MAGIC = b"DCLT"
VERSION = 1
DTYPE_REAL = 0
DTYPE_COMPLEX = 1


class DCLTError(ValueError):
    pass


def encode(t: Tensor | np.ndarray) -> bytes:
    if isinstance(t, np.ndarray):
        if np.iscomplexobj(t):
            values, code = np.asarray(t, dtype="<c16"), DTYPE_COMPLEX
        else:
            values, code = np.asarray(t, dtype="<f8"), DTYPE_REAL
    elif t.is_complex:
        values, code = np.asarray(t.to_complex(), dtype="<c16"), DTYPE_COMPLEX
    else:
        values, code = np.asarray(t.data, dtype="<f8"), DTYPE_REAL
    if values.ndim > 255:
        raise DCLTError(f"rank {values.ndim} does not fit in a u8")
    header = MAGIC + struct.pack("<BBB", VERSION, code, values.ndim)
    header += struct.pack(f"<{values.ndim}Q", *values.shape)
    return header + np.ascontiguousarray(values).tobytes()


def decode_array(buf: bytes) -> np.ndarray:
    """Decode to a plain array: float64, or complex128 for complex files."""
    if len(buf) < 7 or buf[:4] != MAGIC:
        raise DCLTError("not a DCLT file (bad magic)")
    version, code, rank = struct.unpack_from("<BBB", buf, 4)
    if version != VERSION:
        raise DCLTError(f"unsupported DCLT version {version}")
    if code not in (DTYPE_REAL, DTYPE_COMPLEX):
        raise DCLTError(f"unknown DCLT dtype code {code}")
    off = 7 + 8 * rank
    if len(buf) < off:
        raise DCLTError("truncated DCLT header")
    dims = struct.unpack_from(f"<{rank}Q", buf, 7)
    count = int(np.prod(dims)) if rank else 1
    itemsize = 16 if code == DTYPE_COMPLEX else 8
    if len(buf) - off != count * itemsize:
        raise DCLTError(f"payload has {len(buf) - off} bytes, expected {count * itemsize} for dims {dims}")
    dt = "<c16" if code == DTYPE_COMPLEX else "<f8"
    return np.frombuffer(buf, dtype=dt, count=count, offset=off).reshape(dims).astype(
        np.complex128 if code == DTYPE_COMPLEX else np.float64)


def decode(buf: bytes) -> Tensor:
    arr = decode_array(buf)
    if np.iscomplexobj(arr):
        if arr.ndim < 2:
            raise DCLTError(f"complex tensors need rank >= 2, file has shape {arr.shape}")
        return Tensor.from_complex(arr)
    return Tensor(arr, dtype=REAL)


def save(path: str | os.PathLike, t: Tensor | np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(t))


def load(path: str | os.PathLike) -> Tensor:
    with open(path, "rb") as fh:
        return decode(fh.read())


def load_array(path: str | os.PathLike) -> np.ndarray:
    """Load as a plain ndarray (complex128 for complex files)."""
    with open(path, "rb") as fh:
        return decode_array(fh.read())
