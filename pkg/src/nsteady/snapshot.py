"""NSF1 binary field snapshots.

Layout (little endian)::

    b"NSF1" | u32 n | f64 L | u8 domain | payload

``domain`` is 0 for real physical samples, 1 for complex physical samples
and 2 for complex spectral coefficients.  The payload holds the three
components one after the other, each as an ``n^3`` block with the first
index varying fastest, as f64 values (re, im pairs for complex data).
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .spectral_core import Grid, PhysicalVectorField, SpectralVectorField

__all__ = ["SnapshotError", "read_snapshot", "write_snapshot", "PHYSICAL_REAL", "PHYSICAL_COMPLEX", "SPECTRAL"]

MAGIC = b"NSF1"
PHYSICAL_REAL, PHYSICAL_COMPLEX, SPECTRAL = 0, 1, 2
_HEADER = struct.Struct("<4sIdB")
MAX_N = 4096


class SnapshotError(ValueError):
    """Malformed or unsupported snapshot file."""


def _payload_order(a: np.ndarray) -> np.ndarray:
    # component-major, first spatial index fastest
    return np.transpose(a, (0, 3, 2, 1))


def encode(field) -> bytes:
    if isinstance(field, SpectralVectorField):
        flag, data = SPECTRAL, field.coeffs
    elif isinstance(field, PhysicalVectorField):
        flag = PHYSICAL_COMPLEX if field.is_complex else PHYSICAL_REAL
        data = field.samples
    else:
        raise TypeError(f"cannot serialise {type(field).__name__}")
    g = field.grid
    header = _HEADER.pack(MAGIC, g.n, g.L, flag)
    arr = np.ascontiguousarray(_payload_order(data))
    dtype = "<c16" if flag != PHYSICAL_REAL else "<f8"
    return header + arr.astype(dtype, copy=False).tobytes()


def decode(buf: bytes):
    if len(buf) < _HEADER.size:
        raise SnapshotError("truncated header")
    magic, n, L, flag = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise SnapshotError(f"bad magic {magic!r}")
    if flag not in (PHYSICAL_REAL, PHYSICAL_COMPLEX, SPECTRAL):
        raise SnapshotError(f"unknown domain flag {flag}")
    if n > MAX_N:
        raise SnapshotError(f"dimension {n} exceeds the supported maximum {MAX_N}")
    try:
        grid = Grid(n, L)
    except ValueError as exc:
        raise SnapshotError(f"invalid grid in header: {exc}") from exc
    count = 3 * n**3
    itemsize = 8 if flag == PHYSICAL_REAL else 16
    body = memoryview(buf)[_HEADER.size :]
    if len(body) != count * itemsize:
        raise SnapshotError(f"payload has {len(body)} bytes, expected {count * itemsize}")
    dtype = "<f8" if flag == PHYSICAL_REAL else "<c16"
    arr = np.frombuffer(body, dtype=dtype).reshape(3, n, n, n)
    arr = np.transpose(arr, (0, 3, 2, 1)).astype(arr.dtype.newbyteorder("="))
    if flag == SPECTRAL:
        return SpectralVectorField(grid, arr, real_valued=False)
    return PhysicalVectorField(grid, arr)


def write_snapshot(field, path) -> None:
    """Write ``field`` atomically (temporary file, then rename)."""
    data = encode(field)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def read_snapshot(path):
    """Read a snapshot; spectral data comes back with ``real_valued=False``.

    Callers that know the field is real can re-flag it with
    :func:`as_real_spectral`.
    """
    with open(path, "rb") as fh:
        return decode(fh.read())


def as_real_spectral(field: SpectralVectorField, tol: float = 1e-12) -> SpectralVectorField:
    """Re-flag spectral data as real valued after checking Hermitian symmetry."""
    d = field.hermitian_defect()
    if d > tol:
        raise SnapshotError(f"spectral data is not Hermitian (defect {d:.2e})")
    return SpectralVectorField(field.grid, field.coeffs, real_valued=True)
