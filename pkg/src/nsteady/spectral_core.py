"""Periodic-box grid, vector fields and the spectral multipliers of the steady problem.

The whole space is truncated to the periodic box ``[-L/2, L/2)^3`` sampled at
``x_j = -L/2 + j h`` with ``h = L/n``; the origin is the node ``j = n/2``.

Fourier convention
------------------
``f(x_j) = sum_k c_k exp(i k . x_j)`` with ``k`` in ``(2 pi / L) Z^3`` (FFT
ordering along each axis).  The forward transform carries the ``1/n^3``
factor, so a constant field ``c`` has ``c_0 = c`` and the discrete Parseval
identity reads ``sum_j |f_j|^2 h^3 = L^3 sum_k |c_k|^2``.  The phase is taken
with respect to the box centre, so coefficients of even real fields are real.

With this convention a derivative is the multiplier ``i k``, the inverse
Laplacian ``-1/|k|^2`` and the heat semigroup ``exp(-|k|^2 t)``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.fft as sfft

__all__ = [
    "Grid",
    "GridMismatchError",
    "PhysicalVectorField",
    "SpectralScalarField",
    "SpectralVectorField",
    "bilinear_B",
    "dealias",
    "divergence",
    "gradient",
    "heat_multiply",
    "hermitian_defect",
    "inverse_laplacian",
    "inverse_transform",
    "laplacian",
    "leray_project",
    "make_grid",
    "nonlinear_flux",
    "transform",
]

_AXES = (-3, -2, -1)
REAL_TOL = 1e-12


class GridMismatchError(ValueError):
    """Raised when fields living on different grids are combined."""


def fft_workers() -> int:
    """Number of FFT threads, capped by ``NSTEADY_THREADS`` when set."""
    cap = os.environ.get("NSTEADY_THREADS")
    ncpu = os.cpu_count() or 1
    if cap:
        try:
            return max(1, min(int(cap), ncpu))
        except ValueError:
            pass
    return ncpu


def _fwd(samples: np.ndarray) -> np.ndarray:
    shifted = np.fft.ifftshift(samples, axes=_AXES)
    return sfft.fftn(shifted, axes=_AXES, norm="forward", workers=fft_workers())


def _inv(coeffs: np.ndarray) -> np.ndarray:
    out = sfft.ifftn(coeffs, axes=_AXES, norm="forward", workers=fft_workers())
    return np.fft.fftshift(out, axes=_AXES)


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid of ``n`` samples per axis on a box of side ``L``."""

    n: int
    L: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 8 or self.n % 2:
            raise ValueError(f"n must be an even integer >= 8, got {self.n!r}")
        if not np.isfinite(self.L) or self.L <= 0:
            raise ValueError(f"box length must be positive, got {self.L!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "L", float(self.L))

    @property
    def h(self) -> float:
        return self.L / self.n

    @property
    def cell_volume(self) -> float:
        return self.h**3

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n)

    @property
    def grid_id(self) -> str:
        return f"n{self.n}_L{self.L:g}"

    @property
    def k_nyquist(self) -> float:
        return np.pi * self.n / self.L

    @property
    def k_dealias(self) -> float:
        """Radius of the 2/3-rule sphere, ``(2 pi / L) (n / 3)``."""
        return 2.0 * self.k_nyquist / 3.0

    @cached_property
    def coords(self) -> np.ndarray:
        return _freeze(-0.5 * self.L + self.h * np.arange(self.n))

    def mesh(self, offset: bool = False) -> np.ndarray:
        """Node coordinates, shape ``(3, n, n, n)``.

        ``offset=True`` shifts every node by half a cell; this is how singular
        functions are sampled (no sample hits the origin).
        """
        x = self.coords + (0.5 * self.h if offset else 0.0)
        return np.stack(np.meshgrid(x, x, x, indexing="ij"))

    @cached_property
    def radius(self) -> np.ndarray:
        x = self.coords
        r2 = x[:, None, None] ** 2 + x[None, :, None] ** 2 + x[None, None, :] ** 2
        return _freeze(np.sqrt(r2))

    @cached_property
    def k1d(self) -> np.ndarray:
        return _freeze(2.0 * np.pi * np.fft.fftfreq(self.n, d=self.h))

    @cached_property
    def wavevectors(self) -> np.ndarray:
        k = self.k1d
        kk = np.stack(np.meshgrid(k, k, k, indexing="ij"))
        return _freeze(kk)

    @cached_property
    def k2(self) -> np.ndarray:
        return _freeze(np.sum(self.wavevectors**2, axis=0))

    @cached_property
    def inv_k2(self) -> np.ndarray:
        """``1/|k|^2`` with the zero mode set to 0."""
        out = np.zeros(self.shape)
        nz = self.k2 > 0
        out[nz] = 1.0 / self.k2[nz]
        return _freeze(out)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        return _freeze(np.sqrt(self.k2) < self.k_dealias * (1.0 - 1e-12))

    def sample(self, func: Callable, offset: bool = False) -> "PhysicalVectorField":
        """Evaluate ``func(x1, x2, x3)`` returning a 3-vector at every node."""
        x = self.mesh(offset)
        vals = np.asarray(func(x[0], x[1], x[2]))
        vals = np.broadcast_to(vals, (3,) + self.shape).copy()
        return PhysicalVectorField(self, vals)


def make_grid(n: int, L: float) -> Grid:
    return Grid(n, L)


def _check_same_grid(*fields):
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise GridMismatchError(f"grid mismatch: {g.grid_id} vs {f.grid.grid_id}")
    return g


@dataclass(frozen=True, eq=False)
class PhysicalVectorField:
    """Samples of a 3-component field, array layout ``(component, i1, i2, i3)``."""

    grid: Grid
    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.shape != (3,) + self.grid.shape:
            raise ValueError(f"expected samples of shape {(3,) + self.grid.shape}, got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("field samples must be finite")
        if not np.iscomplexobj(s):
            s = s.astype(np.float64, copy=False)
        object.__setattr__(self, "samples", _freeze(s))

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.samples)

    def magnitude(self) -> np.ndarray:
        """Pointwise Euclidean norm across components."""
        return np.sqrt(np.sum(np.abs(self.samples) ** 2, axis=0))

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.samples) ** 2) * self.grid.cell_volume))

    def __add__(self, other):
        _check_same_grid(self, other)
        return PhysicalVectorField(self.grid, self.samples + other.samples)

    def __sub__(self, other):
        _check_same_grid(self, other)
        return PhysicalVectorField(self.grid, self.samples - other.samples)

    def __mul__(self, a):
        return PhysicalVectorField(self.grid, a * self.samples)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class SpectralScalarField:
    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.shape != self.grid.shape:
            raise ValueError(f"expected coefficients of shape {self.grid.shape}, got {c.shape}")
        object.__setattr__(self, "coeffs", _freeze(c))

    def norm(self) -> float:
        return float(np.sqrt(self.grid.L**3 * np.sum(np.abs(self.coeffs) ** 2)))

    def to_physical(self) -> np.ndarray:
        return _inv(self.coeffs)


@dataclass(frozen=True, eq=False)
class SpectralVectorField:
    """Fourier coefficients of a 3-component field, shape ``(3, n, n, n)``.

    The coefficient array is frozen on construction; every operation
    returns a new field.
    """

    grid: Grid
    coeffs: np.ndarray
    real_valued: bool = True

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.shape != (3,) + self.grid.shape:
            raise ValueError(f"expected coefficients of shape {(3,) + self.grid.shape}, got {c.shape}")
        object.__setattr__(self, "coeffs", _freeze(c))

    @classmethod
    def zeros(cls, grid: Grid) -> "SpectralVectorField":
        return cls(grid, np.zeros((3,) + grid.shape, dtype=np.complex128))

    @cached_property
    def physical(self) -> np.ndarray:
        """Real-space samples (real array when the field is real valued)."""
        s = _inv(self.coeffs)
        if self.real_valued:
            s = s.real.copy()
        return _freeze(s)

    def to_physical(self) -> PhysicalVectorField:
        return PhysicalVectorField(self.grid, self.physical)

    def l2_norm(self) -> float:
        return float(np.sqrt(self.grid.L**3 * np.sum(np.abs(self.coeffs) ** 2)))

    def hermitian_defect(self) -> float:
        return hermitian_defect(self.coeffs)

    def _new(self, coeffs, real_valued=None):
        rv = self.real_valued if real_valued is None else real_valued
        return SpectralVectorField(self.grid, coeffs, rv)

    def __add__(self, other):
        _check_same_grid(self, other)
        return self._new(self.coeffs + other.coeffs, self.real_valued and other.real_valued)

    def __sub__(self, other):
        _check_same_grid(self, other)
        return self._new(self.coeffs - other.coeffs, self.real_valued and other.real_valued)

    def __mul__(self, a):
        rv = self.real_valued and np.isrealobj(a)
        return self._new(a * self.coeffs, rv)

    __rmul__ = __mul__

    def __neg__(self):
        return self._new(-self.coeffs)


def hermitian_defect(coeffs: np.ndarray) -> float:
    """Relative defect ``max |c(-k) - conj c(k)| / max |c(k)|``."""
    c = np.asarray(coeffs)
    flipped = np.roll(np.flip(c, axis=_AXES), 1, axis=_AXES)
    scale = np.max(np.abs(c))
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(flipped - np.conj(c))) / scale)


def transform(field: PhysicalVectorField) -> SpectralVectorField:
    coeffs = _fwd(field.samples)
    return SpectralVectorField(field.grid, coeffs, real_valued=not field.is_complex)


def inverse_transform(field: SpectralVectorField) -> PhysicalVectorField:
    return field.to_physical()


def scalar_transform(grid: Grid, samples: np.ndarray) -> SpectralScalarField:
    return SpectralScalarField(grid, _fwd(np.asarray(samples)))


def leray_project(field: SpectralVectorField) -> SpectralVectorField:
    """Apply ``delta_jl - k_j k_l / |k|^2``; the zero mode passes through."""
    k = field.grid.wavevectors
    kdotc = np.sum(k * field.coeffs, axis=0)
    return field._new(field.coeffs - k * (kdotc * field.grid.inv_k2))


def inverse_laplacian(field: SpectralVectorField) -> SpectralVectorField:
    """Multiply by ``-1/|k|^2``; the zero mode is set to zero."""
    return field._new(-field.grid.inv_k2 * field.coeffs)


def laplacian(field: SpectralVectorField) -> SpectralVectorField:
    return field._new(-field.grid.k2 * field.coeffs)


def heat_multiply(field: SpectralVectorField, t: float) -> SpectralVectorField:
    """Heat semigroup ``exp(t Delta)``: multiply every mode by ``exp(-|k|^2 t)``."""
    if not t >= 0:
        raise ValueError(f"heat time must be nonnegative, got {t!r}")
    if t == 0:
        return field
    return field._new(np.exp(-field.grid.k2 * t) * field.coeffs)


def divergence(field: SpectralVectorField) -> SpectralScalarField:
    k = field.grid.wavevectors
    return SpectralScalarField(field.grid, 1j * np.sum(k * field.coeffs, axis=0))


def gradient(phi: SpectralScalarField, real_valued: bool = True) -> SpectralVectorField:
    k = phi.grid.wavevectors
    return SpectralVectorField(phi.grid, 1j * k * phi.coeffs, real_valued)


def dealias(field: SpectralVectorField) -> SpectralVectorField:
    return field._new(field.coeffs * field.grid.dealias_mask)


def _reflect(c: np.ndarray) -> np.ndarray:
    """``c(-k)`` on the FFT index grid."""
    return np.roll(np.flip(c, axis=_AXES), 1, axis=_AXES)


def _fwd_real_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Transforms of two real arrays from one complex FFT."""
    z = _fwd(a + 1j * b)
    zr = np.conj(_reflect(z))
    return 0.5 * (z + zr), -0.5j * (z - zr)


def product_spectrum(U: SpectralVectorField, V: SpectralVectorField) -> np.ndarray:
    """Dealiased coefficients of ``W_hl = U_h V_l``, shape ``(3, 3, n, n, n)``."""
    g = _check_same_grid(U, V)
    if not (U.real_valued and V.real_valued):
        raise ValueError("bilinear terms are only defined for real-valued fields")
    u, v = U.physical, V.physical
    mask = g.dealias_mask
    W = np.empty((3, 3) + g.shape, dtype=np.complex128)
    if U is V:
        pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
    else:
        pairs = [(h, l) for h in range(3) for l in range(3)]
    if len(pairs) % 2:
        pairs.append(None)
    for p, q in zip(pairs[0::2], pairs[1::2]):
        b = u[q[0]] * v[q[1]] if q else np.zeros(g.shape)
        A, B = _fwd_real_pair(u[p[0]] * v[p[1]], b)
        W[p] = A * mask
        if q:
            W[q] = B * mask
    if U is V:
        for h, l in ((1, 0), (2, 0), (2, 1)):
            W[h, l] = W[l, h]
    return W


def nonlinear_flux(U: SpectralVectorField, V: SpectralVectorField) -> SpectralVectorField:
    """``P div(U (x) V)`` with ``div(U (x) V)_l = sum_h d_h (U_h V_l)``, dealiased."""
    g = U.grid
    W = product_spectrum(U, V)
    k = g.wavevectors
    d = 1j * np.einsum("hxyz,hlxyz->lxyz", k, W)
    return leray_project(SpectralVectorField(g, d, True))


def bilinear_B(U: SpectralVectorField, V: SpectralVectorField) -> SpectralVectorField:
    """``B(U, V) = Delta^{-1} P div(U (x) V)``."""
    return inverse_laplacian(nonlinear_flux(U, V))


def multiplier_symbol(xi: np.ndarray) -> np.ndarray:
    """Continuum symbol of ``Delta^{-1} P div``.

    ``m_hat[j, h, l](xi) = -i xi_h (delta_jl - xi_j xi_l / |xi|^2) / |xi|^2``
    for ``xi`` of shape ``(3, ...)``; undefined at ``xi = 0``.
    """
    xi = np.asarray(xi, dtype=float)
    r2 = np.sum(xi**2, axis=0)
    eye = np.eye(3).reshape((3, 3) + (1,) * (xi.ndim - 1))
    proj = eye - xi[:, None] * xi[None, :] / r2
    return -1j * xi[None, :, None] * proj[:, None, :] / r2
