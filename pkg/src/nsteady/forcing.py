"""Force fields, the first iterate ``U0 = -Delta^{-1} P f`` and the Landau jets."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .spectral_core import (
    Grid,
    PhysicalVectorField,
    SpectralVectorField,
    inverse_laplacian,
    leray_project,
    transform,
)

__all__ = [
    "ForceSpec",
    "LandauParams",
    "PreconditionError",
    "annulus_window",
    "build_force",
    "compute_U0",
    "force_spectrum",
    "landau_field",
    "landau_pressure",
    "landau_regularized",
    "symmetrize",
    "symmetry_group",
]

KINDS = ("zero", "regularized_dirac", "fourier_annulus", "symmetric_annulus", "custom_snapshot")
MEAN_TOL = 1e-12


class PreconditionError(ValueError):
    """Input violates the documented preconditions of an operation."""


@dataclass(frozen=True)
class ForceSpec:
    """Declarative description of a force.

    Parameters
    ----------
    kind
        One of ``zero``, ``regularized_dirac``, ``fourier_annulus``,
        ``symmetric_annulus``, ``custom_snapshot``.
    amplitude
        Dirac strength ``eps`` for ``regularized_dirac``; peak magnitude of
        the field for the annulus kinds; overall factor for snapshots.
    direction
        Direction of the Dirac force (normalised internally).
    width
        Gaussian width ``sigma`` of the regularised Dirac, at least two cells.
    k_inner, k_outer
        Spectral support ``[k_inner, k_outer]`` of the annulus kinds; must
        lie inside the dealiasing sphere.
    seed
        Seed of the blob generator for the annulus kinds.
    blobs
        Number of random Gaussian blobs shaping the annulus force.
    path
        NSF1 file for ``custom_snapshot``.
    """

    kind: str
    amplitude: float = 1.0
    direction: tuple[float, float, float] = (1.0, 0.0, 0.0)
    width: float | None = None
    k_inner: float | None = None
    k_outer: float | None = None
    seed: int = 0
    blobs: int = 6
    path: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PreconditionError(f"unknown force kind {self.kind!r}; expected one of {KINDS}")
        if self.kind != "zero" and not (np.isfinite(self.amplitude) and self.amplitude > 0):
            raise PreconditionError(f"force amplitude must be positive, got {self.amplitude!r}")

    def scaled(self, factor: float) -> "ForceSpec":
        return ForceSpec(**{**self.__dict__, "amplitude": self.amplitude * factor})

    def check(self, grid: Grid) -> None:
        """Raise :class:`PreconditionError` if this force is not realisable on ``grid``."""
        if self.kind == "regularized_dirac":
            if self.width is None or self.width < 2 * grid.h:
                raise PreconditionError(
                    f"Dirac width {self.width!r} is under-resolved; need >= 2 cells = {2 * grid.h:.4g}"
                )
            if np.linalg.norm(self.direction) == 0:
                raise PreconditionError("Dirac direction must be nonzero")
        elif self.kind in ("fourier_annulus", "symmetric_annulus"):
            km, kp = self.k_inner, self.k_outer
            if km is None or kp is None or not (0 < km < kp < grid.k_dealias):
                raise PreconditionError(
                    f"annulus [{km}, {kp}] must satisfy 0 < k_inner < k_outer < {grid.k_dealias:.4g}"
                )
            if self.blobs < 1:
                raise PreconditionError("annulus needs at least one blob")
        elif self.kind == "custom_snapshot" and not self.path:
            raise PreconditionError("custom_snapshot needs a path")


def _smooth_step(z: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for z <= 0, 1 for z >= 1."""
    z = np.clip(z, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(z > 0, np.exp(-1.0 / np.where(z > 0, z, 1.0)), 0.0)
        b = np.where(z < 1, np.exp(-1.0 / np.where(z < 1, 1.0 - z, 1.0)), 0.0)
    return a / (a + b)


def annulus_window(kmag: np.ndarray, k_inner: float, k_outer: float) -> np.ndarray:
    """Smooth radial window equal to 0 outside ``(k_inner, k_outer)``.

    Each edge ramps over a third of the annulus width.
    """
    w = (k_outer - k_inner) / 3.0
    return _smooth_step((kmag - k_inner) / w) * _smooth_step((k_outer - kmag) / w)


def _annulus_coeffs(spec: ForceSpec, grid: Grid) -> np.ndarray:
    # f_hat = window(|k|) |k|^4 g_hat(k), g a sum of Gaussian blobs: the
    # |k|^4 factor and the blob envelope keep f well localised in space
    rng = np.random.default_rng(spec.seed)
    kc = 0.5 * (spec.k_inner + spec.k_outer)
    sigma = 2.0 / kc
    centres = rng.normal(scale=sigma, size=(spec.blobs, 3))
    amps = rng.normal(size=(spec.blobs, 3))
    k = grid.wavevectors
    env = np.exp(-0.5 * sigma**2 * grid.k2)
    g_hat = np.zeros((3,) + grid.shape, dtype=np.complex128)
    for c, a in zip(centres, amps):
        phase = np.exp(-1j * np.einsum("i,i...->...", c, k))
        g_hat += a[:, None, None, None] * (env * phase)[None]
    win = annulus_window(np.sqrt(grid.k2), spec.k_inner, spec.k_outer)
    return g_hat * (win * grid.k2**2)[None]


def symmetry_group() -> list[tuple[tuple[int, int, int], tuple[int, int, int]]]:
    """Elements of the group generated by the cyclic map and one reflection.

    An element ``(perm, signs)`` is the orthogonal map
    ``G x = (signs[i] * x[perm[i]])_i``.  The cyclic permutations combined with
    the eight sign patterns give 24 elements.
    """
    perms = [(0, 1, 2), (1, 2, 0), (2, 0, 1)]
    signs = list(itertools.product((1, -1), repeat=3))
    return [(p, s) for p in perms for s in signs]


def _negate_axis(a: np.ndarray, axis: int) -> np.ndarray:
    # node j sits at -L/2 + j h; its mirror image is node (n - j) mod n
    return np.roll(np.flip(a, axis=axis), 1, axis=axis)


def pull_back(samples: np.ndarray, perm, signs) -> np.ndarray:
    """Samples of ``G^T f(G x)`` for the signed permutation ``G``."""
    inv = np.argsort(perm)
    out = np.empty_like(samples)
    for k in range(3):
        a = samples[k]
        for d in range(3):
            if signs[d] < 0:
                a = _negate_axis(a, d)
        a = np.transpose(a, tuple(inv))
        out[perm[k]] = signs[k] * a
    return out


def symmetrize(field: PhysicalVectorField) -> PhysicalVectorField:
    """Average ``G^T f(G x)`` over :func:`symmetry_group`."""
    acc = np.zeros_like(field.samples)
    group = symmetry_group()
    for perm, signs in group:
        acc += pull_back(field.samples, perm, signs)
    return PhysicalVectorField(field.grid, acc / len(group))


def _dirac(spec: ForceSpec, grid: Grid) -> np.ndarray:
    e = np.asarray(spec.direction, dtype=float)
    e = e / np.linalg.norm(e)
    s = spec.width
    r2 = grid.radius**2
    bump = spec.amplitude * (2 * np.pi * s * s) ** -1.5 * np.exp(-0.5 * r2 / (s * s))
    f = e[:, None, None, None] * bump[None]
    return f - f.mean(axis=(1, 2, 3), keepdims=True)


def force_spectrum(spec: ForceSpec, grid: Grid) -> SpectralVectorField:
    """Fourier coefficients of the force described by ``spec``; zero mean."""
    spec.check(grid)
    if spec.kind == "zero":
        return SpectralVectorField.zeros(grid)
    if spec.kind == "regularized_dirac":
        F = transform(PhysicalVectorField(grid, _dirac(spec, grid)))
        c = F.coeffs.copy()
        c[:, 0, 0, 0] = 0
        return SpectralVectorField(grid, c)
    if spec.kind == "custom_snapshot":
        from .snapshot import read_snapshot

        snap = read_snapshot(spec.path)
        if snap.grid != grid:
            raise PreconditionError(f"snapshot grid {snap.grid.grid_id} does not match {grid.grid_id}")
        if isinstance(snap, PhysicalVectorField):
            if snap.is_complex:
                raise PreconditionError("custom force snapshots must be real valued")
            c = transform(snap).coeffs.copy()
        else:
            c = np.array(snap.coeffs)
        c[:, 0, 0, 0] = 0
        return SpectralVectorField(grid, spec.amplitude * c)
    c = _annulus_coeffs(spec, grid)
    phys = np.fft.fftshift(np.fft.ifftn(c, axes=(1, 2, 3)), axes=(1, 2, 3)).real
    if spec.kind == "symmetric_annulus":
        phys = symmetrize(PhysicalVectorField(grid, phys)).samples
    peak = np.sqrt(np.sum(phys**2, axis=0)).max()
    F = transform(PhysicalVectorField(grid, phys * (spec.amplitude / peak)))
    # round-off outside the window is removed; the support is then exact
    win = annulus_window(np.sqrt(grid.k2), spec.k_inner, spec.k_outer) > 0
    return SpectralVectorField(grid, F.coeffs * win[None])


def build_force(spec: ForceSpec, grid: Grid) -> PhysicalVectorField:
    """Physical samples of the force described by ``spec``."""
    return force_spectrum(spec, grid).to_physical()


def compute_U0(force) -> SpectralVectorField:
    """First iterate ``U0 = -Delta^{-1} P f`` of a zero-mean force."""
    if isinstance(force, PhysicalVectorField):
        force = transform(force)
    c0 = np.abs(force.coeffs[:, 0, 0, 0]).max()
    scale = np.abs(force.coeffs).max()
    if c0 > MEAN_TOL * max(scale, np.finfo(float).tiny):
        raise PreconditionError(f"force has nonzero mean (|c_0| = {c0:.3e})")
    return -inverse_laplacian(leray_project(force))


# --- Landau jets ----------------------------------------------------------


@dataclass(frozen=True)
class LandauParams:
    """Landau jet along ``axis`` with shape parameter ``c``, ``|c| > 1``.

    ``|c| -> 1`` gives a strong narrow jet, ``|c| -> inf`` a weak one; the
    sign of ``c`` sets the jet orientation.
    """

    axis: tuple[float, float, float] = (1.0, 0.0, 0.0)
    c: float = 2.0

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=float)
        na = np.linalg.norm(a)
        if na == 0:
            raise PreconditionError("Landau axis must be nonzero")
        object.__setattr__(self, "axis", tuple(float(v) for v in a / na))
        if not abs(self.c) > 1:
            raise PreconditionError(f"Landau parameter must satisfy |c| > 1, got {self.c!r}")

    def frame(self) -> np.ndarray:
        """Orthogonal matrix whose first column is the axis."""
        a = np.asarray(self.axis)
        helper = np.eye(3)[np.argmin(np.abs(a))]
        b = np.cross(a, helper)
        b /= np.linalg.norm(b)
        return np.column_stack([a, b, np.cross(a, b)])


def _landau_e1(x1, x2, x3, c):
    r = np.sqrt(x1 * x1 + x2 * x2 + x3 * x3)
    d = r * (c * r - x1) ** 2
    u1 = 2 * (c * r * r - 2 * x1 * r + c * x1 * x1) / d
    t = 2 * (c * x1 - r) / d
    return np.stack([u1, x2 * t, x3 * t]), 4 * (c * x1 - r) / d


def _rotated(params: LandauParams, x: np.ndarray, func):
    Q = params.frame()
    y = np.einsum("ji,j...->i...", Q, x)  # Q^T x
    out = func(y)
    if out.ndim == x.ndim:
        return np.einsum("ij,j...->i...", Q, out)
    return out


def landau_field(params: LandauParams, grid: Grid, offset: bool = True) -> PhysicalVectorField:
    """Closed-form Landau velocity sampled on ``grid``.

    The field is homogeneous of degree -1 and axisymmetric about the axis.
    With ``offset=True`` (the default) samples sit at cell centres, so the
    origin is never evaluated.
    """
    if not offset:
        raise PreconditionError("the Landau field is singular at the origin; sample with offset=True")
    x = grid.mesh(offset=True)
    u = _rotated(params, x, lambda y: _landau_e1(y[0], y[1], y[2], params.c)[0])
    return PhysicalVectorField(grid, u)


def landau_pressure(params: LandauParams, x: np.ndarray) -> np.ndarray:
    """Landau pressure at points ``x`` of shape ``(3, ...)``."""
    return _rotated(params, np.asarray(x, float), lambda y: _landau_e1(y[0], y[1], y[2], params.c)[1])


def landau_velocity(params: LandauParams, x: np.ndarray) -> np.ndarray:
    """Landau velocity at points ``x`` of shape ``(3, ...)``."""
    return _rotated(params, np.asarray(x, float), lambda y: _landau_e1(y[0], y[1], y[2], params.c)[0])


@lru_cache(maxsize=None)
def _regularized_kernel():
    import sympy as sp

    x1, x2, x3 = sp.symbols("x1 x2 x3", real=True)
    c = sp.Symbol("c", real=True)
    a, rf = sp.symbols("a rf", positive=True)
    X = (x1, x2, x3)
    r = sp.sqrt(x1**2 + x2**2 + x3**2)
    ra = (r**4 + a**4) ** sp.Rational(1, 4)
    cut = sp.exp(-((r / rf) ** 12))
    # the Landau velocity is the curl of 2 (0, -x3, x2) / (c r - x1); replacing
    # r by ra in the potential removes the singularity and keeps div u = 0
    A = (sp.Integer(0), -2 * x3 / (c * ra - x1) * cut, 2 * x2 / (c * ra - x1) * cut)
    u = (
        sp.diff(A[2], x2) - sp.diff(A[1], x3),
        sp.diff(A[0], x3) - sp.diff(A[2], x1),
        sp.diff(A[1], x1) - sp.diff(A[0], x2),
    )
    p = 4 * (c * x1 - ra) / (ra * (c * ra - x1) ** 2) * cut
    f = tuple(
        sum(u[i] * sp.diff(u[j], X[i]) for i in range(3))
        + sp.diff(p, X[j])
        - sum(sp.diff(u[j], X[i], 2) for i in range(3))
        for j in range(3)
    )
    return sp.lambdify((x1, x2, x3, c, a, rf), (*u, *f), modules="numpy", cse=True)


def landau_regularized(
    params: LandauParams, grid: Grid, core: float = 1.0, cutoff: float | None = None
) -> tuple[SpectralVectorField, SpectralVectorField]:
    """Smooth divergence-free Landau jet and the force that drives it exactly.

    The radius in the vector potential is replaced by ``(r^4 + core^4)^{1/4}``
    and the potential is damped by ``exp(-(r / cutoff)^12)`` (default
    ``cutoff = 0.35 L``), so the velocity deviates from the closed form by a
    relative ``O((core / r)^4)`` inside the cutoff.  The returned force is
    ``u . grad u + grad p - Delta u`` of that velocity, evaluated in closed
    form.  Returns ``(U, f)`` as spectral fields.
    """
    cutoff = 0.35 * grid.L if cutoff is None else cutoff
    fn = _regularized_kernel()
    Q = params.frame()
    x = grid.mesh()
    y = np.einsum("ji,j...->i...", Q, x)
    vals = [np.broadcast_to(v, grid.shape) for v in fn(y[0], y[1], y[2], params.c, core, cutoff)]
    u = np.stack(vals[:3])
    f = np.stack(vals[3:])
    u = np.einsum("ij,j...->i...", Q, u)
    f = np.einsum("ij,j...->i...", Q, f)
    U = transform(PhysicalVectorField(grid, u))
    F = transform(PhysicalVectorField(grid, f))
    return U, F
