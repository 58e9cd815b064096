"""Far-field analysis of steady solutions.

Shell decay fits, the momentum matrix ``M = int U (x) U``, the degree -2
Stokes profile ``m(x) : M`` and the directional diagnostics used to tell
isotropic from anisotropic momentum.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

from .spectral_core import Grid, PhysicalVectorField, SpectralVectorField, dealias, transform

__all__ = [
    "AnalysisGuardError",
    "DecayFit",
    "MomentumMatrix",
    "anisotropy_deviation",
    "directional_floor_fraction",
    "kernel_oracle_error",
    "momentum_matrix",
    "nonexistence_diagnostic",
    "profile_residual",
    "shell_decay_fit",
    "sphere_directions",
    "stokes_profile_spectral",
    "stokes_profile_term",
]


class AnalysisGuardError(ValueError):
    """An analysis window violates a guard (wrap-around radius, shell count)."""


@dataclass(frozen=True)
class DecayFit:
    exponent: float
    intercept: float
    r_window: tuple[float, float]
    residual: float
    shell_stat: str
    radii: tuple[float, ...] = ()
    values: tuple[float, ...] = ()

    def to_dict(self) -> dict:
        return {
            "exponent": self.exponent,
            "intercept": self.intercept,
            "r_window": list(self.r_window),
            "residual": self.residual,
            "shell_stat": self.shell_stat,
            "n_shells": len(self.radii),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def write_profile(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "stat"])
            for r, v in zip(self.radii, self.values):
                w.writerow([repr(r), repr(v)])


def _samples(f, offset: bool = False):
    """Magnitudes, node radii and grid of a field."""
    if isinstance(f, SpectralVectorField):
        f = f.to_physical()
    g = f.grid
    x = g.mesh(offset)
    r = np.sqrt(np.sum(x**2, axis=0))
    return f.magnitude(), r, g


def shell_decay_fit(
    f, r_min: float, r_max: float, n_shells: int = 8, stat: str = "max", offset: bool = False
) -> DecayFit:
    """Least-squares slope of ``log stat`` against ``log r`` over radial shells.

    Shells are logarithmically spaced between ``r_min`` and ``r_max``.  For
    ``stat="max"`` each shell contributes its largest magnitude at the radius
    where it occurs; ``stat="l2_mean"`` uses the root mean square over the
    shell at its root-mean-square radius.  ``offset`` must match the sampling
    of ``f`` (cell centres instead of nodes).
    """
    if stat not in ("max", "l2_mean"):
        raise ValueError(f"unknown shell statistic {stat!r}")
    mag, r, g = _samples(f, offset)
    if not (0 < r_min < r_max):
        raise AnalysisGuardError(f"need 0 < r_min < r_max, got [{r_min}, {r_max}]")
    if r_max > g.L / 4 * (1 + 1e-12):
        raise AnalysisGuardError(f"r_max = {r_max:.4g} exceeds the wrap-around guard L/4 = {g.L / 4:.4g}")
    if n_shells < 6:
        raise AnalysisGuardError(f"at least 6 shells are required, got {n_shells}")
    edges = np.geomspace(r_min, r_max, n_shells + 1)
    radii, vals = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (r >= lo) & (r < hi) if hi < edges[-1] else (r >= lo) & (r <= hi)
        if not np.any(sel):
            raise AnalysisGuardError(f"empty shell [{lo:.4g}, {hi:.4g}); the grid is too coarse")
        m, rs = mag[sel], r[sel]
        if stat == "max":
            i = int(np.argmax(m))
            radii.append(float(rs[i]))
            vals.append(float(m[i]))
        else:
            radii.append(float(np.sqrt(np.mean(rs**2))))
            vals.append(float(np.sqrt(np.mean(m**2))))
    if min(vals) <= 0.0:
        raise AnalysisGuardError("the field vanishes on a shell of the fit window; no decay rate is defined")
    lr, lv = np.log(radii), np.log(vals)
    slope, icpt = np.polyfit(lr, lv, 1)
    resid = float(np.sqrt(np.mean((lv - (slope * lr + icpt)) ** 2)))
    return DecayFit(float(slope), float(icpt), (float(r_min), float(r_max)), resid, stat, tuple(radii), tuple(vals))


@dataclass(frozen=True)
class MomentumMatrix:
    entries: np.ndarray

    def __post_init__(self):
        e = np.array(self.entries, dtype=float)
        if e.shape != (3, 3):
            raise ValueError("momentum matrix must be 3x3")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @property
    def trace(self) -> float:
        return float(np.trace(self.entries))

    def tolist(self):
        return self.entries.tolist()


def momentum_matrix(U) -> MomentumMatrix:
    """``M_hl = sum_x U_h U_l h^3``, symmetrised against round-off."""
    if isinstance(U, SpectralVectorField):
        if not U.real_valued:
            raise ValueError("momentum matrix needs a real-valued field")
        U = U.to_physical()
    u = U.samples.reshape(3, -1)
    M = (u @ u.T) * U.grid.cell_volume
    return MomentumMatrix(0.5 * (M + M.T))


def anisotropy_deviation(M) -> float:
    """``||M - (tr M / 3) I||_F / ||M||_F``, in ``[0, sqrt(2/3)]`` for PSD ``M``."""
    A = M.entries if isinstance(M, MomentumMatrix) else np.asarray(M, dtype=float)
    nrm = np.linalg.norm(A)
    if nrm == 0:
        raise ValueError("anisotropy of the zero matrix is undefined")
    return float(np.linalg.norm(A - np.trace(A) / 3 * np.eye(3)) / nrm)


def _profile_closed(M: np.ndarray, x: np.ndarray) -> np.ndarray:
    r = np.sqrt(np.sum(x**2, axis=0))
    safe = np.where(r > 0, r, 1.0)
    q = np.einsum("i...,ij,j...->...", x, M, x) / safe**2
    out = x / (8 * np.pi * safe**3) * (3 * q - np.trace(M))
    return np.where(r > 0, out, 0.0)


def stokes_profile_term(M, grid: Grid, offset: bool = False) -> PhysicalVectorField:
    """Degree -2 far-field term ``[m(x) : M]_j``.

    ``m_jhl = -d_h E_jl`` with ``E`` the Oseen tensor
    ``(delta_jl / r + x_j x_l / r^3) / (8 pi)``, contracted with a symmetric
    ``M``; this gives ``x_j (3 xhat.M.xhat - tr M) / (8 pi r^3)``.  Node
    sampling puts 0 at the origin node.
    """
    A = M.entries if isinstance(M, MomentumMatrix) else np.asarray(M, dtype=float)
    return PhysicalVectorField(grid, _profile_closed(A, grid.mesh(offset)))


def _profile_coeffs(A: np.ndarray, grid: Grid, s: float) -> np.ndarray:
    k = grid.wavevectors
    Mk = np.einsum("hl,hxyz->lxyz", A, k)
    proj = Mk - k * np.einsum("lxyz,lxyz->xyz", k, Mk) * grid.inv_k2
    return -1j * proj * grid.inv_k2 * np.exp(-s * grid.k2) / grid.L**3


def stokes_profile_spectral(M, grid: Grid, s: float | None = None) -> SpectralVectorField:
    """Periodic counterpart of :func:`stokes_profile_term`.

    Coefficients ``m_hat(k) : M exp(-s |k|^2) / L^3``, i.e. the bilinear term
    produced by a momentum flux ``M`` concentrated in a Gaussian of variance
    ``2 s`` (default ``s = h^2``).  On the box this replaces the closed form,
    whose periodic images differ from it by ``O(r / L^3)``.
    """
    A = M.entries if isinstance(M, MomentumMatrix) else np.asarray(M, dtype=float)
    s = grid.h**2 if s is None else s
    return dealias(SpectralVectorField(grid, _profile_coeffs(A, grid, s)))


def kernel_oracle_error(M, grid: Grid, pad: int = 2, s_cells: float = 0.4) -> float:
    """Relative RMS gap between the closed-form profile and its multiplier.

    The multiplier ``m_hat : M`` is damped by ``exp(-s |k|^2)`` and inverted
    by FFT on a reference box ``pad`` times larger (same spacing), which
    pushes periodic images away.  Two damping widths ``s`` and ``2 s``
    (``s = s_cells h^2``) are combined as ``2 f_s - f_2s`` to cancel the
    leading smoothing bias.  The gap is measured on ``L/8 <= r <= L/4`` of
    the original box.
    """
    A = M.entries if isinstance(M, MomentumMatrix) else np.asarray(M, dtype=float)
    ref = Grid(grid.n * pad, grid.L * pad)
    s = s_cells * ref.h**2

    def recon(sv):
        return SpectralVectorField(ref, _profile_coeffs(A, ref, sv)).physical

    approx = 2 * recon(s) - recon(2 * s)
    exact = _profile_closed(A, ref.mesh())
    r = ref.radius
    sel = (r >= grid.L / 8) & (r <= grid.L / 4)
    return float(np.sqrt(np.sum((approx - exact)[:, sel] ** 2) / np.sum(exact[:, sel] ** 2)))


def profile_residual(
    U: SpectralVectorField,
    U0: SpectralVectorField,
    M=None,
    r_min: float = 5.0,
    r_max: float | None = None,
    n_shells: int = 8,
    stat: str = "max",
    variant: str = "periodic",
    fit: bool = True,
) -> tuple[SpectralVectorField, DecayFit | None]:
    """Residual ``U - U0 - m : M`` and its shell decay fit.

    ``variant="periodic"`` subtracts :func:`stokes_profile_spectral`;
    ``"closed"`` subtracts the free-space closed form.  With ``fit=False``
    only the residual is returned (paired with ``None``).
    """
    g = U.grid
    M = momentum_matrix(U) if M is None else M
    r_max = g.L / 4 if r_max is None else r_max
    if variant == "periodic":
        P = stokes_profile_spectral(M, g)
    elif variant == "closed":
        P = transform(stokes_profile_term(M, g))
    else:
        raise ValueError(f"unknown profile variant {variant!r}")
    R = U - U0 - P
    return R, (shell_decay_fit(R, r_min, r_max, n_shells, stat) if fit else None)


def sphere_directions(n: int = 500) -> np.ndarray:
    """Quasi-uniform unit vectors (Fibonacci lattice), shape ``(n, 3)``."""
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    phi = np.pi * (1 + 5**0.5) * i
    rho = np.sqrt(1 - z * z)
    return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])


def directional_profile(U, radii, n_dirs: int = 500) -> np.ndarray:
    """``|U(r w)| r^2`` for every shell radius and direction, shape ``(len(radii), n_dirs)``.

    Values between nodes come from periodic cubic-spline interpolation.
    """
    if isinstance(U, SpectralVectorField):
        U = U.to_physical()
    g = U.grid
    dirs = sphere_directions(n_dirs)
    out = np.empty((len(radii), n_dirs))
    for a, rad in enumerate(radii):
        pts = rad * dirs.T
        idx = (pts + g.L / 2) / g.h
        mags = np.zeros(n_dirs)
        for comp in U.samples:
            v = map_coordinates(comp, idx, order=3, mode="grid-wrap")
            mags += v * v
        out[a] = np.sqrt(mags) * rad**2
    return out


def directional_floor_fraction(
    U, r_min: float, r_max: float, n_shells: int = 6, n_dirs: int = 500, floor: float | None = None
) -> tuple[float, float]:
    """Fraction of directions where ``|U| r^2`` stays above ``floor`` on every shell.

    The default ``floor`` is 10% of the largest value of ``|U| r^2`` on the
    innermost shell.  Passing an explicit floor allows different fields to be
    compared against one threshold.  Returns ``(fraction, floor)``.
    """
    g = U.grid
    if r_max > g.L / 4 * (1 + 1e-12):
        raise AnalysisGuardError(f"r_max = {r_max:.4g} exceeds L/4")
    radii = np.geomspace(r_min, r_max, n_shells)
    prof = directional_profile(U, radii, n_dirs)
    if floor is None:
        floor = 0.1 * float(prof[0].max())
    ok = np.all(prof >= floor, axis=0)
    return float(np.mean(ok)), float(floor)


@dataclass
class NonexistenceReport:
    etas: list[float]
    anisotropy: list[float]
    offdiag: list[float]
    offdiag_exponent: float
    remainder_exponent: float | None
    floor_fraction: float
    floor: float
    window: tuple[float, float]
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "etas": self.etas,
            "anisotropy": self.anisotropy,
            "offdiag": self.offdiag,
            "offdiag_exponent": self.offdiag_exponent,
            "remainder_exponent": self.remainder_exponent,
            "floor_fraction": self.floor_fraction,
            "floor": self.floor,
            "window": list(self.window),
            **self.extra,
        }


def nonexistence_diagnostic(
    family,
    r_min: float = 5.0,
    r_max: float | None = None,
    n_dirs: int = 500,
    floor: float | None = None,
    entry: tuple[int, int] = (0, 1),
) -> NonexistenceReport:
    """Diagnostics of a small-amplitude family ``[(eta, U, U0), ...]``.

    * anisotropy of ``M(eta) = int U (x) U`` for each ``eta``;
    * the exponent of ``|M_entry(eta)|`` against ``eta`` (2 when the leading
      term ``eta^2 int W0 (x) W0`` dominates, ``W0 = U0 / eta``);
    * the exponent of ``|M(eta) - eta^2 int W0 (x) W0|`` (3 expected);
    * the directional floor fraction of the largest-``eta`` solution.
    """
    fam = sorted(family, key=lambda t: t[0])
    if len(fam) < 3:
        raise ValueError("the diagnostic needs solutions at three or more amplitudes")
    etas = [float(e) for e, _, _ in fam]
    Ms = [momentum_matrix(U).entries for _, U, _ in fam]
    W0s = [momentum_matrix(U0).entries for _, _, U0 in fam]
    aniso = [anisotropy_deviation(M) for M in Ms]
    h, l = entry
    off = [float(abs(M[h, l])) for M in Ms]
    le = np.log(etas)
    off_exp = float(np.polyfit(le, np.log(off), 1)[0]) if min(off) > 0 else float("nan")
    rem = [float(np.linalg.norm(M - W)) for M, W in zip(Ms, W0s)]
    rem_exp = float(np.polyfit(le, np.log(rem), 1)[0]) if min(rem) > 0 else None
    U_top = fam[-1][1]
    r_max = U_top.grid.L / 4 if r_max is None else r_max
    frac, fl = directional_floor_fraction(U_top, r_min, r_max, n_dirs=n_dirs, floor=floor)
    return NonexistenceReport(etas, aniso, off, off_exp, rem_exp, frac, fl, (r_min, r_max))
