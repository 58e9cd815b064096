"""Picard iteration for ``U = U0 + B(U, U)`` and steady-state diagnostics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .forcing import ForceSpec, PreconditionError, compute_U0, force_spectrum
from .lorentz_norms import NormReport, lebesgue_norm, lorentz_norm, weak_norm
from .spectral_core import (
    Grid,
    SpectralScalarField,
    SpectralVectorField,
    bilinear_B,
    divergence,
    product_spectrum,
)

__all__ = [
    "ContinuationResult",
    "NonConvergenceError",
    "PicardConfig",
    "PicardTrace",
    "SmallnessViolation",
    "amplitude_continuation",
    "lp_norm_sweep",
    "momentum_residual",
    "picard_solve",
    "recover_pressure",
    "steady_residual",
]


class NonConvergenceError(RuntimeError):
    """The iteration did not reach the tolerance; ``trace`` holds the history."""

    def __init__(self, message: str, trace: "PicardTrace"):
        super().__init__(message)
        self.trace = trace


class SmallnessViolation(NonConvergenceError):
    """An iterate left the ball of radius ``2 (1 + slack) ||U0||``."""


@dataclass(frozen=True)
class PicardConfig:
    max_iters: int = 40
    tol_rel: float = 1e-10
    norm_for_contraction: str = "weak3"
    safeguard: bool = True
    growth_slack: float = 0.05

    def __post_init__(self):
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol_rel > 0:
            raise ValueError("tol_rel must be positive")
        if self.norm_for_contraction not in ("weak3", "l2"):
            raise ValueError(f"unknown contraction norm {self.norm_for_contraction!r}")


@dataclass
class PicardTrace:
    """Per-iterate norms; entry 0 is the starting guess."""

    weak3: list[float] = field(default_factory=list)
    l2: list[float] = field(default_factory=list)
    increments: list[float] = field(default_factory=list)
    converged: bool = False
    reason: str = ""
    u0_weak3: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.increments)

    @property
    def ratios(self) -> list[float | None]:
        out: list[float | None] = [None]
        for a, b in zip(self.increments[:-1], self.increments[1:]):
            out.append(b / a if a > 0 else None)
        return out

    def contraction_rate(self, start: int = 1) -> float:
        """Largest increment ratio from ``start`` on (a single geometric rate)."""
        r = [x for x in self.ratios[start:] if x is not None]
        return max(r) if r else 0.0

    def max_growth(self) -> float:
        """``max_k ||U_k||_{3,inf} / ||U0||_{3,inf}``."""
        return max(self.weak3) / self.u0_weak3 if self.u0_weak3 > 0 else 0.0

    def rows(self):
        ratios = self.ratios
        for k in range(self.iterations):
            yield {
                "iter": k + 1,
                "weak3_norm": self.weak3[k + 1],
                "l2_norm": self.l2[k + 1],
                "increment": self.increments[k],
                "ratio": "" if ratios[k] is None else ratios[k],
            }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["iter", "weak3_norm", "l2_norm", "increment", "ratio"])
            w.writeheader()
            for row in self.rows():
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def _norm(f: SpectralVectorField, kind: str) -> float:
    return weak_norm(f, 3.0) if kind == "weak3" else f.l2_norm()


def _check_input(U0: SpectralVectorField):
    if not U0.real_valued:
        raise PreconditionError("U0 must be real valued")
    scale = max(np.abs(U0.coeffs).max(), np.finfo(float).tiny)
    if np.abs(U0.coeffs[:, 0, 0, 0]).max() > 1e-12 * scale:
        raise PreconditionError("U0 must have zero mean")
    div = np.abs(divergence(U0).coeffs).max()
    kmax = np.sqrt(U0.grid.k2.max())
    if div > 1e-12 * scale * kmax:
        raise PreconditionError(f"U0 is not divergence free (max |k.U0_hat| = {div:.3e})")


def picard_solve(
    U0: SpectralVectorField,
    cfg: PicardConfig = PicardConfig(),
    initial: SpectralVectorField | None = None,
) -> tuple[SpectralVectorField, PicardTrace]:
    """Iterate ``U_{k+1} = U0 + B(U_k, U_k)`` from ``U_0 = initial`` (default ``U0``).

    Convergence is declared when the increment, measured in the configured
    norm, drops below ``tol_rel`` times the same norm of ``U0``.

    Raises
    ------
    SmallnessViolation
        If the safeguard is on and an iterate's weak-3 norm exceeds
        ``2 (1 + growth_slack) ||U0||``.
    NonConvergenceError
        If ``max_iters`` iterations do not reach the tolerance.
    """
    _check_input(U0)
    trace = PicardTrace()
    n0 = weak_norm(U0, 3.0)
    trace.u0_weak3 = n0
    ref = n0 if cfg.norm_for_contraction == "weak3" else U0.l2_norm()
    bound = 2.0 * (1.0 + cfg.growth_slack) * n0
    U = U0 if initial is None else initial
    trace.weak3.append(weak_norm(U, 3.0))
    trace.l2.append(U.l2_norm())
    for _ in range(int(cfg.max_iters)):
        U_next = U0 + bilinear_B(U, U)
        inc = _norm(U_next - U, cfg.norm_for_contraction)
        U = U_next
        w3 = weak_norm(U, 3.0)
        trace.weak3.append(w3)
        trace.l2.append(U.l2_norm())
        trace.increments.append(inc)
        if cfg.safeguard and w3 > bound:
            trace.reason = f"iterate norm {w3:.4g} exceeds {bound:.4g}"
            raise SmallnessViolation(f"smallness condition failed: {trace.reason}", trace)
        if not np.isfinite(inc):
            trace.reason = "non-finite increment"
            raise NonConvergenceError(trace.reason, trace)
        if inc <= cfg.tol_rel * ref:
            trace.converged = True
            trace.reason = "tolerance reached"
            return U, trace
    trace.reason = f"no convergence after {cfg.max_iters} iterations"
    raise NonConvergenceError(trace.reason, trace)


def steady_residual(U: SpectralVectorField, U0: SpectralVectorField) -> list[NormReport]:
    """Weak-3 and ``L^2`` norms of ``U - U0 - B(U, U)``."""
    R = U - U0 - bilinear_B(U, U)
    g = U.grid
    weak = lorentz_norm(R, 3.0)
    l2 = NormReport(R.l2_norm(), "lebesgue(2)", 2.0, None, g.n, g.L, {"quantity": "steady residual"})
    return [weak, l2]


def recover_pressure(U: SpectralVectorField, f: SpectralVectorField) -> SpectralScalarField:
    """Pressure from ``Delta P = div f - div div (U (x) U)``.

    ``P_hat = -(sum_jl k_j k_l W_jl + i k . f_hat) / |k|^2`` with ``W`` the
    dealiased product ``U (x) U``; the zero mode is 0.
    """
    g = U.grid
    k = g.wavevectors
    W = product_spectrum(U, U)
    kkW = np.einsum("jxyz,lxyz,jlxyz->xyz", k, k, W)
    kf = np.einsum("jxyz,jxyz->xyz", k, f.coeffs)
    return SpectralScalarField(g, -(kkW + 1j * kf) * g.inv_k2)


def momentum_residual(U: SpectralVectorField, f: SpectralVectorField, P: SpectralScalarField | None = None) -> float:
    """Relative spectral norm of ``div(U (x) U) + grad P - Delta U - f``.

    The reference scale is the largest of the spectral norms of the four
    terms, so the value is dimensionless.
    """
    g = U.grid
    k = g.wavevectors
    if P is None:
        P = recover_pressure(U, f)
    W = product_spectrum(U, U)
    adv = 1j * np.einsum("hxyz,hlxyz->lxyz", k, W)
    grad = 1j * k * P.coeffs
    lap = -g.k2 * U.coeffs
    res = adv + grad - lap - f.coeffs
    scale = max(np.linalg.norm(t) for t in (adv, grad, lap, f.coeffs))
    return float(np.linalg.norm(res) / scale) if scale > 0 else 0.0


def lp_norm_sweep(
    U: SpectralVectorField, p_list: Sequence[float], U0: SpectralVectorField | None = None
) -> list[NormReport]:
    """``L^p`` and ``L^{p,inf}`` norms of ``U`` (and of ``U0`` when given).

    Only ``p > 3/2`` is accepted: below that no nontrivial steady solution
    can have a finite ``L^p`` norm.
    """
    out = []
    for p in p_list:
        if not p > 1.5:
            raise PreconditionError(
                f"p = {p} is not admissible: nontrivial steady solutions are never in L^p for 1 <= p <= 3/2"
            )
    for name, F in (("U", U), ("U0", U0)):
        if F is None:
            continue
        for p in p_list:
            for rep in (lebesgue_norm(F, p), lorentz_norm(F, p)):
                rep.notes["field"] = name
                out.append(rep)
    return out


@dataclass
class ContinuationResult:
    amplitudes: list[float]
    converged: list[bool]
    traces: list[PicardTrace]
    solutions: list[SpectralVectorField | None]
    first_failure: float | None

    def converged_runs(self):
        return [(a, t, s) for a, c, t, s in zip(self.amplitudes, self.converged, self.traces, self.solutions) if c]


def amplitude_continuation(
    spec: ForceSpec,
    grid: Grid,
    amplitudes: Sequence[float] | None = None,
    cfg: PicardConfig = PicardConfig(),
    start: float | None = None,
    factor: float = 2.0,
    max_steps: int = 12,
) -> ContinuationResult:
    """Solve along a sequence of force amplitudes until the iteration fails.

    With ``amplitudes=None`` the sequence is ``start * factor^j`` (default
    ``start`` is ``spec.amplitude``), stopped at the first failure.
    """
    if amplitudes is None:
        a0 = spec.amplitude if start is None else start
        amplitudes = [a0 * factor**j for j in range(max_steps)]
    base = force_spectrum(spec.scaled(1.0 / spec.amplitude), grid)
    U0_unit = compute_U0(base)
    res = ContinuationResult([], [], [], [], None)
    for a in amplitudes:
        U0 = U0_unit * a
        try:
            U, tr = picard_solve(U0, cfg)
            ok = True
        except NonConvergenceError as exc:
            U, tr, ok = None, exc.trace, False
        res.amplitudes.append(float(a))
        res.converged.append(ok)
        res.traces.append(tr)
        res.solutions.append(U)
        if not ok:
            res.first_failure = float(a)
            break
    return res
