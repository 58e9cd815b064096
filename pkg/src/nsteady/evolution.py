"""Time integration of the forced Navier-Stokes equations on the periodic box.

``u_t = Delta u + P f - P div(u (x) u)`` is advanced with the heat factor
treated exactly.  The forcing is time independent, so its contribution over a
step is the closed form :func:`duhamel_forcing`; only the nonlinear term is
approximated.  Exponential time-differencing schemes (``etdrk2``,
``etdrk4``) reproduce steady states exactly; the integrating-factor schemes
(``ifrk2``, ``ifrk4``) are kept for comparison.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .asymptotics import AnalysisGuardError, DecayFit
from .lorentz_norms import lebesgue_norm, weak_norm
from .spectral_core import (
    Grid,
    SpectralVectorField,
    divergence,
    heat_multiply,
    leray_project,
    nonlinear_flux,
)

__all__ = [
    "BlowUpError",
    "CFLViolation",
    "EvolutionConfig",
    "EvolutionError",
    "SCHEMES",
    "Trajectory",
    "difference_profile_check",
    "duhamel_forcing",
    "energy_series",
    "evolve",
    "evolve_phases",
    "heat_flow_norms",
    "large_data_experiment",
    "stability_rates",
]

SCHEMES = ("etdrk2", "etdrk4", "ifrk2", "ifrk4")
# advective stability limit of dt * max|u| * k_dealias for each scheme
_CFL_LIMIT = {"etdrk2": 1.0, "etdrk4": 2.8, "ifrk2": 1.0, "ifrk4": 2.8}
DIV_TOL = 1e-10


class EvolutionError(RuntimeError):
    """Aborted run; ``trajectory`` holds everything recorded before the abort."""

    def __init__(self, message: str, trajectory: "Trajectory"):
        super().__init__(message)
        self.trajectory = trajectory


class CFLViolation(EvolutionError):
    pass


class BlowUpError(EvolutionError):
    pass


def duhamel_forcing(f: SpectralVectorField, t: float) -> SpectralVectorField:
    """``int_0^t exp((t - s) Delta) P f ds``.

    Mode ``k != 0`` is multiplied by ``(1 - exp(-|k|^2 t)) / |k|^2``; the zero
    mode is 0.
    """
    if not t >= 0:
        raise ValueError(f"t must be nonnegative, got {t!r}")
    g = f.grid
    k2 = g.k2
    Pf = leray_project(f)
    return Pf._new(Pf.coeffs * (-np.expm1(-k2 * t) * g.inv_k2))


def _phi(z: np.ndarray, order: int) -> np.ndarray:
    """``phi_order(z)`` for real ``z <= 0``, with a Taylor branch near 0."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < 0.5
    zs = z[small]
    acc = np.zeros_like(zs)
    term = np.full_like(zs, 1.0 / math.factorial(order))
    for j in range(30):
        acc += term
        term = term * zs / (order + j + 1)
    out[small] = acc
    zb = z[~small]
    # phi_0 = e^z, phi_{k+1} = (phi_k - 1/k!) / z
    p = np.exp(zb)
    for k in range(order):
        p = (p - 1.0 / math.factorial(k)) / zb
    out[~small] = p
    return out


@dataclass(frozen=True)
class EvolutionConfig:
    """Time-stepping parameters.

    ``dt * max|u| * k_dealias`` must stay below ``cfl_safety`` times the
    scheme limit (1.0 for the RK2 schemes, 2.8 for RK4); the diffusive part
    is integrated exactly and imposes no bound.  Steps are shortened so that
    every ``snapshot_times`` entry is hit exactly.
    """

    dt: float
    t_final: float
    scheme: str = "etdrk2"
    snapshot_times: tuple[float, ...] = ()
    cfl_safety: float = 0.9
    nonlinear: bool = True
    q_norms: tuple[float, ...] = ()
    keep_fields: bool = False
    blowup_factor: float = 1e3
    weak_norms: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_final >= 0:
            raise ValueError("t_final must be nonnegative")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")
        ts = tuple(float(t) for t in self.snapshot_times)
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("snapshot_times must be strictly increasing")
        if ts and (ts[0] < 0 or ts[-1] > self.t_final * (1 + 1e-12)):
            raise ValueError("snapshot_times must lie in [0, t_final]")
        object.__setattr__(self, "snapshot_times", ts)
        object.__setattr__(self, "q_norms", tuple(float(q) for q in self.q_norms))

    @property
    def cfl_limit(self) -> float:
        return self.cfl_safety * _CFL_LIMIT[self.scheme]


@dataclass
class Trajectory:
    """Snapshot times, norm series and (optionally) the snapshot fields."""

    times: list[float] = field(default_factory=list)
    series: dict[str, list[float]] = field(default_factory=dict)
    fields: list[SpectralVectorField] = field(default_factory=list)
    final: SpectralVectorField | None = None
    steps: int = 0
    max_cfl: float = 0.0

    @property
    def snapshots(self) -> list[tuple[float, SpectralVectorField]]:
        return list(zip(self.times, self.fields))

    def record(self, t: float, values: dict[str, float], u: SpectralVectorField | None):
        if self.times and t <= self.times[-1]:
            raise ValueError("snapshot times must increase")
        self.times.append(float(t))
        for k, v in values.items():
            self.series.setdefault(k, []).append(float(v))
        if u is not None:
            self.fields.append(u)

    def column(self, name: str) -> np.ndarray:
        return np.asarray(self.series[name])

    def to_csv(self, path) -> None:
        cols = list(self.series)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + cols)
            for i, t in enumerate(self.times):
                w.writerow([repr(t)] + [repr(self.series[c][i]) for c in cols])


class _Stepper:
    def __init__(self, grid: Grid, F: SpectralVectorField | None, cfg: EvolutionConfig):
        self.g = grid
        self.F = F
        self.cfg = cfg
        self._cache: dict[float, dict] = {}

    def N(self, u: SpectralVectorField) -> np.ndarray:
        if not self.cfg.nonlinear:
            return np.zeros_like(u.coeffs)
        return nonlinear_flux(u, u).coeffs

    def coeffs(self, dt: float) -> dict:
        c = self._cache.get(dt)
        if c is not None:
            return c
        z = -self.g.k2 * dt
        c = {"E": np.exp(z), "E2": np.exp(z / 2)}
        sch = self.cfg.scheme
        if sch == "etdrk2":
            c["p1"] = dt * _phi(z, 1)
            c["p2"] = dt * _phi(z, 2)
        elif sch == "etdrk4":
            p1, p2, p3 = _phi(z, 1), _phi(z, 2), _phi(z, 3)
            c["h1"] = 0.5 * dt * _phi(z / 2, 1)
            c["f1"] = dt * (p1 - 3 * p2 + 4 * p3)
            c["f2"] = dt * (p2 - 2 * p3)
            c["f3"] = dt * (-p2 + 4 * p3)
        if self.F is not None:
            c["D"] = duhamel_forcing(self.F, dt).coeffs
            c["D2"] = duhamel_forcing(self.F, dt / 2).coeffs
        else:
            c["D"] = c["D2"] = 0.0
        if len(self._cache) > 8:
            self._cache.clear()
        self._cache[dt] = c
        return c

    def step(self, u: SpectralVectorField, dt: float) -> SpectralVectorField:
        c = self.coeffs(dt)
        mk = lambda a: u._new(a)  # noqa: E731
        x = u.coeffs
        E, E2, D, D2 = c["E"], c["E2"], c["D"], c["D2"]
        sch = self.cfg.scheme
        if sch == "etdrk2":
            Nu = self.N(u)
            a = E * x + D - c["p1"] * Nu
            Na = self.N(mk(a))
            out = a - c["p2"] * (Na - Nu)
        elif sch == "etdrk4":
            h1 = c["h1"]
            Nu = self.N(u)
            a = E2 * x + D2 - h1 * Nu
            Na = self.N(mk(a))
            b = E2 * x + D2 - h1 * Na
            Nb = self.N(mk(b))
            cc = E2 * a + D2 - h1 * (2 * Nb - Nu)
            Nc = self.N(mk(cc))
            out = E * x + D - (c["f1"] * Nu + 2 * c["f2"] * (Na + Nb) + c["f3"] * Nc)
        elif sch == "ifrk2":
            Nu = self.N(u)
            a = E * (x - dt * Nu) + D
            Na = self.N(mk(a))
            out = E * x + D - 0.5 * dt * (E * Nu + Na)
        else:  # ifrk4
            Nu = self.N(u)
            a = E2 * (x - 0.5 * dt * Nu) + D2
            Na = self.N(mk(a))
            b = E2 * x + D2 - 0.5 * dt * Na
            Nb = self.N(mk(b))
            cc = E * x + D - dt * E2 * Nb
            Nc = self.N(mk(cc))
            out = E * x + D - dt / 6 * (E * Nu + 2 * E2 * (Na + Nb) + Nc)
        return mk(out)


def _check_initial(u0: SpectralVectorField):
    if not u0.real_valued:
        raise ValueError("u0 must be real valued")
    scale = max(float(np.abs(u0.coeffs).max()), np.finfo(float).tiny)
    if np.abs(u0.coeffs[:, 0, 0, 0]).max() > 1e-12 * scale:
        raise ValueError("u0 must have zero mean")
    if _div_defect(u0) > DIV_TOL:
        raise ValueError("u0 must be divergence free")


def _div_defect(u: SpectralVectorField) -> float:
    """``max |k . u_hat| / (k_max max |u_hat|)``."""
    cmax = float(np.abs(u.coeffs).max())
    if cmax == 0:
        return 0.0
    kmax = math.sqrt(float(u.grid.k2.max()))
    return float(np.abs(divergence(u).coeffs).max() / (kmax * cmax))


def _diagnostics(u, cfg, reference, extra_q):
    vals = {"l2": u.l2_norm()}
    if cfg.weak_norms:
        vals["weak3"] = weak_norm(u, 3.0)
    for q in extra_q:
        vals[f"L{q:g}"] = lebesgue_norm(u, q).value
    if reference is not None:
        w = u - reference
        vals["diff_l2"] = w.l2_norm()
        if cfg.weak_norms:
            vals["diff_weak3"] = weak_norm(w, 3.0)
        for q in extra_q:
            vals[f"diff_L{q:g}"] = lebesgue_norm(w, q).value
    return vals


def _dissipation(u: SpectralVectorField, dt: float) -> float:
    """Heat-flow energy loss over ``dt``, ``L^3 sum |u_hat|^2 (1 - exp(-2 |k|^2 dt))``."""
    g = u.grid
    w = -np.expm1(-2 * g.k2 * dt)
    return float(g.L**3 * np.sum(np.abs(u.coeffs) ** 2 * w))


def evolve(
    u0: SpectralVectorField,
    f: SpectralVectorField | None,
    cfg: EvolutionConfig,
    reference: SpectralVectorField | None = None,
    t0: float = 0.0,
    callback: Callable[[float, SpectralVectorField], None] | None = None,
) -> Trajectory:
    """Integrate from ``u0`` at time ``t0`` to ``t0 + cfg.t_final``.

    Snapshot times are relative to ``t0``.  At every snapshot the series
    ``l2``, ``weak3``, ``L<q>`` (for ``cfg.q_norms``), the same norms of
    ``u - reference`` when a reference is given, and the energy balance
    ``energy + 2 int ||grad u||^2`` are recorded.

    Raises
    ------
    CFLViolation
        When ``dt * max|u| * k_dealias`` exceeds the scheme's limit.
    BlowUpError
        When ``max|u|`` grows beyond ``blowup_factor`` times its initial
        value or becomes non-finite.
    """
    _check_initial(u0)
    g = u0.grid
    F = None
    if f is not None:
        scale = max(float(np.abs(f.coeffs).max()), np.finfo(float).tiny)
        if np.abs(f.coeffs[:, 0, 0, 0]).max() > 1e-12 * scale:
            raise ValueError("the force must have zero mean")
        if float(np.abs(f.coeffs).max()) > 0:
            F = f
    stepper = _Stepper(g, F, cfg)
    traj = Trajectory()
    u = u0
    e0 = u0.l2_norm() ** 2
    diss = 0.0
    umax0 = max(float(np.abs(u0.physical).max()), np.finfo(float).tiny)

    def snap(t_rel):
        vals = _diagnostics(u, cfg, reference, cfg.q_norms)
        vals["energy"] = u.l2_norm() ** 2
        vals["energy_balance"] = vals["energy"] + diss
        vals["energy0"] = e0
        vals["div_defect"] = _div_defect(u)
        if vals["div_defect"] > DIV_TOL:
            raise EvolutionError(f"divergence defect {vals['div_defect']:.2e} at t = {t0 + t_rel:.6g}", traj)
        traj.record(t0 + t_rel, vals, u if cfg.keep_fields else None)
        if callback is not None:
            callback(t0 + t_rel, u)

    targets = list(cfg.snapshot_times)
    if not targets or targets[-1] < cfg.t_final * (1 - 1e-12):
        targets.append(cfg.t_final)
    t = 0.0
    ti = 0
    if targets and targets[0] <= 1e-15:
        snap(0.0)
        ti = 1
    kd = g.k_dealias
    eps = 1e-9 * cfg.dt
    while ti < len(targets):
        target = targets[ti]
        while t < target - eps:
            dt = min(cfg.dt, target - t)
            if target - (t + dt) < eps:
                dt = target - t
            umax = float(np.abs(u.physical).max())
            cfl = dt * umax * kd
            traj.max_cfl = max(traj.max_cfl, cfl)
            if cfg.nonlinear and cfl > cfg.cfl_limit:
                traj.final = u
                raise CFLViolation(
                    f"CFL number {cfl:.3f} exceeds {cfg.cfl_limit:.3f} at t = {t0 + t:.6g}", traj
                )
            dss = _dissipation(u, dt)
            u = stepper.step(u, dt)
            diss += dss
            t += dt
            traj.steps += 1
            um = float(np.abs(u.physical).max())
            if not np.isfinite(um) or um > cfg.blowup_factor * umax0:
                traj.final = u
                raise BlowUpError(f"max|u| = {um:.3e} at t = {t0 + t:.6g}", traj)
        t = target
        snap(t)
        ti += 1
    traj.final = u
    return traj


def evolve_phases(
    u0: SpectralVectorField,
    f: SpectralVectorField | None,
    phases: Sequence[EvolutionConfig],
    reference: SpectralVectorField | None = None,
) -> Trajectory:
    """Run several configurations back to back (e.g. growing ``dt``).

    Phase ``j`` starts from the final state of phase ``j - 1``; snapshot
    times are relative to the phase start.  The merged trajectory keeps the
    first snapshot of a phase only when it does not repeat the previous
    phase's last time.
    """
    if isinstance(phases, EvolutionConfig):
        phases = [phases]
    out = Trajectory()
    u, t0 = u0, 0.0
    diss0 = 0.0
    for cfg in phases:
        try:
            tj = evolve(u, f, cfg, reference=reference, t0=t0)
        except EvolutionError as exc:
            _merge(out, exc.trajectory, diss0)
            exc.trajectory = out
            raise
        tj_last_balance = _merge(out, tj, diss0)
        diss0 = tj_last_balance
        u, t0 = tj.final, t0 + cfg.t_final
    out.final = u
    return out


def _merge(out: Trajectory, tj: Trajectory, diss0: float) -> float:
    """Append ``tj`` to ``out``; energy bookkeeping continues across phases."""
    e0 = out.series["energy0"][0] if out.times else None
    last = diss0
    for i, t in enumerate(tj.times):
        if out.times and t <= out.times[-1]:
            continue
        vals = {k: v[i] for k, v in tj.series.items()}
        phase_diss = vals["energy_balance"] - vals["energy"]
        vals["energy_balance"] = vals["energy"] + diss0 + phase_diss
        if e0 is not None:
            vals["energy0"] = e0
        last = diss0 + phase_diss
        out.record(t, vals, tj.fields[i] if i < len(tj.fields) else None)
    out.steps += tj.steps
    out.max_cfl = max(out.max_cfl, tj.max_cfl)
    out.final = tj.final
    return last


def energy_series(traj: Trajectory) -> dict:
    """Energy-inequality slack and monotonicity of a trajectory."""
    e = traj.column("energy")
    bal = traj.column("energy_balance")
    e0 = traj.column("energy0")[0]
    slack = float(np.max(bal / e0 - 1.0)) if e0 > 0 else 0.0
    inc = np.diff(np.sqrt(e))
    return {
        "max_relative_excess": slack,
        "l2_monotone": bool(np.all(inc <= 1e-12 * max(math.sqrt(e0), 1e-300))),
        "max_l2_increase": float(inc.max()) if inc.size else 0.0,
    }


def _guard(window, L):
    t0, t1 = window
    if not 0 < t0 < t1:
        raise AnalysisGuardError(f"invalid time window {window}")
    if math.sqrt(t1) > L / 8 * (1 + 1e-12):
        raise AnalysisGuardError(f"sqrt(t1) = {math.sqrt(t1):.4g} exceeds the heat-length guard L/8 = {L / 8:.4g}")


def _fit(ts, vals, window, tag, noise) -> DecayFit:
    ts, vals = np.asarray(ts), np.asarray(vals)
    sel = (ts >= window[0] * (1 - 1e-12)) & (ts <= window[1] * (1 + 1e-12))
    if sel.sum() < 4:
        raise AnalysisGuardError(f"only {int(sel.sum())} samples in the window {window}; need 4")
    v = vals[sel]
    if np.max(v) <= noise:
        raise AnalysisGuardError(f"{tag} stays at the noise floor ({np.max(v):.2e}); the fit is degenerate")
    lt, lv = np.log(ts[sel]), np.log(v)
    slope, icpt = np.polyfit(lt, lv, 1)
    resid = float(np.sqrt(np.mean((lv - slope * lt - icpt) ** 2)))
    return DecayFit(float(slope), float(icpt), (float(window[0]), float(window[1])), resid, tag,
                    tuple(float(x) for x in ts[sel]), tuple(float(x) for x in v))


def stability_rates(
    traj: Trajectory,
    U: SpectralVectorField,
    q_list: Sequence[float],
    fit_window: tuple[float, float],
    noise: float = 1e-12,
) -> list[DecayFit]:
    """Fits of ``log ||u(t) - U||_q`` against ``log t`` on ``fit_window``.

    Uses the recorded ``diff_L<q>`` series, or the stored fields when a
    series is missing.  ``noise`` is relative to ``||U||_2`` (or 1 when U
    vanishes); differences below it are rejected as degenerate.
    """
    _guard(fit_window, U.grid.L)
    floor = noise * max(U.l2_norm(), 1.0)
    fits = []
    for q in q_list:
        key = f"diff_L{float(q):g}"
        if key in traj.series:
            vals = traj.series[key]
        elif traj.fields:
            vals = [lebesgue_norm(u - U, q).value for u in traj.fields]
        else:
            raise ValueError(f"trajectory has neither a {key} series nor stored fields")
        fits.append(_fit(traj.times, vals, fit_window, f"L{float(q):g}", floor))
    return fits


@dataclass
class DifferenceReport:
    p: float
    q: float
    expected_exponent: float
    lhs_fit: DecayFit | None
    linear_fit: DecayFit | None
    lhs_series: list[float]
    linear_series: list[float]
    times: list[float]
    faster: bool

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "q": self.q,
            "expected_exponent": self.expected_exponent,
            "lhs_exponent": None if self.lhs_fit is None else self.lhs_fit.exponent,
            "linear_exponent": None if self.linear_fit is None else self.linear_fit.exponent,
            "faster": self.faster,
            "times": self.times,
            "lhs": self.lhs_series,
            "linear": self.linear_series,
        }


def difference_profile_check(
    traj: Trajectory,
    U: SpectralVectorField,
    u0: SpectralVectorField,
    q: float,
    p: float,
    fit_window: tuple[float, float] | None = None,
) -> DifferenceReport:
    """Compare ``u(t) - U`` with its linearisation ``exp(t Delta)(u0 - U)``.

    Requires stored fields.  The series ``||u(t) - U - exp(t Delta) w0||_q``
    is fitted on ``fit_window`` next to ``||exp(t Delta) w0||_q``; the
    expected exponent is ``1/2 + 3/(2q) - 3/p``.
    """
    if not 1.5 < p < 3:
        raise AnalysisGuardError(f"p = {p} must lie in (3/2, 3)")
    lo = 3 * p / (6 - p)
    if not lo - 1e-12 <= q <= p + 1e-12:
        raise AnalysisGuardError(f"q = {q} outside the admissible range [{lo:.4g}, {p:.4g}]")
    if not traj.fields:
        raise ValueError("difference_profile_check needs a trajectory with stored fields")
    w0 = u0 - U
    lhs, lin = [], []
    for t, u in zip(traj.times, traj.fields):
        hw = heat_multiply(w0, t)
        lhs.append(lebesgue_norm(u - U - hw, q).value)
        lin.append(lebesgue_norm(hw, q).value)
    floor = 1e-12 * max(U.l2_norm(), 1.0)
    lf = nf = None
    faster = False
    if fit_window is not None:
        _guard(fit_window, U.grid.L)
        nf = _fit(traj.times, lin, fit_window, f"L{q:g}", floor)
        if max(lhs) > floor:
            lf = _fit(traj.times, lhs, fit_window, f"L{q:g}", floor)
            faster = lf.exponent < nf.exponent
        else:
            faster = True
    return DifferenceReport(p, q, 0.5 + 1.5 / q - 3 / p, lf, nf, lhs, lin, list(traj.times), faster)


def heat_flow_norms(g0: SpectralVectorField, times: Sequence[float], p: float = 3.0) -> list[float]:
    """Weak-``p`` norms of ``exp(t Delta) g0`` (complex data allowed)."""
    return [weak_norm(heat_multiply(g0, t), p) for t in times]


@dataclass
class LargeDataReport:
    times: list[float]
    weak3: list[float]
    band: float
    a_proxy: float
    transition_time: float | None
    stays_in_band: bool
    initial_weak3: float
    rate_fit: DecayFit | None
    energy: dict
    extra: dict = field(default_factory=dict)
    trajectory: Trajectory | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "times": self.times,
            "weak3": self.weak3,
            "band": self.band,
            "a_proxy": self.a_proxy,
            "transition_time": self.transition_time,
            "stays_in_band": self.stays_in_band,
            "initial_weak3": self.initial_weak3,
            "rate_exponent": None if self.rate_fit is None else self.rate_fit.exponent,
            "energy": self.energy,
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def large_data_experiment(
    u0_large: SpectralVectorField,
    f: SpectralVectorField | None,
    cfg: EvolutionConfig | Sequence[EvolutionConfig],
    a_proxy: float,
    U: SpectralVectorField | None = None,
    band_constant: float = 22.0,
    rate_q: float = 4.0,
    rate_window: tuple[float, float] | None = None,
) -> LargeDataReport:
    """Track ``||u(t)||_{3,inf}`` from large data until it enters the small band.

    The band is ``band_constant * a_proxy`` where ``a_proxy`` is the weak-3
    norm of the small part of the data plus that of ``-Delta^{-1} P f``.  The
    transition time is the first snapshot after which every later snapshot
    is inside the band.  With ``U`` and ``rate_window`` the ``L^{rate_q}``
    decay of ``u(t) - U`` after the transition is fitted.  ``cfg`` may be a
    list of phases run back to back.
    """
    phases = [cfg] if isinstance(cfg, EvolutionConfig) else list(cfg)
    extra_q = {float(rate_q)} if U is not None else set()
    run = [
        EvolutionConfig(**{**c.__dict__, "q_norms": tuple(sorted(set(c.q_norms) | extra_q)), "weak_norms": True})
        for c in phases
    ]
    traj = evolve_phases(u0_large, f, run, reference=U)
    w3 = traj.series["weak3"]
    band = band_constant * a_proxy
    inside = [v <= band for v in w3]
    trans = None
    for i in range(len(inside)):
        if all(inside[i:]):
            trans = traj.times[i]
            break
    fit = None
    if U is not None and rate_window is not None and trans is not None:
        if rate_window[0] < trans:
            raise AnalysisGuardError(f"rate window starts at {rate_window[0]} before the transition at {trans}")
        fit = stability_rates(traj, U, [rate_q], rate_window)[0]
    return LargeDataReport(
        list(traj.times), list(w3), band, a_proxy, trans, trans is not None, w3[0], fit,
        energy_series(traj) if f is None else {},
        trajectory=traj,
    )
