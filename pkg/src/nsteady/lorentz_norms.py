"""Discrete estimators of rearrangement-invariant and weighted norms.

A grid field is treated as a step function, constant on cells of volume
``V = h^3``.  Its decreasing rearrangement is then the step function
``f*(t) = f*_n`` for ``(n-1) V < t <= n V`` where ``f*_1 >= f*_2 >= ...`` are
the sorted sample magnitudes, and every Lorentz quantity has a closed form:

``||f||_{p,inf} = max_n (n V)^{1/p} f*_n``

``||f||_{p,q} = ( sum_n f*_n^q [(n V)^{q/p} - ((n-1) V)^{q/p}] )^{1/q}``

The second line is ``((q/p) int (t^{1/p} f*(t))^q dt/t)^{1/q}`` integrated
exactly over each step, so ``||f||_{p,p}`` is the discrete ``L^p`` norm.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import scipy.fft as sfft

from .spectral_core import Grid, PhysicalVectorField, SpectralVectorField

__all__ = [
    "NormReport",
    "Rearrangement",
    "ResolutionError",
    "decreasing_rearrangement",
    "lebesgue_norm",
    "lorentz_norm",
    "morrey_norm_lower_bound",
    "tail_weak_constant",
    "threshold_split",
    "weak_norm",
    "weighted_sup_norm",
]


class ResolutionError(ValueError):
    """The requested quantity is not resolvable on the discrete field."""


@dataclass(frozen=True)
class NormReport:
    value: float
    space: str
    p: float | None
    q_or_theta: float | None
    grid_n: int
    grid_L: float
    notes: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not (np.isfinite(self.value) and self.value >= 0):
            raise ValueError(f"norm value must be finite and nonnegative, got {self.value!r}")

    @property
    def grid_id(self) -> str:
        return f"n{self.grid_n}_L{self.grid_L:g}"

    def __float__(self) -> float:
        return float(self.value)

    def to_dict(self) -> dict[str, Any]:
        q = self.q_or_theta
        if q is not None and not np.isfinite(q):
            q = "inf"
        return {
            "space": self.space,
            "p": self.p,
            "q_or_theta": q,
            "value": float(self.value),
            "grid_n": self.grid_n,
            "grid_L": self.grid_L,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def write_jsonl(reports: Sequence[NormReport], path) -> None:
    with open(path, "w") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _mags(f, grid: Grid | None = None) -> tuple[np.ndarray, Grid]:
    """Pointwise magnitudes (Euclidean across components) and the grid."""
    if isinstance(f, SpectralVectorField):
        f = f.to_physical()
    if isinstance(f, PhysicalVectorField):
        return f.magnitude(), f.grid
    if grid is None:
        raise TypeError("a grid is required for raw sample arrays")
    a = np.asarray(f)
    if a.shape == grid.shape:
        return np.abs(a), grid
    if a.shape == (3,) + grid.shape:
        return np.sqrt(np.sum(np.abs(a) ** 2, axis=0)), grid
    raise ValueError(f"array of shape {a.shape} does not live on {grid.grid_id}")


@dataclass(frozen=True)
class Rearrangement:
    """Nonincreasing sample magnitudes with step width ``measure_step``."""

    values: np.ndarray
    measure_step: float

    def __call__(self, t):
        """Evaluate ``f*(t)``; zero beyond the total measure."""
        t = np.asarray(t, dtype=float)
        idx = np.ceil(t / self.measure_step).astype(np.int64) - 1
        idx = np.clip(idx, 0, None)
        out = np.where(idx < self.values.size, self.values[np.minimum(idx, self.values.size - 1)], 0.0)
        return out

    @property
    def ranks_measure(self) -> np.ndarray:
        """Right endpoints ``n V`` of the steps."""
        return self.measure_step * np.arange(1, self.values.size + 1)


def decreasing_rearrangement(f, grid: Grid | None = None) -> Rearrangement:
    m, g = _mags(f, grid)
    vals = np.sort(m, axis=None, kind="stable")[::-1].copy()
    vals.setflags(write=False)
    return Rearrangement(vals, g.cell_volume)


def _check_p(p):
    if not (1 < p < np.inf):
        raise ValueError(f"Lorentz exponent p must lie in (1, inf), got {p!r}")


def _weak_from_sorted(vals: np.ndarray, V: float, p: float, lo: int = 0, hi: int | None = None) -> float:
    n = np.arange(1, vals.size + 1, dtype=float)
    prod = (n * V) ** (1.0 / p) * vals
    prod = prod[lo:hi]
    return float(prod.max()) if prod.size else 0.0


def lorentz_norm(f, p: float, q: float = np.inf, grid: Grid | None = None, min_rank: int = 1) -> NormReport:
    """Discrete ``L^{p,q}`` norm of ``f``.

    ``min_rank > 1`` (weak norm only) skips the ``min_rank - 1`` largest
    samples in the supremum; this is the resolution floor used when the
    field is singular at a grid point and the lattice overcounts the first
    level sets.
    """
    _check_p(p)
    if not (1 <= q <= np.inf):
        raise ValueError(f"Lorentz exponent q must lie in [1, inf], got {q!r}")
    rear = decreasing_rearrangement(f, grid)
    g_n, g_L = _grid_of(f, grid)
    V = rear.measure_step
    vals = rear.values
    if np.isinf(q):
        value = _weak_from_sorted(vals, V, p, lo=min_rank - 1)
        space = f"weak({p:g})"
    else:
        if min_rank != 1:
            raise ValueError("min_rank only applies to the weak norm")
        n = np.arange(vals.size + 1, dtype=float) * V
        w = np.diff(n ** (q / p))
        value = float(np.sum(vals**q * w) ** (1.0 / q))
        space = f"lorentz({p:g},{q:g})"
    notes = {"cells": int(vals.size), "cell_volume": V}
    if min_rank != 1:
        notes["min_rank"] = int(min_rank)
    return NormReport(value, space, float(p), float(q), g_n, g_L, notes)


def _grid_of(f, grid):
    g = getattr(f, "grid", None) or grid
    return g.n, g.L


def weak_norm(f, p: float = 3.0, grid: Grid | None = None, min_rank: int = 1) -> float:
    """Value of the weak ``L^p`` norm (``L^{p, inf}``)."""
    return lorentz_norm(f, p, np.inf, grid, min_rank).value


def lebesgue_norm(f, p: float, grid: Grid | None = None) -> NormReport:
    """Direct Riemann sum ``(sum |f_j|^p h^3)^{1/p}``; ``p = inf`` is the max."""
    m, g = _mags(f, grid)
    if np.isinf(p):
        value = float(m.max())
    elif p >= 1:
        value = float(np.sum(m**p) * g.cell_volume) ** (1.0 / p)
    else:
        raise ValueError(f"p must be >= 1, got {p!r}")
    return NormReport(value, f"lebesgue({p:g})", float(p), None, g.n, g.L)


def weighted_sup_norm(f, theta: float, grid: Grid | None = None) -> NormReport:
    """``max_j |x_j|^theta |f(x_j)|`` over grid nodes (the ``E_theta`` norm)."""
    if theta < 0:
        raise ValueError(f"theta must be nonnegative, got {theta!r}")
    m, g = _mags(f, grid)
    w = g.radius**theta if theta > 0 else np.ones(g.shape)
    value = float(np.max(w * m))
    return NormReport(value, f"weighted_sup({theta:g})", None, float(theta), g.n, g.L)


def _ball_kernel(g: Grid, R: float) -> np.ndarray:
    """Indicator of ``|x| < R`` with periodic distances, origin at index 0."""
    x = np.fft.ifftshift(g.coords)
    x = np.where(x >= 0.5 * g.L, x - g.L, x)
    r2 = x[:, None, None] ** 2 + x[None, :, None] ** 2 + x[None, None, :] ** 2
    return (r2 < R * R).astype(float)


def morrey_norm_lower_bound(
    f, p: float, q: float, center_stride: int, radii: Sequence[float], grid: Grid | None = None
) -> NormReport:
    """Lower bound of the Morrey-Campanato ``M_{p,q}`` norm.

    The supremum is restricted to centres on the sub-lattice of the given
    stride and to the listed radii, so the result never exceeds the true
    discrete supremum.
    """
    if not (1 <= q <= p):
        raise ValueError(f"Morrey norm needs 1 <= q <= p, got p={p!r}, q={q!r}")
    m, g = _mags(f, grid)
    if int(center_stride) < 1:
        raise ValueError("center_stride must be a positive integer")
    V = g.cell_volume
    fq = np.fft.ifftshift(m**q)
    fq_hat = sfft.rfftn(fq)
    best = 0.0
    best_R = None
    for R in radii:
        if R <= 0:
            raise ValueError("radii must be positive")
        ker = _ball_kernel(g, R)
        conv = sfft.irfftn(fq_hat * np.conj(sfft.rfftn(ker)), s=g.shape)
        conv = np.clip(conv, 0.0, None)
        sub = np.fft.fftshift(conv)[::center_stride, ::center_stride, ::center_stride]
        val = R ** (3.0 / p - 3.0 / q) * float(sub.max() * V) ** (1.0 / q)
        if val > best:
            best, best_R = val, float(R)
    notes = {"center_stride": int(center_stride), "radii": [float(r) for r in radii], "argmax_radius": best_R}
    return NormReport(best, f"morrey({p:g},{q:g})", float(p), float(q), g.n, g.L, notes)


def tail_weak_constant(
    f, p: float = 3.0, r_min: float | None = None, r_max: float | None = None, grid: Grid | None = None
) -> float:
    """Discrete proxy of ``limsup_{R -> 0} R mes{|f| > R}^{1/p}``.

    Small levels ``R`` correspond to large level sets.  On the box only the
    levels attained by ``f`` on the far shell ``r_min <= |x| <= r_max``
    (defaults ``L/8`` and ``L/2``) are resolved; the supremum of
    ``R mes{|f| >= R}^{1/p}`` is taken over those levels.
    """
    _check_p(p)
    m, g = _mags(f, grid)
    r_min = g.L / 8 if r_min is None else r_min
    r_max = g.L / 2 if r_max is None else r_max
    r = g.radius
    hi = float(m[r >= r_min].max())
    lo = float(m[r >= r_max].max()) if np.any(r >= r_max) else 0.0
    vals = np.sort(m, axis=None)[::-1]
    n = np.arange(1, vals.size + 1, dtype=float)
    prod = (n * g.cell_volume) ** (1.0 / p) * vals
    # ranks at the end of each tie group carry the measure of {|f| >= v}
    ends = np.r_[vals[1:] != vals[:-1], True]
    sel = ends & (vals >= lo) & (vals <= hi)
    if not np.any(sel):
        raise ResolutionError("no sample levels in the far-shell window")
    return float(prod[sel].max())


def threshold_split(f, epsilon: float, floor_radius: float | None = None, p: float = 3.0, grid: Grid | None = None):
    """Split ``f = f1 + f2`` with ``f1 = f 1{|f| > R}`` and ``f2 = f 1{|f| <= R}``.

    ``R`` is the largest sample level for which the discrete weak-``L^p``
    norm of ``f2`` is below ``epsilon``.  Levels under the resolution floor
    ``max_{|x| >= floor_radius} |f|`` (default radius ``L/4``) describe the
    box truncation rather than the field, so a split that needs them raises
    :class:`ResolutionError`.

    Returns ``(f1, f2, R)`` as fields of the input type.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    m, g = _mags(f, grid)
    floor_radius = g.L / 4 if floor_radius is None else floor_radius
    far = g.radius >= floor_radius
    r_floor = float(m[far].max()) if np.any(far) else 0.0
    vals = np.sort(m, axis=None)[::-1]
    V = g.cell_volume
    starts = np.flatnonzero(np.r_[True, vals[1:] != vals[:-1]])

    def tail_norm(j):
        return _weak_from_sorted(vals[j:], V, p)

    # norm of the tail is nonincreasing in the start index
    lo, hi = 0, starts.size - 1
    if tail_norm(starts[hi]) >= epsilon:
        raise ResolutionError("no threshold reaches the target epsilon")
    while lo < hi:
        mid = (lo + hi) // 2
        if tail_norm(starts[mid]) < epsilon:
            hi = mid
        else:
            lo = mid + 1
    R = float(vals[starts[lo]])
    if R < r_floor:
        raise ResolutionError(
            f"threshold {R:.4g} lies below the resolution floor {r_floor:.4g}; "
            "epsilon is under the grid-resolvable tail constant"
        )
    keep = m <= R
    if isinstance(f, SpectralVectorField):
        f = f.to_physical()
    if isinstance(f, PhysicalVectorField):
        s = f.samples
        f2 = PhysicalVectorField(g, np.where(keep, s, 0))
        f1 = PhysicalVectorField(g, np.where(keep, 0, s))
        return f1, f2, R
    a = np.asarray(f)
    return np.where(keep, 0, a), np.where(keep, a, 0), R
