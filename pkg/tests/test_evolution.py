import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_solenoidal, single_mode
from nsteady.asymptotics import AnalysisGuardError
from nsteady.evolution import (
    SCHEMES,
    BlowUpError,
    CFLViolation,
    EvolutionConfig,
    Trajectory,
    difference_profile_check,
    duhamel_forcing,
    energy_series,
    evolve,
    evolve_phases,
    heat_flow_norms,
    large_data_experiment,
    stability_rates,
)
from nsteady.evolution import _phi
from nsteady.forcing import ForceSpec, compute_U0, force_spectrum
from nsteady.lorentz_norms import weak_norm
from nsteady.perturbations import gaussian_bump, l32_bump
from nsteady.spectral_core import Grid, SpectralVectorField, heat_multiply, leray_project
from nsteady.steady_solver import picard_solve

G = Grid(32, 20.0)


@pytest.fixture(scope="module")
def steady():
    F = force_spectrum(ForceSpec("fourier_annulus", 2.0, k_inner=0.4, k_outer=2.0, seed=4), G)
    U, _ = picard_solve(compute_U0(F))
    return F, U


class TestDuhamel:
    def test_zero_time(self, rng):
        f = random_solenoidal(G, rng)
        assert np.abs(duhamel_forcing(f, 0.0).coeffs).max() == 0.0

    def test_single_mode(self):
        g = Grid(8, 2 * np.pi)
        f = single_mode(g, (1, 0, 0), (0.0, 1.0, 0.0))
        assert np.allclose(duhamel_forcing(f, 1.0).coeffs, f.coeffs * (1 - math.exp(-1)), atol=1e-16)

    def test_large_time_limit(self, steady):
        F, _ = steady
        U0 = compute_U0(F)
        kmin2 = G.k2[np.abs(U0.coeffs).max(axis=0) > 0].min()
        for t in (10.0, 40.0):
            err = (duhamel_forcing(F, t) - U0).l2_norm() / U0.l2_norm()
            assert err <= math.exp(-kmin2 * t)

    def test_midpoint_quadrature(self, rng):
        g = Grid(16, 40.0)
        f = random_solenoidal(g, rng, smooth=0.0)
        band = (g.k2 * 1.0 <= 0.25) & (g.k2 > 0)
        f = f._new(f.coeffs * band)
        Pf = leray_project(f).coeffs
        m = 512
        Q = sum(np.exp(-g.k2 * (1.0 - s)) * Pf for s in (np.arange(m) + 0.5) / m) / m
        D = duhamel_forcing(f, 1.0).coeffs
        assert np.abs(D - Q).max() <= 1e-8 * np.abs(D).max()

    def test_negative_time(self, rng):
        with pytest.raises(ValueError):
            duhamel_forcing(random_solenoidal(G, rng), -0.1)


class TestPhi:
    @settings(max_examples=50, deadline=None)
    @given(st.floats(-60, 60, allow_nan=False), st.sampled_from([1, 2, 3]))
    def test_branches_agree(self, z, order):
        # phi_1 = (e^z - 1)/z, phi_{k+1} = (phi_k - 1/k!)/z; both branches must match the closed form
        za = np.array([z])
        v = _phi(za, order)[0]
        if abs(z) >= 0.5:
            ref = (math.exp(z) - 1) / z
            for k in range(1, order):
                ref = (ref - 1 / math.factorial(k)) / z
            assert v == pytest.approx(ref, rel=1e-9, abs=1e-300)
        assert np.isfinite(v)

    def test_zero(self):
        for k in (1, 2, 3):
            assert _phi(np.array([0.0]), k)[0] == pytest.approx(1 / math.factorial(k), rel=1e-15)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(dt=0.0), dict(dt=0.1, t_final=-1), dict(dt=0.1, scheme="euler"),
                                    dict(dt=0.1, cfl_safety=1.5), dict(dt=0.1, t_final=1, snapshot_times=(0.5, 0.2)),
                                    dict(dt=0.1, t_final=1, snapshot_times=(2.0,))])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            EvolutionConfig(**{"t_final": 1.0, **kw})

    def test_schemes(self):
        assert set(SCHEMES) == {"etdrk2", "etdrk4", "ifrk2", "ifrk4"}
        assert EvolutionConfig(dt=0.1, t_final=1).scheme == "etdrk2"


class TestEvolve:
    @pytest.mark.parametrize("scheme", SCHEMES)
    def test_linear_heat_exact(self, scheme):
        u0 = single_mode(G, (0, 1, 2), (1.0, 0.0, 0.0))
        cfg = EvolutionConfig(dt=0.07, t_final=1.0, scheme=scheme, nonlinear=False, weak_norms=False)
        tj = evolve(u0, None, cfg)
        exact = heat_multiply(u0, 1.0)
        assert (tj.final - exact).l2_norm() <= 1e-10 * exact.l2_norm()

    @pytest.mark.parametrize("scheme", SCHEMES)
    def test_linear_exact_with_force(self, scheme, steady, rng):
        F, _ = steady
        u0 = random_solenoidal(G, rng)
        c = u0.coeffs.copy()
        c[:, 0, 0, 0] = 0.0
        u0 = u0._new(c)
        cfg = EvolutionConfig(dt=0.13, t_final=1.3, scheme=scheme, nonlinear=False, weak_norms=False)
        tj = evolve(u0, F, cfg)
        exact = heat_multiply(u0, 1.3) + duhamel_forcing(F, 1.3)
        assert (tj.final - exact).l2_norm() <= 1e-10 * exact.l2_norm()

    @pytest.mark.parametrize("scheme,order", [("etdrk2", 2), ("etdrk4", 4), ("ifrk2", 2), ("ifrk4", 4)])
    def test_step_halving(self, scheme, order, steady):
        F, U = steady
        u0 = U + gaussian_bump(G, 2.0, 1.5)
        fs = [evolve(u0, F, EvolutionConfig(dt=0.1 / 2**j, t_final=0.8, scheme=scheme, weak_norms=False)).final
              for j in range(3)]
        ratio = (fs[0] - fs[1]).l2_norm() / (fs[1] - fs[2]).l2_norm()
        assert ratio == pytest.approx(2**order, rel=0.2)

    def test_fixed_point_drift(self, steady):
        F, U = steady
        cfg = EvolutionConfig(dt=0.1, t_final=10.0, snapshot_times=(5.0, 10.0), weak_norms=False)
        tj = evolve(U, F, cfg, reference=U)
        assert max(tj.series["diff_l2"]) <= 1e-6 * U.l2_norm()

    def test_divergence_and_snapshots(self, steady):
        F, U = steady
        cfg = EvolutionConfig(dt=0.05, t_final=1.0, snapshot_times=(0.0, 0.33, 1.0), keep_fields=True, q_norms=(4.0,))
        tj = evolve(U + gaussian_bump(G, 1.0, 1.5), F, cfg, reference=U)
        assert tj.times == [0.0, 0.33, 1.0]
        assert max(tj.series["div_defect"]) <= 1e-10
        assert len(tj.snapshots) == 3 and tj.snapshots[1][0] == 0.33
        assert {"l2", "weak3", "L4", "diff_l2", "diff_weak3", "diff_L4", "energy"} <= set(tj.series)
        assert tj.steps >= 20 and 0 < tj.max_cfl < 1

    def test_final_time_always_recorded(self, steady):
        F, U = steady
        tj = evolve(U, F, EvolutionConfig(dt=0.3, t_final=1.0, weak_norms=False))
        assert tj.times == [1.0] and tj.steps == 4

    def test_energy_inequality_unforced(self, rng):
        u0 = gaussian_bump(G, 8.0, 1.0)
        cfg = EvolutionConfig(dt=0.01, t_final=1.0, snapshot_times=tuple(np.linspace(0, 1, 11)), weak_norms=False)
        tj = evolve(u0, None, cfg)
        en = energy_series(tj)
        assert en["max_relative_excess"] <= 1e-6 and en["l2_monotone"]

    def test_cfl_violation(self):
        u0 = gaussian_bump(G, 200.0, 1.0)
        with pytest.raises(CFLViolation) as ei:
            evolve(u0, None, EvolutionConfig(dt=0.5, t_final=1.0))
        assert isinstance(ei.value.trajectory, Trajectory)

    def test_blowup_guard(self):
        u0 = gaussian_bump(G, 1.0, 1.5)
        with pytest.raises(BlowUpError):
            evolve(u0, None, EvolutionConfig(dt=0.01, t_final=0.05, blowup_factor=0.5))

    def test_input_checks(self, rng, steady):
        u = random_solenoidal(G, rng)
        c = u.coeffs.copy()
        c[:, 0, 0, 0] = 1.0
        with pytest.raises(ValueError):
            evolve(u._new(c), None, EvolutionConfig(dt=0.1, t_final=0.1))
        cfg = EvolutionConfig(dt=0.1, t_final=0.1)
        with pytest.raises(ValueError):
            evolve(u._new(u.coeffs * 1j, real_valued=False), None, cfg)

    def test_phases_continue(self, steady):
        F, U = steady
        u0 = U + gaussian_bump(G, 1.0, 1.5)
        one = evolve(u0, F, EvolutionConfig(dt=0.05, t_final=1.0, snapshot_times=(0.5, 1.0), weak_norms=False), reference=U)
        two = evolve_phases(u0, F, [EvolutionConfig(dt=0.05, t_final=0.5, snapshot_times=(0.5,), weak_norms=False),
                                    EvolutionConfig(dt=0.05, t_final=0.5, snapshot_times=(0.5,), weak_norms=False)],
                            reference=U)
        assert two.times == [0.5, 1.0]
        assert (two.final - one.final).l2_norm() <= 1e-12 * one.final.l2_norm()
        assert two.steps == one.steps

    def test_csv(self, steady, tmp_path):
        F, U = steady
        tj = evolve(U, F, EvolutionConfig(dt=0.1, t_final=0.3, snapshot_times=(0.1, 0.3), weak_norms=False))
        tj.to_csv(tmp_path / "t.csv")
        rows = (tmp_path / "t.csv").read_text().splitlines()
        assert rows[0].startswith("t,") and len(rows) == 3


class TestRates:
    def test_zero_perturbation_is_degenerate(self, steady):
        F, U = steady
        ts = tuple(np.geomspace(0.1, 1.0, 6))
        tj = evolve(U, F, EvolutionConfig(dt=0.05, t_final=1.0, snapshot_times=ts, q_norms=(4.0,), weak_norms=False),
                    reference=U)
        with pytest.raises(AnalysisGuardError):
            stability_rates(tj, U, [4.0], (0.1, 1.0))

    def test_heat_length_guard(self, steady):
        F, U = steady
        tj = Trajectory()
        with pytest.raises(AnalysisGuardError):
            stability_rates(tj, U, [4.0], (1.0, (G.L / 8) ** 2 * 1.1))
        with pytest.raises(AnalysisGuardError):
            stability_rates(tj, U, [4.0], (1.0, 0.5))

    def test_too_few_samples(self, steady):
        F, U = steady
        w = gaussian_bump(G, 0.5, 1.5)
        tj = evolve(U + w, F, EvolutionConfig(dt=0.05, t_final=1.0, snapshot_times=(0.5, 1.0), q_norms=(4.0,)),
                    reference=U)
        with pytest.raises(AnalysisGuardError):
            stability_rates(tj, U, [4.0], (0.1, 1.0))

    def test_rate_from_series(self, steady):
        # an L^2 bump decays at the heat rate 3/4 (3/2 - 3/q) ... for q = 4: -3/8 at least
        F, U = steady
        w = gaussian_bump(G, 0.2, 1.0)
        ts = tuple(np.geomspace(0.5, 2.0, 6))
        tj = evolve(U + w, F, EvolutionConfig(dt=0.05, t_final=2.0, snapshot_times=ts, q_norms=(4.0,), weak_norms=False),
                    reference=U)
        fit = stability_rates(tj, U, [4.0], (0.5, 2.0))[0]
        assert fit.exponent < -0.3


class TestDifference:
    def test_bracket(self, steady):
        F, U = steady
        tj = Trajectory()
        with pytest.raises(AnalysisGuardError):
            difference_profile_check(tj, U, U, 2.0, 3.0)
        with pytest.raises(AnalysisGuardError):
            difference_profile_check(tj, U, U, 1.0, 2.0)
        with pytest.raises(ValueError):
            difference_profile_check(tj, U, U, 2.0, 2.0)

    def test_zero_perturbation(self, steady):
        F, U = steady
        ts = tuple(np.geomspace(0.1, 1.0, 5))
        tj = evolve(U, F, EvolutionConfig(dt=0.05, t_final=1.0, snapshot_times=ts, keep_fields=True, weak_norms=False))
        rep = difference_profile_check(tj, U, U, 2.0, 2.0)
        assert max(rep.lhs_series) <= 1e-10 * U.l2_norm()

    def test_nonlinear_part_smaller(self, steady):
        F, U = steady
        w = l32_bump(G, 0.05, r_in=4.0, r_out=G.L * 0.45)
        ts = tuple(np.geomspace(0.2, 2.0, 6))
        tj = evolve(U + w, F, EvolutionConfig(dt=0.05, t_final=2.0, snapshot_times=ts, keep_fields=True, weak_norms=False))
        rep = difference_profile_check(tj, U, U + w, 2.0, 2.0, (0.2, 2.0))
        assert rep.expected_exponent == pytest.approx(-0.25)
        assert all(a < b for a, b in zip(rep.lhs_series, rep.linear_series))
        assert rep.to_dict()["q"] == 2.0


class TestHeatNorms:
    def test_monotone_decay(self):
        g0 = gaussian_bump(G, 1.0, 1.0)
        vals = heat_flow_norms(g0, [0.0, 0.5, 1.0, 2.0])
        assert vals[0] == pytest.approx(weak_norm(g0))
        assert all(b < a for a, b in zip(vals, vals[1:]))


class TestLargeData:
    def test_unforced_decay(self):
        u0 = gaussian_bump(G, 10.0, 1.0)
        umax = float(np.abs(u0.physical).max())
        cfg = EvolutionConfig(dt=0.5 / (umax * G.k_dealias), t_final=0.5, snapshot_times=tuple(np.linspace(0, 0.5, 6)))
        rep = large_data_experiment(u0, None, cfg, a_proxy=0.05)
        e = energy_series(rep.trajectory)
        assert e["l2_monotone"] and e["max_relative_excess"] <= 1e-6
        assert rep.weak3[-1] < rep.weak3[0]
        assert rep.band == pytest.approx(22 * 0.05)
        d = rep.to_dict()
        assert "trajectory" not in d and d["band"] == rep.band
