import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_solenoidal
from nsteady.asymptotics import (
    AnalysisGuardError,
    MomentumMatrix,
    anisotropy_deviation,
    directional_floor_fraction,
    directional_profile,
    kernel_oracle_error,
    momentum_matrix,
    nonexistence_diagnostic,
    profile_residual,
    shell_decay_fit,
    sphere_directions,
    stokes_profile_spectral,
    stokes_profile_term,
)
from nsteady.asymptotics import _profile_closed
from nsteady.forcing import ForceSpec, compute_U0, force_spectrum
from nsteady.spectral_core import Grid, PhysicalVectorField, SpectralVectorField, transform
from nsteady.steady_solver import picard_solve

G40 = Grid(64, 40.0)


def radial(g, fn):
    r = g.radius
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(r > 0, fn(np.where(r > 0, r, 1.0)), 0.0)
    return PhysicalVectorField(g, np.stack([v, 0 * v, 0 * v]))


def oracle_slope(fn, r_min, r_max, n_shells=8):
    # a decreasing radial profile peaks at each shell's inner edge
    lo = np.geomspace(r_min, r_max, n_shells + 1)[:-1]
    return np.polyfit(np.log(lo), np.log(fn(lo)), 1)[0]


class TestShellFit:
    def test_inverse_square(self):
        fit = shell_decay_fit(radial(G40, lambda r: 3.0 / r**2), 5.0, 10.0)
        assert fit.exponent == pytest.approx(-2.0, abs=0.02)
        assert fit.residual <= 1e-10 and len(fit.radii) == 8

    @pytest.mark.parametrize(
        "fn", [lambda r: 1.0 / (1 + r) ** 2, lambda r: np.log(r) / r**3], ids=["shifted_square", "cubic_log"]
    )
    def test_against_sampling_oracle(self, fn):
        fit = shell_decay_fit(radial(G40, fn), 5.0, 10.0)
        assert fit.exponent == pytest.approx(oracle_slope(fn, 5.0, 10.0), abs=0.02)

    def test_log_correction_is_shallower(self):
        f = shell_decay_fit(radial(G40, lambda r: np.log(r) / r**3), 5.0, 10.0).exponent
        assert -3.0 < f < -2.3

    def test_l2_mean(self):
        fit = shell_decay_fit(radial(G40, lambda r: 1.0 / r**2), 5.0, 10.0, stat="l2_mean")
        assert fit.exponent == pytest.approx(-2.0, abs=0.02)

    @pytest.mark.parametrize("window", [(5.0, 10.5), (0.0, 5.0), (6.0, 5.0)])
    def test_guards(self, window):
        with pytest.raises(AnalysisGuardError):
            shell_decay_fit(radial(G40, lambda r: 1 / r), *window)

    def test_shell_count_and_empty(self):
        with pytest.raises(AnalysisGuardError):
            shell_decay_fit(radial(G40, lambda r: 1 / r), 5.0, 10.0, n_shells=5)
        with pytest.raises(AnalysisGuardError):
            shell_decay_fit(radial(G40, lambda r: 1 / r), 0.1, 0.2, n_shells=8)

    def test_vanishing_field(self):
        with pytest.raises(AnalysisGuardError):
            shell_decay_fit(SpectralVectorField.zeros(G40), 5.0, 10.0)

    def test_unknown_stat(self):
        with pytest.raises(ValueError):
            shell_decay_fit(radial(G40, lambda r: 1 / r), 5.0, 10.0, stat="median")

    def test_serialisation(self, tmp_path):
        fit = shell_decay_fit(radial(G40, lambda r: 1 / r**2), 5.0, 10.0)
        d = json.loads(fit.to_json())
        assert d["n_shells"] == 8 and d["r_window"] == [5.0, 10.0]
        fit.write_profile(tmp_path / "p.csv")
        rows = (tmp_path / "p.csv").read_text().splitlines()
        assert rows[0] == "r,stat" and len(rows) == 9


class TestMomentum:
    def test_disjoint_support_diagonal(self):
        g = Grid(8, 4.0)
        u = np.zeros((3,) + g.shape)
        u[0, 1, 1, 1] = 2.0
        u[1, 3, 3, 3] = 1.0
        u[2, 5, 2, 6] = -3.0
        M = momentum_matrix(PhysicalVectorField(g, u)).entries
        assert np.array_equal(M, np.diag([4.0, 1.0, 9.0]) * g.cell_volume)

    def test_brute_force(self, rng):
        g = Grid(8, 3.0)
        u = rng.standard_normal((3,) + g.shape)
        M = momentum_matrix(PhysicalVectorField(g, u)).entries
        ref = np.zeros((3, 3))
        for h in range(3):
            for l in range(3):
                acc = 0.0
                for i in range(8):
                    for j in range(8):
                        for k in range(8):
                            acc += u[h, i, j, k] * u[l, i, j, k]
                ref[h, l] = acc * g.cell_volume
        assert np.allclose(M, ref, rtol=1e-12, atol=0)

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (3, 8, 8, 8), elements=st.floats(-10, 10, allow_nan=False)))
    def test_symmetric_psd(self, u):
        M = momentum_matrix(PhysicalVectorField(Grid(8, 2.0), u)).entries
        assert np.array_equal(M, M.T)
        ev = np.linalg.eigvalsh(M)
        assert ev.min() >= -1e-12 * max(ev.max(), 1e-300)

    def test_symmetric_solution_is_isotropic(self):
        g = Grid(32, 20.0)
        U0 = compute_U0(force_spectrum(ForceSpec("symmetric_annulus", 2.0, k_inner=0.4, k_outer=2.0, seed=2), g))
        U, _ = picard_solve(U0)
        M = momentum_matrix(U)
        assert np.abs(M.entries - M.trace / 3 * np.eye(3)).max() <= 1e-8 * M.trace
        assert anisotropy_deviation(M) <= 1e-6

    def test_shape_check(self):
        with pytest.raises(ValueError):
            MomentumMatrix(np.eye(2))
        m = MomentumMatrix(np.eye(3))
        with pytest.raises(ValueError):
            m.entries[0, 0] = 2.0


class TestAnisotropy:
    def test_closed_forms(self):
        assert anisotropy_deviation(np.eye(3)) == 0.0
        assert anisotropy_deviation(np.diag([1.0, 0, 0])) == pytest.approx(np.sqrt(2 / 3), rel=1e-15)

    def test_zero_matrix(self):
        with pytest.raises(ValueError):
            anisotropy_deviation(np.zeros((3, 3)))


psd = arrays(np.float64, (3, 3), elements=st.floats(-5, 5, allow_nan=False)).map(lambda a: a @ a.T)


class TestProfileTerm:
    def test_homogeneity(self, rng):
        M = np.array([[2.0, 0.3, 0.1], [0.3, 1.0, -0.2], [0.1, -0.2, 0.5]])
        x = rng.standard_normal((3, 40))
        a, b = _profile_closed(M, 2 * x), _profile_closed(M, x) / 4
        assert np.abs(a - b).max() <= 1e-10 * np.abs(b).max()

    def test_isotropic_vanishes(self):
        f = stokes_profile_term(np.eye(3) * 2.5, G40).samples
        assert np.abs(f).max() <= 1e-10
        assert np.abs(stokes_profile_spectral(np.eye(3) * 2.5, G40).coeffs).max() <= 1e-14

    @settings(max_examples=30, deadline=None)
    @given(psd)
    def test_vanishes_iff_isotropic(self, M):
        if np.linalg.norm(M) < 1e-6:
            return
        g = Grid(8, 4.0)
        term = np.abs(stokes_profile_term(M, g, offset=True).samples).max()
        scale = np.linalg.norm(M) / (8 * np.pi * (g.L / 2) ** 2)
        dev = anisotropy_deviation(M)
        if dev <= 1e-12:
            assert term <= 1e-10 * scale
        elif dev >= 1e-6:
            assert term > 1e-10 * scale

    def test_divergence_free(self):
        M = np.diag([3.0, 1.0, 0.5])
        P = stokes_profile_spectral(M, G40)
        k = G40.wavevectors
        assert np.abs(np.einsum("ixyz,ixyz->xyz", k, P.coeffs)).max() <= 1e-15 * np.abs(P.coeffs).max()

    def test_kernel_vs_multiplier(self):
        M = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, 0.2], [0.0, 0.2, 0.4]])
        assert kernel_oracle_error(M, G40) <= 0.03


class TestProfileResidual:
    def test_synthetic_identity(self, rng):
        g = Grid(32, 20.0)
        U0 = random_solenoidal(g, rng)
        M = MomentumMatrix(np.diag([2.0, 1.0, 0.5]))
        for variant, P in (("periodic", stokes_profile_spectral(M, g)), ("closed", transform(stokes_profile_term(M, g)))):
            R, fit = profile_residual(U0 + P, U0, M, 2.5, 5.0, variant=variant, fit=False)
            assert fit is None
            assert np.abs(R.coeffs).max() <= 1e-14 * np.abs((U0 + P).coeffs).max()

    def test_unknown_variant(self, rng):
        g = Grid(16, 10.0)
        U = random_solenoidal(g, rng)
        with pytest.raises(ValueError):
            profile_residual(U, U, np.eye(3), variant="other")


class TestDirectional:
    def test_fibonacci(self):
        d = sphere_directions(200)
        assert d.shape == (200, 3) and np.allclose(np.linalg.norm(d, axis=1), 1.0)
        assert np.abs(d.mean(axis=0)).max() < 0.01

    def test_profile_of_inverse_square(self):
        f = radial(G40, lambda r: 1.0 / r**2)
        prof = directional_profile(f, [5.0, 7.0, 9.0], n_dirs=50)
        assert np.allclose(prof, 1.0, rtol=0.02)

    def test_floor_fraction(self):
        f = radial(G40, lambda r: 1.0 / r**2)
        frac, floor = directional_floor_fraction(f, 5.0, 10.0, n_dirs=100)
        assert frac == 1.0 and floor == pytest.approx(0.1, rel=0.02)
        frac, _ = directional_floor_fraction(f, 5.0, 10.0, n_dirs=100, floor=10.0)
        assert frac == 0.0
        with pytest.raises(AnalysisGuardError):
            directional_floor_fraction(f, 5.0, 11.0)


class TestNonexistence:
    def test_small_family(self):
        g = Grid(32, 20.0)
        base = force_spectrum(ForceSpec("fourier_annulus", 1.0, k_inner=0.4, k_outer=2.0, seed=5), g)
        fam = []
        for eta in (0.25, 0.5, 1.0):
            U0 = compute_U0(base * eta)
            U, _ = picard_solve(U0)
            fam.append((eta, U, U0))
        rep = nonexistence_diagnostic(fam, 2.5, 5.0, n_dirs=100)
        assert rep.offdiag_exponent == pytest.approx(2.0, abs=0.05)
        assert rep.remainder_exponent == pytest.approx(3.0, abs=0.2)
        d = rep.to_dict()
        assert d["etas"] == [0.25, 0.5, 1.0] and len(d["anisotropy"]) == 3
        with pytest.raises(ValueError):
            nonexistence_diagnostic(fam[:2], 2.5, 5.0)
