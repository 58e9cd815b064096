import numpy as np
import pytest

from nsteady.spectral_core import Grid, PhysicalVectorField, dealias, leray_project, transform


def random_real(grid, rng, smooth=None):
    u = transform(PhysicalVectorField(grid, rng.standard_normal((3,) + grid.shape)))
    if smooth is not None:
        u = u._new(u.coeffs * np.exp(-smooth * grid.k2))
    return u


def random_solenoidal(grid, rng, smooth=1.0):
    return dealias(leray_project(random_real(grid, rng, smooth)))


def single_mode(grid, k_index, amplitude):
    """Real field ``a cos(k.x) + ...`` from one lattice wavevector (integers)."""
    X = grid.mesh()
    k = 2 * np.pi / grid.L * np.asarray(k_index, float)
    phase = np.einsum("i,i...->...", k, X)
    a = np.asarray(amplitude, float)
    return transform(PhysicalVectorField(grid, a[:, None, None, None] * np.cos(phase)[None]))


@pytest.fixture
def rng():
    return np.random.default_rng(20261014)


@pytest.fixture
def g16():
    return Grid(16, 10.0)
