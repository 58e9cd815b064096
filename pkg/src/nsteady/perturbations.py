"""Initial perturbations for the stability experiments.

Every constructor returns a real (or, for the chirp, complex) spectral field
with zero mean; the solenoidal ones are built as curls of potentials, so
they are divergence free to round-off.
"""

from __future__ import annotations

import numpy as np

from .spectral_core import Grid, PhysicalVectorField, SpectralVectorField, dealias, transform

__all__ = [
    "chirp",
    "curl_of",
    "degree_minus_one",
    "gaussian_bump",
    "l32_bump",
    "smooth_cutoff",
    "wave_packets",
]


def smooth_cutoff(r: np.ndarray, r_in: float, r_out: float) -> np.ndarray:
    """C-infinity step: 1 for ``r <= r_in``, 0 for ``r >= r_out``."""
    s = np.clip((r - r_in) / (r_out - r_in), 0.0, 1.0)

    def e(z):
        return np.where(z > 0, np.exp(-1.0 / np.where(z > 0, z, 1.0)), 0.0)

    a, b = e(1 - s), e(s)
    return a / (a + b)


def curl_of(grid: Grid, potential: np.ndarray) -> SpectralVectorField:
    """Dealiased spectral curl of a real potential sampled on ``grid``."""
    k = grid.wavevectors
    c = transform(PhysicalVectorField(grid, potential)).coeffs
    out = 1j * np.stack(
        [k[1] * c[2] - k[2] * c[1], k[2] * c[0] - k[0] * c[2], k[0] * c[1] - k[1] * c[0]]
    )
    out[:, 0, 0, 0] = 0.0
    return dealias(SpectralVectorField(grid, out))


def _default_radii(grid: Grid, r_in, r_out):
    return (grid.L / 4 if r_in is None else r_in, 0.4875 * grid.L if r_out is None else r_out)


def degree_minus_one(grid: Grid, amplitude: float = 1.0, r_in: float | None = None, r_out: float | None = None):
    """Compactly supported field equal to a degree -1 homogeneous field near 0.

    ``curl(phi(r) A)`` with ``A = (0, x3, -x2) / (8 pi r)``; inside
    ``r_in`` it is ``amplitude * curl A``, which has the ``1/|x|`` size of a
    critical weak-3 perturbation.  Sampled at cell centres, so the origin is
    never evaluated.  Defaults: ``r_in = L/4``, ``r_out = 0.4875 L``.
    """
    r_in, r_out = _default_radii(grid, r_in, r_out)
    X = grid.mesh(offset=True)
    r = np.sqrt(np.sum(X**2, axis=0))
    A = np.stack([np.zeros_like(r), X[2], -X[1]]) / (8 * np.pi * r)
    return curl_of(grid, amplitude * smooth_cutoff(r, r_in, r_out) * A)


def l32_bump(grid: Grid, amplitude: float = 1.0, core: float = 0.3, r_in=None, r_out=None):
    """Solenoidal field with a smooth core and an ``|x|^-2`` tail (weak-3/2 type).

    ``curl(phi(r) (0, x3, -x2) / (r^2 + core^2))``.
    """
    r_in, r_out = _default_radii(grid, r_in, r_out)
    X = grid.mesh(offset=True)
    r = np.sqrt(np.sum(X**2, axis=0))
    A = np.stack([np.zeros_like(r), X[2], -X[1]]) / (r**2 + core**2)
    return curl_of(grid, amplitude * smooth_cutoff(r, r_in, r_out) * A)


def gaussian_bump(grid: Grid, amplitude: float = 1.0, sigma: float = 1.0, axis: int = 2):
    """``amplitude * curl(exp(-|x|^2 / (2 sigma^2)) e_axis)``, an L^2 bump."""
    X = grid.mesh()
    g = np.exp(-np.sum(X**2, axis=0) / (2 * sigma**2))
    pot = np.zeros((3,) + grid.shape)
    pot[axis] = amplitude * g
    return curl_of(grid, pot)


def wave_packets(grid: Grid, k0: float, sigma: float) -> SpectralVectorField:
    """Three Gaussian wave packets with carrier ``k0`` along each axis.

    Packet ``i`` is ``curl(G cos(k0 x_i) e_{i+2})``; to leading order in
    ``1/(k0 sigma)`` the averaged stress of the sum is isotropic, so its
    divergence is a gradient and the packets transfer little energy to low
    wavenumbers.  Unit amplitude; rescale as needed.
    """
    X = grid.mesh()
    G = np.exp(-np.sum(X**2, axis=0) / (2 * sigma**2))
    pot = np.zeros((3,) + grid.shape)
    for i in range(3):
        pot[(i + 2) % 3] += G * np.cos(k0 * X[i])
    return curl_of(grid, pot)


def chirp(grid: Grid, r_in: float, r_out: float, component: int = 0) -> SpectralVectorField:
    """Complex field ``exp(i |x|^2) / <x>`` (one component), cut off smoothly.

    The local frequency is ``2 |x|``; ``r_out`` should keep it below the
    Nyquist wavenumber.
    """
    X = grid.mesh()
    r2 = np.sum(X**2, axis=0)
    amp = smooth_cutoff(np.sqrt(r2), r_in, r_out) / np.sqrt(1 + r2)
    s = np.zeros((3,) + grid.shape, dtype=complex)
    s[component] = amp * np.exp(1j * r2)
    return transform(PhysicalVectorField(grid, s))
