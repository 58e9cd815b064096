"""Pseudo-spectral laboratory for small steady Navier-Stokes solutions on a periodic box."""

__version__ = "0.1.0"
