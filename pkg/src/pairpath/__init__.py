"""Brownian paths under semibounded pair potentials: sampling, bounds and
Gaussian-correlation checks on finite discretizations."""

__version__ = "0.1.0"
