"""Stationary scattering on manifolds with ends: resolvents, distorted Fourier
transforms, scattering matrices and the parabolic counterexample."""

__version__ = "0.1.0"
