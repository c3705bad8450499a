"""Spectral Gaussian processes, Wick calculus and Ito integrals driven by a spectral density."""

__version__ = "0.1.0"
