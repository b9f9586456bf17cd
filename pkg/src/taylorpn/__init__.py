"""Probabilistic Taylor expansions with Taylor-kernel Gaussian processes."""

__version__ = "0.1.0"
