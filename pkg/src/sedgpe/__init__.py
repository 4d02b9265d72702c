"""Gaussian-process emulation for uncertainty quantification in stochastic economic dispatch."""

__version__ = "0.1.0"
