"""Stochastic sparse sampling for variable-length time series classification."""

__version__ = "0.1.0"
