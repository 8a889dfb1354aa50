"""Exact and Monte Carlo tools for the decimated two-dimensional Ising model."""
__version__ = "0.1.0"
