"""Gradient estimation through multivariate categorical distributions."""

__version__ = "0.1.0"
