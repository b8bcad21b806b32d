"""Gaussian-transform distributional regression."""

__version__ = "0.1.0"
