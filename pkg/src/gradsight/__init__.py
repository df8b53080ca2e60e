"""Gradient-based interpretability for small ConvNets."""

__version__ = "0.1.0"
