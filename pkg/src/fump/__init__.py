"""Unified motion prediction and planning on vectorized driving scenes."""

__version__ = "0.1.0"
