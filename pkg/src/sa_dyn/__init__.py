"""Numerical toolkit for recurrent self-attention dynamics."""

__version__ = "0.1.0"
