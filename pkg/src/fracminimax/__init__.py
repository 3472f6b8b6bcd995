"""Fractional calculus, path-space metrics and minimax machinery for path-dependent Hamilton-Jacobi equations."""

__version__ = "0.1.0"
