"""Eigenvalues of the Dirichlet Laplacian in thin trapezoids and broken strips as the angle varies."""

__version__ = "0.1.0"
