"""Finite-dimensional factorization of the identity through Haar-space operators."""

__version__ = "0.1.0"
