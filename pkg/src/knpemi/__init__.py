"""Finite element solver for the KNP-EMI electrodiffusion model."""

from . import parallel  # noqa: F401  (must configure numba before any kernel import)

__version__ = "0.1.0"
