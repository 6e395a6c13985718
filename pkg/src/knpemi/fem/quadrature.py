"""Quadrature rules on simplices in barycentric coordinates.

Rules are collapsed (Duffy) tensor products of Gauss-Legendre rules, exact for
polynomials up to the requested total degree.  Weights are normalised to sum to
one, so that ``int_T f = |T| * sum_q w_q f(x_q)``.
"""

from __future__ import annotations

from functools import lru_cache
import math

import numpy as np


@lru_cache(maxsize=None)
def simplex_rule(dim: int, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(bary, weights)`` with ``bary`` of shape ``(nq, dim + 1)``."""
    if dim == 0:
        return np.ones((1, 1)), np.ones(1)
    n = max(1, math.ceil((degree + dim) / 2))
    g, w = np.polynomial.legendre.leggauss(n)
    g = 0.5 * (g + 1.0)
    w = 0.5 * w
    grids = np.meshgrid(*([g] * dim), indexing="ij")
    wgrids = np.meshgrid(*([w] * dim), indexing="ij")
    u = [a.ravel() for a in grids]
    wt = np.prod([a.ravel() for a in wgrids], axis=0)
    # x_1 = u_1, x_2 = u_2 (1 - u_1), x_3 = u_3 (1 - u_1)(1 - u_2), ...
    coords = []
    scale = np.ones_like(wt)
    for k in range(dim):
        coords.append(u[k] * scale)
        scale = scale * (1.0 - u[k])
    jac = np.ones_like(wt)
    for k in range(dim - 1):
        jac = jac * (1.0 - u[k]) ** (dim - 1 - k)
    x = np.column_stack(coords)
    weights = wt * jac * math.factorial(dim)
    bary = np.column_stack([1.0 - x.sum(axis=1), x])
    bary.setflags(write=False)
    weights.setflags(write=False)
    return bary, weights
