"""Reference Lagrange P1/P2 elements on simplices.

Basis functions are written in barycentric coordinates; derivatives are taken
with respect to the barycentric coordinates, so that on a physical cell
``grad(phi_a) = sum_m dphi_a/dlambda_m * grad(lambda_m)``.  All element tensors
are therefore shape independent and are scaled by the cell measure and the
barycentric-gradient metric at assembly time.
"""

from __future__ import annotations

from functools import cached_property, lru_cache
from itertools import combinations

import numpy as np

from .quadrature import simplex_rule


class LagrangeSimplex:
    """Continuous Lagrange element of degree 1 or 2 on a ``dim``-simplex.

    Local node order: the ``dim + 1`` vertices, then (degree 2) the edges in
    ``itertools.combinations`` order.
    """

    def __init__(self, dim: int, degree: int):
        if degree not in (1, 2):
            raise ValueError(f"unsupported polynomial degree {degree}; expected 1 or 2")
        self.dim = dim
        self.degree = degree
        self.edges = list(combinations(range(dim + 1), 2)) if degree == 2 else []
        self.n_basis = dim + 1 + len(self.edges)

    def __repr__(self):
        return f"LagrangeSimplex(dim={self.dim}, degree={self.degree})"

    def eval(self, bary: np.ndarray) -> np.ndarray:
        lam = np.atleast_2d(bary)
        if self.degree == 1:
            return lam.copy()
        out = np.empty((lam.shape[0], self.n_basis))
        out[:, : self.dim + 1] = lam * (2.0 * lam - 1.0)
        for e, (a, b) in enumerate(self.edges):
            out[:, self.dim + 1 + e] = 4.0 * lam[:, a] * lam[:, b]
        return out

    def dbary(self, bary: np.ndarray) -> np.ndarray:
        """Derivatives ``d phi_a / d lambda_m``, shape ``(nq, n_basis, dim + 1)``."""
        lam = np.atleast_2d(bary)
        nq, nv = lam.shape[0], self.dim + 1
        out = np.zeros((nq, self.n_basis, nv))
        if self.degree == 1:
            out[:, np.arange(nv), np.arange(nv)] = 1.0
            return out
        out[:, np.arange(nv), np.arange(nv)] = 4.0 * lam - 1.0
        for e, (a, b) in enumerate(self.edges):
            out[:, nv + e, a] = 4.0 * lam[:, b]
            out[:, nv + e, b] = 4.0 * lam[:, a]
        return out

    def node_bary(self) -> np.ndarray:
        """Barycentric coordinates of the local nodes."""
        nv = self.dim + 1
        pts = [np.eye(nv)[i] for i in range(nv)]
        pts += [0.5 * (np.eye(nv)[a] + np.eye(nv)[b]) for a, b in self.edges]
        return np.array(pts)

    # Shape-independent tensors, normalised by the simplex measure.

    @cached_property
    def mass(self) -> np.ndarray:
        q, w = simplex_rule(self.dim, 2 * self.degree)
        phi = self.eval(q)
        return np.einsum("q,qa,qb->ab", w, phi, phi)

    @cached_property
    def weighted_mass(self) -> np.ndarray:
        """``T[c, a, b] = int phi_c phi_a phi_b / |T|``."""
        q, w = simplex_rule(self.dim, 3 * self.degree)
        phi = self.eval(q)
        return np.einsum("q,qc,qa,qb->cab", w, phi, phi, phi)

    @cached_property
    def stiffness(self) -> np.ndarray:
        """``S[a, b, m, n] = int dphi_a/dl_m dphi_b/dl_n / |T|``."""
        q, w = simplex_rule(self.dim, 2 * self.degree - 2)
        d = self.dbary(q)
        return np.einsum("q,qam,qbn->abmn", w, d, d)

    @cached_property
    def weighted_stiffness(self) -> np.ndarray:
        """``W[c, a, b, m, n] = int phi_c dphi_a/dl_m dphi_b/dl_n / |T|``."""
        q, w = simplex_rule(self.dim, 3 * self.degree - 2)
        phi = self.eval(q)
        d = self.dbary(q)
        return np.einsum("q,qc,qam,qbn->cabmn", w, phi, d, d)


@lru_cache(maxsize=None)
def lagrange(dim: int, degree: int) -> LagrangeSimplex:
    return LagrangeSimplex(dim, degree)
