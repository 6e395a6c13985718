"""Sparse LU baseline solver."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SingularMatrixError(ArithmeticError):
    """The matrix is numerically singular."""


def _row_scale(A: sp.csr_matrix) -> np.ndarray:
    s = np.sqrt(np.asarray(A.multiply(A).sum(axis=1)).ravel())
    if np.any(s == 0.0):
        raise SingularMatrixError(f"zero row {np.flatnonzero(s == 0.0)[0]}")
    return 1.0 / s


def factorize(A, pivot_tol: float = 1e-13):
    """Row-equilibrated sparse LU; returns a solve callable."""
    A = sp.csr_matrix(A, dtype=float)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix is not square: {A.shape}")
    d = _row_scale(A)
    B = sp.diags(d) @ A
    try:
        lu = spla.splu(B.tocsc(), permc_spec="COLAMD")
    except RuntimeError as exc:  # exactly singular
        raise SingularMatrixError(str(exc)) from None
    piv = np.abs(lu.U.diagonal())
    if piv.min() <= pivot_tol * piv.max():
        raise SingularMatrixError(f"numerically singular: pivot ratio {piv.min() / piv.max():.2e}")
    return lambda b: lu.solve(d * np.asarray(b, dtype=float))


def direct_solve(A, b, cap: int = 200_000, check: float = 1e-10) -> np.ndarray:
    """Solve ``A x = b`` by sparse LU with partial pivoting."""
    A = sp.csr_matrix(A, dtype=float)
    if A.shape[0] > cap:
        raise ValueError(f"system size {A.shape[0]} exceeds the direct-solver cap {cap}")
    x = factorize(A)(b)
    b = np.asarray(b, dtype=float)
    bn = np.linalg.norm(b)
    res = np.linalg.norm(b - A @ x)
    if bn > 0 and res > check * bn:
        # one step of iterative refinement before giving up
        x = x + factorize(A)(b - A @ x)
        res = np.linalg.norm(b - A @ x)
        if res > check * bn:
            raise SingularMatrixError(f"direct solve residual {res / bn:.2e} exceeds {check:g}")
    return x
