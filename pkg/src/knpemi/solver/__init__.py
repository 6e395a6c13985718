"""Sparse kernels, Krylov solvers, algebraic multigrid and block preconditioners."""

from .amg import AmgHierarchy, amg_setup, v_cycle
from .direct import SingularMatrixError, direct_solve
from .krylov import KrylovConfig, KrylovResult, NegativeCurvatureError, cg, fgmres, gmres
from .precond import MODES, Preconditioner, apply_preconditioner, build_p0
from .sparse import CsrMatrix, dot, norm, spmv

__all__ = [
    "AmgHierarchy", "amg_setup", "v_cycle", "SingularMatrixError", "direct_solve",
    "KrylovConfig", "KrylovResult", "NegativeCurvatureError", "cg", "fgmres", "gmres",
    "MODES", "Preconditioner", "apply_preconditioner", "build_p0",
    "CsrMatrix", "dot", "norm", "spmv",
]
