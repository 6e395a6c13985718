"""Block-diagonal preconditioner built from the diagonal blocks of the operator.

The preconditioner keeps the ``2(|K| + 1)`` diagonal blocks of the pinned
global operator (one per species and region plus one potential block per
region) and drops every coupling block.  Inside the extracellular potential
block the pinned row and column are both reduced to the identity so the
block stays symmetric positive definite.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp

from .amg import amg_setup, v_cycle
from .direct import factorize
from .krylov import cg
from .sparse import CsrMatrix

MODES = ("exact_block_cg", "amg_monolithic", "amg_fieldsplit", "ilu0", "none", "direct")


def pin_symmetric(B: sp.csr_matrix, local: int) -> sp.csr_matrix:
    """Replace row and column ``local`` of ``B`` by the identity."""
    B = sp.csr_matrix(B, copy=True)
    B = B.tolil()
    B[local, :] = 0.0
    B[:, local] = 0.0
    B[local, local] = 1.0
    B = B.tocsr()
    B.sort_indices()
    return B


@numba.njit(cache=True)
def _ilu0_factor(indptr, indices, data):
    n = indptr.size - 1
    lu = data.copy()
    diag = np.empty(n, dtype=np.int64)
    for i in range(n):
        diag[i] = -1
        for k in range(indptr[i], indptr[i + 1]):
            if indices[k] == i:
                diag[i] = k
        if diag[i] < 0:
            raise ZeroDivisionError("ILU(0): missing diagonal entry")
    where = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        for k in range(indptr[i], indptr[i + 1]):
            where[indices[k]] = k
        for k in range(indptr[i], diag[i]):
            j = indices[k]
            if lu[diag[j]] == 0.0:
                raise ZeroDivisionError("ILU(0): zero pivot")
            lu[k] /= lu[diag[j]]
            f = lu[k]
            for kk in range(diag[j] + 1, indptr[j + 1]):
                pos = where[indices[kk]]
                if pos >= 0:
                    lu[pos] -= f * lu[kk]
        for k in range(indptr[i], indptr[i + 1]):
            where[indices[k]] = -1
    return lu, diag


@numba.njit(cache=True)
def _ilu0_solve(indptr, indices, lu, diag, b):
    n = b.size
    x = b.copy()
    for i in range(n):
        s = x[i]
        for k in range(indptr[i], diag[i]):
            s -= lu[k] * x[indices[k]]
        x[i] = s
    for i in range(n - 1, -1, -1):
        s = x[i]
        for k in range(diag[i] + 1, indptr[i + 1]):
            s -= lu[k] * x[indices[k]]
        x[i] = s / lu[diag[i]]
    return x


class Ilu0:
    """Incomplete LU factorisation on the matrix's own sparsity pattern."""

    def __init__(self, A):
        self.A = CsrMatrix(A)
        self.lu, self.diag = _ilu0_factor(self.A.indptr, self.A.indices, self.A.data)

    def __call__(self, r):
        return _ilu0_solve(self.A.indptr, self.A.indices, self.lu, self.diag, np.ascontiguousarray(r))


@dataclass(eq=False)
class Preconditioner:
    mode: str
    slices: list  # (start, stop) of each diagonal block
    names: list
    blocks: list  # scipy CSR diagonal blocks (pinned)
    appliers: list = field(default_factory=list)
    whole: object = None  # monolithic applier
    hierarchies: list = field(default_factory=list)
    frozen: bool = True
    setup_seconds: float = 0.0
    inner_iterations: list = field(default_factory=list)
    use_fgmres: bool = False

    @property
    def flexible(self) -> bool:
        return self.mode == "exact_block_cg" and self.use_fgmres

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def matrix(self) -> sp.csr_matrix:
        """The assembled block-diagonal preconditioner matrix."""
        return sp.block_diag(self.blocks, format="csr")

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return apply_preconditioner(self, r)


def apply_preconditioner(p: Preconditioner, r: np.ndarray) -> np.ndarray:
    if p.mode == "none":
        return np.array(r, dtype=float)
    if p.whole is not None:
        return p.whole(r)
    if not p.appliers:
        raise RuntimeError("preconditioner has not been built")
    out = np.empty_like(r, dtype=float)
    for (a, b), fn in zip(p.slices, p.appliers):
        out[a:b] = fn(np.ascontiguousarray(r[a:b]))
    return out


def _cg_block(B, hierarchy, name, tol, record):
    Bc = CsrMatrix(B)

    def solve(r):
        x, its = cg(Bc, r, precond=hierarchy, tol=tol, name=name)
        record.append(its)
        return x

    return solve


def build_p0(A, slices, names, pin: int | None, mode: str = "amg_monolithic", theta: float = 0.25,
             inner_tol: float = 1e-8, global_operator=None) -> Preconditioner:
    """Extract the diagonal blocks of the (pinned) operator ``A`` and set up ``mode``.

    ``pin`` is the global index of the pinned potential dof (or ``None``).
    ``global_operator`` is only used by ``ilu0``, which factorises the full
    operator instead of the blocks.
    """
    if mode not in MODES:
        raise ValueError(f"unknown preconditioner mode {mode!r}; valid modes: {', '.join(MODES)}")
    t0 = time.perf_counter()
    A = sp.csr_matrix(A)
    blocks = []
    for (a, b) in slices:
        B = sp.csr_matrix(A[a:b, a:b])
        if pin is not None and a <= pin < b:
            B = pin_symmetric(B, pin - a)
        B.sort_indices()
        blocks.append(B)
    p = Preconditioner(mode, list(slices), list(names), blocks)
    if mode == "amg_monolithic":
        h = amg_setup(p.matrix(), theta=theta)
        p.whole = lambda r: v_cycle(h, r)
        p.hierarchies = [h]
    elif mode == "amg_fieldsplit":
        hs = [amg_setup(B, theta=theta) for B in blocks]
        p.appliers = [(lambda h: (lambda r: v_cycle(h, r)))(h) for h in hs]
        p.hierarchies = hs
    elif mode == "exact_block_cg":
        hs = [amg_setup(B, theta=theta) for B in blocks]
        p.appliers = [_cg_block(B, h, n, inner_tol, p.inner_iterations) for B, h, n in zip(blocks, hs, names)]
        p.hierarchies = hs
    elif mode == "direct":
        p.appliers = [factorize(B) for B in blocks]
    elif mode == "ilu0":
        p.whole = Ilu0(global_operator if global_operator is not None else A)
    p.setup_seconds = time.perf_counter() - t0
    return p
