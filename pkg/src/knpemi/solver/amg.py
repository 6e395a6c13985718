"""Classical (Ruge-Stuben) algebraic multigrid.

Coarsening uses the first Ruge-Stuben pass on the strength graph built from
negative off-diagonal couplings.  Interpolation is direct: each fine point
interpolates from its strongly connected coarse neighbours with weights
proportional to the (negative) couplings, normalised to sum to one so that
constants are reproduced exactly.  Coarse operators are Galerkin products,
the smoother is damped Jacobi, and the coarsest level is factorised densely.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .sparse import CsrMatrix

U_PT, C_PT, F_PT = 0, 1, 2


@numba.njit(cache=True)
def _strength(indptr, indices, data, theta):
    n = indptr.size - 1
    counts = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        mx = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j != i and -data[k] > mx:
                mx = -data[k]
        if mx > 0.0:
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                if j != i and -data[k] >= theta * mx:
                    counts[i + 1] += 1
    sptr = np.cumsum(counts)
    sind = np.empty(sptr[-1], dtype=np.int64)
    for i in range(n):
        mx = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j != i and -data[k] > mx:
                mx = -data[k]
        if mx > 0.0:
            pos = sptr[i]
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                if j != i and -data[k] >= theta * mx:
                    sind[pos] = j
                    pos += 1
    return sptr, sind


@numba.njit(cache=True)
def _transpose_graph(sptr, sind, n):
    counts = np.zeros(n + 1, dtype=np.int64)
    for k in range(sind.size):
        counts[sind[k] + 1] += 1
    tptr = np.cumsum(counts)
    fill = tptr[:-1].copy()
    tind = np.empty(sind.size, dtype=np.int64)
    for i in range(n):
        for k in range(sptr[i], sptr[i + 1]):
            j = sind[k]
            tind[fill[j]] = i
            fill[j] += 1
    return tptr, tind


@numba.njit(cache=True)
def _rs_first_pass(sptr, sind, tptr, tind, coupled):
    """C/F splitting; ties in the measure are broken by the lowest index.

    Points without strong connections become coarse if they have any coupling
    (so interpolation still reproduces constants) and fine otherwise.
    """
    n = sptr.size - 1
    state = np.zeros(n, dtype=np.int8)
    lam = np.empty(n, dtype=np.int64)
    heap = [(np.int64(0), np.int64(0))]
    heap.pop()
    for i in range(n):
        lam[i] = tptr[i + 1] - tptr[i]
        if lam[i] == 0 and sptr[i + 1] == sptr[i]:
            state[i] = C_PT if coupled[i] else F_PT
        else:
            heap.append((-lam[i], np.int64(i)))
    heapq.heapify(heap)
    while len(heap) > 0:
        neg, i = heapq.heappop(heap)
        if state[i] != U_PT or -neg != lam[i]:
            continue
        state[i] = C_PT
        for k in range(tptr[i], tptr[i + 1]):
            j = tind[k]
            if state[j] == U_PT:
                state[j] = F_PT
                for kk in range(sptr[j], sptr[j + 1]):
                    m = sind[kk]
                    if state[m] == U_PT:
                        lam[m] += 1
                        heapq.heappush(heap, (-lam[m], m))
        for k in range(sptr[i], sptr[i + 1]):
            m = sind[k]
            if state[m] == U_PT:
                lam[m] -= 1
                heapq.heappush(heap, (-lam[m], m))
    return state


@numba.njit(cache=True)
def _rs_second_pass(sptr, sind, state):
    """Ensure strongly connected fine points share a strong coarse point."""
    n = sptr.size - 1
    mark = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        if state[i] != F_PT:
            continue
        for k in range(sptr[i], sptr[i + 1]):
            if state[sind[k]] == C_PT:
                mark[sind[k]] = i
        tentative = -1
        promoted = False
        for k in range(sptr[i], sptr[i + 1]):
            j = sind[k]
            if state[j] != F_PT:
                continue
            shared = False
            for kk in range(sptr[j], sptr[j + 1]):
                if mark[sind[kk]] == i:
                    shared = True
                    break
            if shared:
                continue
            if tentative >= 0:
                state[i] = C_PT
                promoted = True
                break
            tentative = j
            mark[j] = i
        if not promoted and tentative >= 0:
            state[tentative] = C_PT
    return state


@numba.njit(cache=True)
def _direct_interpolation(indptr, indices, data, sptr, sind, state):
    n = indptr.size - 1
    cmap = np.full(n, -1, dtype=np.int64)
    nc = 0
    for i in range(n):
        if state[i] == C_PT:
            cmap[i] = nc
            nc += 1
    strong = np.zeros(n, dtype=np.bool_)
    counts = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        if state[i] == C_PT:
            counts[i + 1] = 1
        else:
            for k in range(sptr[i], sptr[i + 1]):
                if state[sind[k]] == C_PT:
                    counts[i + 1] += 1
    pptr = np.cumsum(counts)
    pind = np.empty(pptr[-1], dtype=np.int64)
    pval = np.zeros(pptr[-1])
    for i in range(n):
        pos = pptr[i]
        if state[i] == C_PT:
            pind[pos] = cmap[i]
            pval[pos] = 1.0
            continue
        for k in range(sptr[i], sptr[i + 1]):
            strong[sind[k]] = True
        total = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j != i and strong[j] and state[j] == C_PT and data[k] < 0.0:
                total += data[k]
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j != i and strong[j] and state[j] == C_PT:
                pind[pos] = cmap[j]
                pval[pos] = data[k] / total if total < 0.0 else 0.0
                pos += 1
        for k in range(sptr[i], sptr[i + 1]):
            strong[sind[k]] = False
    return pptr, pind, pval, nc


@numba.njit(parallel=True, cache=True)
def _jacobi(indptr, indices, data, inv_diag, omega, x, b, out):
    for i in numba.prange(indptr.size - 1):
        s = b[i]
        for k in range(indptr[i], indptr[i + 1]):
            s -= data[k] * x[indices[k]]
        out[i] = x[i] + omega * inv_diag[i] * s


@dataclass(eq=False)
class AmgLevel:
    A: CsrMatrix
    inv_diag: np.ndarray
    P: CsrMatrix | None = None
    R: CsrMatrix | None = None
    splitting: np.ndarray | None = None


@dataclass(eq=False)
class AmgHierarchy:
    levels: list
    theta: float
    omega: float = 2.0 / 3.0
    coarse_lu: tuple | None = None
    stats: dict = field(default_factory=dict)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def operator_complexity(self) -> float:
        return sum(lv.A.nnz for lv in self.levels) / self.levels[0].A.nnz

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return v_cycle(self, r)


def _coupled(A: sp.csr_matrix) -> np.ndarray:
    offdiag = A.copy()
    offdiag.setdiag(0.0)
    offdiag.eliminate_zeros()
    return np.diff(offdiag.indptr) > 0


def strength_graph(A: sp.csr_matrix, theta: float):
    A = sp.csr_matrix(A)
    A.sort_indices()
    return _strength(A.indptr.astype(np.int64), A.indices.astype(np.int64), A.data, float(theta))


def cf_splitting(A: sp.csr_matrix, theta: float) -> np.ndarray:
    sptr, sind = strength_graph(A, theta)
    tptr, tind = _transpose_graph(sptr, sind, A.shape[0])
    return _rs_first_pass(sptr, sind, tptr, tind, _coupled(A))


def amg_setup(A, theta: float = 0.25, max_coarse: int = 200, max_levels: int = 25,
              omega: float = 2.0 / 3.0, second_pass: bool = True) -> AmgHierarchy:
    """Build a Ruge-Stuben hierarchy for ``A`` with strength threshold ``theta``."""
    A = sp.csr_matrix(A, dtype=float)
    A.sort_indices()
    levels = []
    coarse_lu = None
    while True:
        diag = A.diagonal()
        if np.any(diag == 0.0):
            raise ValueError(f"structurally singular diagonal at row {np.flatnonzero(diag == 0.0)[0]}")
        level = AmgLevel(CsrMatrix(A), 1.0 / diag)
        levels.append(level)
        n = A.shape[0]
        sptr, sind = _strength(A.indptr.astype(np.int64), A.indices.astype(np.int64), A.data, float(theta))
        if sind.size == 0:
            break  # nothing to coarsen: smoother only
        if n <= max_coarse or len(levels) >= max_levels:
            coarse_lu = scipy.linalg.lu_factor(A.toarray())
            break
        tptr, tind = _transpose_graph(sptr, sind, n)
        state = _rs_first_pass(sptr, sind, tptr, tind, _coupled(A))
        if second_pass:
            state = _rs_second_pass(sptr, sind, state)
        pptr, pind, pval, nc = _direct_interpolation(
            A.indptr.astype(np.int64), A.indices.astype(np.int64), A.data, sptr, sind, state
        )
        if nc == 0 or nc >= n:
            coarse_lu = scipy.linalg.lu_factor(A.toarray()) if n <= 5000 else None
            break
        P = sp.csr_matrix((pval, pind, pptr), shape=(n, nc))
        R = P.T.tocsr()
        level.P, level.R, level.splitting = CsrMatrix(P), CsrMatrix(R), state
        A = sp.csr_matrix(R @ A @ P)
        A.sum_duplicates()
        A.sort_indices()
    return AmgHierarchy(levels, theta, omega, coarse_lu)


def _smooth(level: AmgLevel, omega: float, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty_like(b)
    A = level.A
    _jacobi(A.indptr, A.indices, A.data, level.inv_diag, omega, x, b, out)
    return out


def _cycle(h: AmgHierarchy, lev: int, b: np.ndarray) -> np.ndarray:
    level = h.levels[lev]
    if lev == h.n_levels - 1:
        if h.coarse_lu is not None:
            return scipy.linalg.lu_solve(h.coarse_lu, b)
        return h.omega * level.inv_diag * b
    x = h.omega * level.inv_diag * b
    r = level.A.residual(x, b)
    xc = _cycle(h, lev + 1, level.R.matvec(r))
    x = x + level.P.matvec(xc)
    return _smooth(level, h.omega, x, b)


def v_cycle(h: AmgHierarchy, r: np.ndarray) -> np.ndarray:
    """One V(1,1) cycle from a zero initial guess; a fixed linear map of ``r``."""
    r = np.ascontiguousarray(r, dtype=float)
    if r.shape != (h.levels[0].A.shape[0],):
        raise ValueError("residual size does not match the hierarchy")
    return _cycle(h, 0, r)
