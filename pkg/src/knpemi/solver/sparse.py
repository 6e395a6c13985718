"""Row-parallel CSR kernels with thread-count independent results.

Each output entry of ``spmv`` is a sequential sum over one row, and inner
products are summed over fixed blocks of ``BLOCK`` entries whose partial sums
are combined in block order, so no result depends on how rows or blocks are
distributed among threads.
"""

from __future__ import annotations

import numba
import numpy as np
import scipy.sparse as sp

from .. import parallel  # noqa: F401  (configures numba threads)

BLOCK = 4096


@numba.njit(parallel=True, cache=True)
def _spmv(indptr, indices, data, x, y):
    for i in numba.prange(indptr.size - 1):
        s = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            s += data[k] * x[indices[k]]
        y[i] = s


@numba.njit(parallel=True, cache=True)
def _residual(indptr, indices, data, x, b, r):
    for i in numba.prange(indptr.size - 1):
        s = b[i]
        for k in range(indptr[i], indptr[i + 1]):
            s -= data[k] * x[indices[k]]
        r[i] = s


@numba.njit(parallel=True, cache=True)
def _block_dots(x, y, block):
    n = x.size
    nb = (n + block - 1) // block
    out = np.zeros(nb)
    for b in numba.prange(nb):
        s = 0.0
        for i in range(b * block, min(n, (b + 1) * block)):
            s += x[i] * y[i]
        out[b] = s
    return out


@numba.njit(cache=True)
def _ordered_sum(v):
    s = 0.0
    for i in range(v.size):
        s += v[i]
    return s


def dot(x: np.ndarray, y: np.ndarray) -> float:
    if x.shape != y.shape:
        raise ValueError(f"dot: shape mismatch {x.shape} vs {y.shape}")
    return float(_ordered_sum(_block_dots(x, y, BLOCK)))


def norm(x: np.ndarray) -> float:
    return float(np.sqrt(dot(x, x)))


class CsrMatrix:
    """Square or rectangular CSR matrix with deterministic parallel products."""

    def __init__(self, A):
        A = sp.csr_matrix(A)
        A.sort_indices()
        self.shape = A.shape
        self.indptr = A.indptr.astype(np.int64)
        self.indices = A.indices.astype(np.int64)
        self.data = np.ascontiguousarray(A.data, dtype=float)

    @property
    def nnz(self) -> int:
        return int(self.data.size)

    def matvec(self, x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        if x.shape != (self.shape[1],):
            raise ValueError(f"spmv: vector of shape {x.shape} for matrix {self.shape}")
        y = np.empty(self.shape[0]) if out is None else out
        _spmv(self.indptr, self.indices, self.data, np.ascontiguousarray(x, dtype=float), y)
        return y

    __matmul__ = matvec

    def residual(self, x: np.ndarray, b: np.ndarray) -> np.ndarray:
        r = np.empty(self.shape[0])
        _residual(self.indptr, self.indices, self.data, x, b, r)
        return r

    def diagonal(self) -> np.ndarray:
        return self.to_scipy().diagonal()

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=self.shape)


def spmv(A, x: np.ndarray) -> np.ndarray:
    if not isinstance(A, CsrMatrix):
        A = CsrMatrix(A)
    return A.matvec(x)
