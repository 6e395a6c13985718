"""Bulk and membrane matrix assembly.

Local element matrices are computed in fixed-size cell chunks and scattered
into a precomputed CSR pattern with ``np.bincount``, which sums contributions in
element order; results do not depend on the number of worker threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp

from ..mesh import EXTRA, INTRA
from ..parallel import chunked_map
from .dofmap import DofMap
from .element import lagrange
from .quadrature import simplex_rule


def cell_geometry(vertices: np.ndarray, cells: np.ndarray):
    """Cell measures and barycentric-gradient metrics ``G[m, n] = grad l_m . grad l_n``."""
    d = vertices.shape[1]
    X = vertices[cells]
    B = X[:, 1:, :] - X[:, :1, :]  # rows are edge vectors
    det = np.linalg.det(B)
    Binv = np.linalg.inv(B)  # columns are grad lambda_1..d
    grads = np.concatenate([-Binv.sum(axis=2, keepdims=True), Binv], axis=2)
    grads = np.transpose(grads, (0, 2, 1))  # (nc, d+1, d)
    G = np.einsum("cmi,cni->cmn", grads, grads)
    return np.abs(det) / math.factorial(d), G


def facet_geometry(vertices: np.ndarray, facets: np.ndarray):
    """Facet measures and unit normals (orientation arbitrary)."""
    x = vertices[facets]
    if facets.shape[1] == 2:
        t = x[:, 1] - x[:, 0]
        meas = np.linalg.norm(t, axis=1)
        normal = np.column_stack([t[:, 1], -t[:, 0]]) / meas[:, None]
    else:
        c = np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
        n = np.linalg.norm(c, axis=1)
        meas = 0.5 * n
        normal = c / n[:, None]
    return meas, normal


@dataclass(eq=False)
class Pattern:
    """CSR sparsity pattern with the scatter map of element entries."""

    shape: tuple
    indptr: np.ndarray
    indices: np.ndarray
    scatter: np.ndarray  # position in data of each (element, a, b) entry

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    @classmethod
    def from_elements(cls, rows: np.ndarray, cols: np.ndarray, shape) -> "Pattern":
        """``rows``/``cols`` of shape ``(n_elem, n_local)``; all row-col pairs."""
        r = np.repeat(rows, cols.shape[1], axis=1).ravel()
        c = np.tile(cols, (1, rows.shape[1])).ravel()
        keys = r.astype(np.int64) * shape[1] + c
        uniq, inv = np.unique(keys, return_inverse=True)
        urow = uniq // shape[1]
        indptr = np.zeros(shape[0] + 1, dtype=np.int64)
        indptr[1:] = np.cumsum(np.bincount(urow, minlength=shape[0]))
        return cls(tuple(shape), indptr, (uniq % shape[1]).astype(np.int64), inv.astype(np.int64))

    def matrix(self, local: np.ndarray) -> sp.csr_matrix:
        data = np.bincount(self.scatter, weights=local.ravel(), minlength=self.nnz)
        return self.wrap(data)

    def wrap(self, data: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((data, self.indices, self.indptr), shape=self.shape, copy=False)

    def keys(self) -> np.ndarray:
        rows = np.repeat(np.arange(self.shape[0], dtype=np.int64), np.diff(self.indptr))
        return rows * self.shape[1] + self.indices

    def positions(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Data positions of the given (row, col) entries, which must exist."""
        keys = self.keys()
        q = np.asarray(rows, dtype=np.int64) * self.shape[1] + np.asarray(cols, dtype=np.int64)
        pos = np.searchsorted(keys, q)
        if np.any(pos >= keys.size) or np.any(keys[np.minimum(pos, keys.size - 1)] != q):
            raise KeyError("entry outside the sparsity pattern")
        return pos


class RegionAssembler:
    """Cached geometry and sparsity for the bulk matrices of one region."""

    def __init__(self, dofmap: DofMap, tag: int):
        self.dofmap = dofmap
        self.tag = tag
        mesh = dofmap.mesh
        reg = dofmap.regions[tag]
        self.region = reg
        self.element = lagrange(mesh.dim, dofmap.degree)
        self.measure, self.metric = cell_geometry(mesh.vertices, mesh.cells[reg.cells])
        self.pattern = Pattern.from_elements(reg.cell_dofs, reg.cell_dofs, (reg.size, reg.size))

    @property
    def size(self) -> int:
        return self.region.size

    def _local(self, kernel) -> np.ndarray:
        parts = chunked_map(kernel, self.measure.size)
        if not parts:
            nb = self.element.n_basis
            return np.zeros((0, nb, nb))
        return np.concatenate(parts)

    def mass_local(self) -> np.ndarray:
        ref = self.element.mass
        return self._local(lambda a, b: self.measure[a:b, None, None] * ref[None])

    def stiffness_local(self) -> np.ndarray:
        ref = self.element.stiffness
        return self._local(
            lambda a, b: self.measure[a:b, None, None] * np.einsum("abmn,cmn->cab", ref, self.metric[a:b])
        )

    def weighted_stiffness_local(self, coefficient: np.ndarray) -> np.ndarray:
        coefficient = np.asarray(coefficient, dtype=float)
        if coefficient.shape != (self.size,):
            raise ValueError(f"coefficient has shape {coefficient.shape}, expected ({self.size},)")
        ref = self.element.weighted_stiffness
        nb, nv = ref.shape[0], ref.shape[3]
        ref2 = ref.reshape(nb, nb * nb, nv * nv)
        dofs = self.region.cell_dofs

        def kernel(a, b):
            cw = coefficient[dofs[a:b]]  # (e, c)
            g = self.metric[a:b].reshape(b - a, nv * nv) * self.measure[a:b, None]
            # sum_c sum_mn cw[e,c] ref[c,ab,mn] g[e,mn]
            t = np.einsum("ec,cpm->epm", cw, ref2)
            return np.einsum("epm,em->ep", t, g).reshape(b - a, nb, nb)

        return self._local(kernel)

    def mass(self) -> sp.csr_matrix:
        return self.pattern.matrix(self.mass_local())

    def stiffness(self) -> sp.csr_matrix:
        return self.pattern.matrix(self.stiffness_local())

    def weighted_stiffness(self, coefficient) -> sp.csr_matrix:
        return self.pattern.matrix(self.weighted_stiffness_local(coefficient))

    def load(self, func, degree: int = 6, t: float = 0.0) -> np.ndarray:
        """``int_region f v`` for a callable ``f(x, t)`` evaluated at quadrature points."""
        mesh = self.dofmap.mesh
        q, w = simplex_rule(mesh.dim, degree)
        phi = self.element.eval(q)
        X = mesh.vertices[mesh.cells[self.region.cells]]  # (e, d+1, d)
        xq = np.einsum("qv,evd->eqd", q, X)
        fq = np.asarray(func(xq.reshape(-1, mesh.dim), t), dtype=float).reshape(xq.shape[:2])
        local = self.measure[:, None] * np.einsum("q,eq,qa->ea", w, fq, phi)
        return np.bincount(self.region.cell_dofs.ravel(), weights=local.ravel(), minlength=self.size)

    def interpolate(self, func, t: float = 0.0) -> np.ndarray:
        return np.asarray(func(self.dofmap.coords(self.tag), t), dtype=float)


class InterfaceAssembler:
    """Membrane mass matrices in membrane-node numbering, mapped to each region."""

    def __init__(self, dofmap: DofMap):
        self.dofmap = dofmap
        mesh = dofmap.mesh
        self.element = lagrange(mesh.dim - 1, dofmap.degree)
        self.measure, normal = facet_geometry(mesh.vertices, mesh.interface_facets)
        # orient normals out of the intracellular cell
        cen_i = mesh.vertices[mesh.cells[mesh.interface_cells[:, 0]]].mean(axis=1)
        cen_f = mesh.vertices[mesh.interface_facets].mean(axis=1)
        sign = np.sign(np.einsum("fd,fd->f", cen_f - cen_i, normal))
        self.normal_intra = normal * sign[:, None]
        ng = dofmap.n_gamma
        fg = dofmap.facet_gamma
        self.pattern = Pattern.from_elements(fg, fg, (ng, ng))

    def local(self, weight=None) -> np.ndarray:
        if weight is None:
            return self.measure[:, None, None] * self.element.mass[None]
        w = np.asarray(weight, dtype=float)[self.dofmap.facet_gamma]
        return self.measure[:, None, None] * np.einsum("cab,fc->fab", self.element.weighted_mass, w)

    def gamma_matrix(self, weight=None) -> sp.csr_matrix:
        """``int_Gamma w phi_a phi_b`` on membrane nodes; ``w`` nodal on membrane nodes."""
        return self.pattern.matrix(self.local(weight))

    def region_matrices(self, owner: int, weight=None):
        """``(M_{r,Gamma}, M_{rq,Gamma})`` for owner region ``r`` and the other region ``q``."""
        other = EXTRA if owner == INTRA else INTRA
        G = self.gamma_matrix(weight).tocoo()
        regs = self.dofmap.regions
        gr, gq = regs[owner].gamma, regs[other].gamma
        nr, nq = regs[owner].size, regs[other].size
        M_r = sp.csr_matrix((G.data, (gr[G.row], gr[G.col])), shape=(nr, nr))
        M_rq = sp.csr_matrix((G.data, (gr[G.row], gq[G.col])), shape=(nr, nq))
        return M_r, M_rq

    def load(self, func, degree: int = 6, t: float = 0.0) -> np.ndarray:
        """``int_Gamma f(x, n_i, t) v`` on membrane nodes; ``n_i`` points out of the cell."""
        mesh = self.dofmap.mesh
        q, w = simplex_rule(mesh.dim - 1, degree)
        phi = self.element.eval(q)
        X = mesh.vertices[mesh.interface_facets]
        xq = np.einsum("qv,fvd->fqd", q, X)
        nq = np.broadcast_to(self.normal_intra[:, None, :], xq.shape)
        fq = np.asarray(
            func(xq.reshape(-1, mesh.dim), nq.reshape(-1, mesh.dim), t), dtype=float
        ).reshape(xq.shape[:2])
        local = self.measure[:, None] * np.einsum("q,fq,qa->fa", w, fq, phi)
        return np.bincount(
            self.dofmap.facet_gamma.ravel(), weights=local.ravel(), minlength=self.dofmap.n_gamma
        )


def boundary_load(dofmap: DofMap, func, degree: int = 6, t: float = 0.0) -> np.ndarray:
    """``int_{dOmega} f(x, n, t) v`` on extracellular dofs, ``n`` the outward normal."""
    mesh = dofmap.mesh
    reg = dofmap.regions[EXTRA]
    el = lagrange(mesh.dim - 1, dofmap.degree)
    meas, normal = facet_geometry(mesh.vertices, mesh.boundary_facets)
    cen_c = mesh.vertices[mesh.cells[mesh.boundary_cells]].mean(axis=1)
    cen_f = mesh.vertices[mesh.boundary_facets].mean(axis=1)
    normal = normal * np.sign(np.einsum("fd,fd->f", cen_f - cen_c, normal))[:, None]
    q, w = simplex_rule(mesh.dim - 1, degree)
    phi = el.eval(q)
    X = mesh.vertices[mesh.boundary_facets]
    xq = np.einsum("qv,fvd->fqd", q, X)
    nq = np.broadcast_to(normal[:, None, :], xq.shape)
    fq = np.asarray(func(xq.reshape(-1, mesh.dim), nq.reshape(-1, mesh.dim), t), dtype=float)
    fq = fq.reshape(xq.shape[:2])
    local = meas[:, None] * np.einsum("q,fq,qa->fa", w, fq, phi)
    return np.bincount(dofmap.boundary_facet_dofs.ravel(), weights=local.ravel(), minlength=reg.size)


# Functional front-ends -----------------------------------------------------


def assemble_mass(tag: int, dofmap: DofMap) -> sp.csr_matrix:
    return RegionAssembler(dofmap, tag).mass()


def assemble_stiffness(tag: int, dofmap: DofMap) -> sp.csr_matrix:
    return RegionAssembler(dofmap, tag).stiffness()


def assemble_weighted_stiffness(tag: int, coefficient, dofmap: DofMap) -> sp.csr_matrix:
    return RegionAssembler(dofmap, tag).weighted_stiffness(coefficient)


def assemble_interface_mass(owner: int, dofmap: DofMap, weight=None):
    """``(M_{r,Gamma}, M_{rq,Gamma})`` for ``owner`` region ``r``."""
    return InterfaceAssembler(dofmap).region_matrices(owner, weight)


def export_matrix_market(path, A) -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), precision=17)
