"""Dense brute-force assembly of one time step, written without the sparse machinery.

Basis functions are polynomials in barycentric coordinates and every integral
is evaluated exactly with the simplex monomial formula

    int_T lam_0^a_0 ... lam_d^a_d = d! |T| prod(a_i!) / (d + sum a_i)!

Degrees of freedom are located by coordinate lookup, so the oracle does not
rely on the local node ordering used by the finite element module.
"""

from __future__ import annotations

from itertools import combinations
from math import factorial

import numpy as np

from ..mesh import EXTRA, INTRA

ORACLE_CAP = 5000


class OracleSizeError(ValueError):
    pass


# barycentric polynomials: dict exponent-tuple -> coefficient


def _mul(p, q):
    out = {}
    for ea, ca in p.items():
        for eb, cb in q.items():
            e = tuple(x + y for x, y in zip(ea, eb))
            out[e] = out.get(e, 0.0) + ca * cb
    return out


def _diff(p, i):
    out = {}
    for e, c in p.items():
        if e[i] > 0:
            f = list(e)
            f[i] -= 1
            out[tuple(f)] = out.get(tuple(f), 0.0) + c * e[i]
    return out


def _integral(p, dim):
    """Integral over a simplex of unit measure."""
    total = 0.0
    for e, c in p.items():
        num = factorial(dim) * np.prod([factorial(a) for a in e])
        total += c * num / factorial(dim + sum(e))
    return total


def _mono(n, **powers):
    e = [0] * n
    for k, v in powers.items():
        e[int(k[1:])] = v
    return tuple(e)


def _basis(dim, degree):
    """Basis polynomials and the barycentric coordinates of their nodes."""
    n = dim + 1
    polys, nodes = [], []
    for a in range(n):
        lam = {_mono(n, **{f"v{a}": 1}): 1.0}
        if degree == 1:
            polys.append(lam)
        else:
            polys.append({_mono(n, **{f"v{a}": 2}): 2.0, _mono(n, **{f"v{a}": 1}): -1.0})
        b = np.zeros(n)
        b[a] = 1.0
        nodes.append(b)
    if degree == 2:
        for a, b in combinations(range(n), 2):
            e = [0] * n
            e[a] = e[b] = 1
            polys.append({tuple(e): 4.0})
            m = np.zeros(n)
            m[a] = m[b] = 0.5
            nodes.append(m)
    return polys, np.array(nodes)


class _Reference:
    def __init__(self, dim, degree):
        self.dim = dim
        polys, self.nodes = _basis(dim, degree)
        nb = len(polys)
        n = dim + 1
        self.mass = np.array([[_integral(_mul(pa, pb), dim) for pb in polys] for pa in polys])
        self.wmass = np.array(
            [[[_integral(_mul(pm, _mul(pa, pb)), dim) for pb in polys] for pa in polys] for pm in polys]
        )
        grads = [[_diff(p, i) for i in range(n)] for p in polys]
        self.stiff = np.zeros((nb, nb, n, n))
        self.wstiff = np.zeros((nb, nb, nb, n, n))
        for a in range(nb):
            for b in range(nb):
                for i in range(n):
                    for j in range(n):
                        g = _mul(grads[a][i], grads[b][j])
                        self.stiff[a, b, i, j] = _integral(g, dim)
                        for m in range(nb):
                            self.wstiff[m, a, b, i, j] = _integral(_mul(polys[m], g), dim)


def _grad_bary(X):
    """Gradients of the barycentric coordinates (d+1, d) and the cell measure."""
    d = X.shape[1]
    B = np.hstack([np.ones((d + 1, 1)), X])
    Binv = np.linalg.inv(B)
    vol = abs(np.linalg.det(X[1:] - X[0])) / factorial(d)
    return Binv[1:].T, vol


def _facet_measure(X):
    E = X[1:] - X[0]
    return np.sqrt(abs(np.linalg.det(E @ E.T))) / factorial(E.shape[0])


class _Lookup:
    def __init__(self, coords, scale):
        self.scale = scale
        self.table = {self._key(x): i for i, x in enumerate(coords)}

    def _key(self, x):
        return tuple(np.round(np.asarray(x) / self.scale * 1e9).astype(np.int64))

    def __call__(self, x):
        return self.table[self._key(x)]


def dense_oracle_assemble(problem, state, currents, cap: int = ORACLE_CAP):
    """Dense operator and right-hand side of the step from ``state`` (no pin).

    ``currents`` are the nodal channel currents (K, n_gamma) already evaluated
    by the membrane model; bulk sources are not supported.
    """
    if problem.sources or problem.extra_rhs is not None:
        raise ValueError("the oracle covers the homogeneous problem only")
    dofmap = problem.dofmap
    mesh = problem.mesh
    nr = {INTRA: dofmap.n_intra, EXTRA: dofmap.n_extra}
    K = len(problem.species)
    N = (K + 1) * (nr[INTRA] + nr[EXTRA])
    if N > cap:
        raise OracleSizeError(f"system size {N} exceeds the oracle cap {cap}")
    d = mesh.dim
    ref = _Reference(d, problem.degree)
    fref = _Reference(d - 1, problem.degree)
    scale = mesh.bounding_diagonal()
    look = {tag: _Lookup(dofmap.coords(tag), scale) for tag in (INTRA, EXTRA)}
    glook = _Lookup(dofmap.gamma_coords(), scale)

    C = problem.constants
    psi = C.R * C.T / C.F
    z = np.array([s.z for s in problem.species], dtype=float)
    dt = problem.dt
    start = {INTRA: 0, EXTRA: (K + 1) * nr[INTRA]}

    def conc(tag, k):
        return start[tag] + k * nr[tag]

    A = np.zeros((N, N))
    f = np.zeros(N)

    # bulk terms
    for tag in (INTRA, EXTRA):
        D = np.array([s.D(tag == INTRA) for s in problem.species])
        cprev = state.c[tag]
        for cell in np.flatnonzero(mesh.tags == tag):
            X = mesh.vertices[mesh.cells[cell]]
            grad, vol = _grad_bary(X)
            G = grad @ grad.T
            dofs = np.array([look[tag](node @ X) for node in ref.nodes])
            M = vol * ref.mass
            S = vol * np.einsum("abij,ij->ab", ref.stiff, G)
            Wk = vol * np.einsum("mabij,ij,km->kab", ref.wstiff, G, cprev[:, dofs])
            ix = np.ix_(dofs, dofs)
            pr = conc(tag, K)
            for k in range(K):
                ck = conc(tag, k)
                A[ck + dofs[:, None], ck + dofs[None, :]] += M + dt * D[k] * S
                f[ck + dofs] += M @ cprev[k, dofs]
                if problem.drift:
                    A[ck + dofs[:, None], pr + dofs[None, :]] += dt * D[k] * z[k] / psi * Wk[k]
                    A[pr + dofs[:, None], pr + dofs[None, :]] += z[k] * dt * D[k] * z[k] / psi * Wk[k]
                A[pr + dofs[:, None], ck + dofs[None, :]] += z[k] * dt * D[k] * S
            del ix

    # membrane terms
    gamma_nodes = {tag: dofmap.regions[tag].gamma for tag in (INTRA, EXTRA)}
    phi_m = state.phi[INTRA][gamma_nodes[INTRA]] - state.phi[EXTRA][gamma_nodes[EXTRA]]
    for f_idx in range(mesh.interface_facets.shape[0]):
        X = mesh.vertices[mesh.interface_facets[f_idx]]
        meas = _facet_measure(X)
        pts = fref.nodes @ X
        g = np.array([glook(x) for x in pts])
        Mg = meas * fref.mass
        loc = {tag: np.array([look[tag](x) for x in pts]) for tag in (INTRA, EXTRA)}
        for tag, other, sign in ((INTRA, EXTRA, 1.0), (EXTRA, INTRA, -1.0)):
            D = np.array([s.D(tag == INTRA) for s in problem.species])
            cg = state.c[tag][:, loc[tag]]
            w = D[:, None] * z[:, None] ** 2 * cg
            alpha = w / w.sum(axis=0)
            r, q = loc[tag], loc[other]
            pr, pq = conc(tag, K), conc(other, K)
            for k in range(K):
                ck = conc(tag, k)
                Ma = meas * np.einsum("mab,m->ab", fref.wmass, alpha[k])
                coef = C.C_m / (C.F * z[k])
                A[ck + r[:, None], pr + r[None, :]] += coef * Ma
                A[ck + r[:, None], pq + q[None, :]] -= coef * Ma
                f[ck + r] += -sign * dt / (C.F * z[k]) * (Mg @ currents[k, g])
                f[ck + r] += sign * coef * (Ma @ phi_m[g])
            A[pr + r[:, None], pr + r[None, :]] += C.C_m / C.F * Mg
            A[pr + r[:, None], pq + q[None, :]] -= C.C_m / C.F * Mg
            f[pr + r] += -sign / C.F * (dt * Mg @ currents[:, g].sum(axis=0) - C.C_m * Mg @ phi_m[g])
    return A, f


def compare_entrywise(A, B, slices) -> float:
    """Largest entrywise relative difference of ``A`` against reference ``B``.

    Each entry is measured relative to ``max(|B_ij|, max_j' |B_ij'|)`` where the
    floor runs over the same row of the same block, so entries that cancel to
    round-off are judged against the size of the terms that produced them.
    Vectors are handled per block segment.
    """
    A = np.asarray(A.toarray() if hasattr(A, "toarray") else A, dtype=float)
    B = np.asarray(B.toarray() if hasattr(B, "toarray") else B, dtype=float)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch {A.shape} vs {B.shape}")
    worst = 0.0
    if A.ndim == 1:
        for a, b in slices:
            ref = np.abs(B[a:b])
            floor = ref.max() if ref.size else 0.0
            diff = np.abs(A[a:b] - B[a:b])
            den = np.maximum(ref, floor)
            if np.any((den == 0) & (diff > 0)):
                return np.inf
            with np.errstate(invalid="ignore", divide="ignore"):
                worst = max(worst, float(np.nanmax(np.where(den > 0, diff / den, 0.0), initial=0.0)))
        return worst
    for a, b in slices:
        for c, e in slices:
            ref = np.abs(B[a:b, c:e])
            diff = np.abs(A[a:b, c:e] - B[a:b, c:e])
            floor = ref.max(axis=1, keepdims=True)
            den = np.maximum(ref, floor)
            if np.any((den == 0) & (diff > 0)):
                return np.inf
            with np.errstate(invalid="ignore", divide="ignore"):
                worst = max(worst, float(np.max(np.where(den > 0, diff / den, 0.0), initial=0.0)))
    return worst
