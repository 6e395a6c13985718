from math import factorial

import numpy as np
import pytest
import scipy.io
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from knpemi.fem.assembly import (
    assemble_interface_mass,
    assemble_mass,
    assemble_stiffness,
    assemble_weighted_stiffness,
    export_matrix_market,
)
from knpemi.fem.dofmap import build_dofmap
from knpemi.fem.quadrature import simplex_rule
from knpemi.mesh import EXTRA, INTRA, Mesh, build_model_a_mesh

# --- independent oracle: tensor Gauss rule collapsed onto the triangle ---------


def _triangle_rule(n=8):
    g, w = np.polynomial.legendre.leggauss(n)
    u = (g + 1) / 2
    wu = w / 2
    pts, wts = [], []
    for a, wa in zip(u, wu):
        for b, wb in zip(u, wu):
            pts.append((a, b * (1 - a)))
            wts.append(wa * wb * (1 - a))
    return np.array(pts), np.array(wts)


def _basis_table(lam_nodes, degree):
    """Basis index of each local dof from its barycentric position."""
    out = []
    for lam in lam_nodes:
        if degree == 1 or np.isclose(lam.max(), 1.0):
            out.append(("v", int(np.argmax(lam))))
        else:
            i, j = np.flatnonzero(np.isclose(lam, 0.5))
            out.append(("e", int(i), int(j)))
    return out


def _eval_basis(kind, lam, glam, degree):
    """Value and gradient of one Lagrange basis function at barycentric points."""
    if kind[0] == "v":
        i = kind[1]
        if degree == 1:
            return lam[:, i], np.tile(glam[i], (lam.shape[0], 1))
        return lam[:, i] * (2 * lam[:, i] - 1), (4 * lam[:, i] - 1)[:, None] * glam[i]
    _, i, j = kind
    return 4 * lam[:, i] * lam[:, j], 4 * (lam[:, j][:, None] * glam[i] + lam[:, i][:, None] * glam[j])


def oracle_matrices(dofmap, tag, coefficient=None):
    mesh = dofmap.mesh
    reg = dofmap.regions[tag]
    coords = dofmap.coords(tag)
    n = reg.size
    M = np.zeros((n, n))
    A = np.zeros((n, n))
    W = np.zeros((n, n))
    q, wq = _triangle_rule()
    for cell, dofs in zip(reg.cells, reg.cell_dofs):
        X = mesh.vertices[mesh.cells[cell]]
        T = np.column_stack([X[1] - X[0], X[2] - X[0]])
        area = abs(np.linalg.det(T)) / 2
        Tinv = np.linalg.inv(T)
        glam = np.vstack([-Tinv.sum(axis=0), Tinv])  # gradients of barycentrics
        lam_q = np.column_stack([1 - q.sum(axis=1), q])
        lam_nodes = np.array([np.linalg.solve(np.vstack([X.T, np.ones(3)]), np.append(x, 1.0)) for x in coords[dofs]])
        kinds = _basis_table(lam_nodes, dofmap.degree)
        vals, grads = zip(*[_eval_basis(k, lam_q, glam, dofmap.degree) for k in kinds])
        w = 2 * area * wq
        cq = np.zeros(len(q)) if coefficient is None else sum(coefficient[d] * v for d, v in zip(dofs, vals))
        for a, da in enumerate(dofs):
            for b, db in enumerate(dofs):
                M[da, db] += np.sum(w * vals[a] * vals[b])
                gg = np.einsum("qd,qd->q", grads[a], grads[b])
                A[da, db] += np.sum(w * gg)
                W[da, db] += np.sum(w * cq * gg)
    return M, A, W


def _rel(A, B):
    A = A.toarray() if sp.issparse(A) else A
    return np.abs(A - B).max() / np.abs(B).max()


# --- dofmap ----------------------------------------------------------------


def test_dofmap_n4_hand_count():
    dm = build_dofmap(build_model_a_mesh(4, 2), 1)
    assert (dm.n_intra, dm.n_extra) == (9, 24)
    assert dm.n_intra + dm.n_extra == 25 + 8 == 33


@pytest.mark.parametrize("n_x,expected", [(64, 17412), (128, 67588)])
def test_dofmap_global_size_table(n_x, expected):
    assert build_dofmap(build_model_a_mesh(n_x, 2), 1).global_size(3) == expected


@pytest.mark.parametrize("n_x,p", [(4, 1), (8, 1), (4, 2), (16, 2)])
def test_dofmap_closed_form(n_x, p):
    dm = build_dofmap(build_model_a_mesh(n_x, 2), p)
    assert dm.n_intra + dm.n_extra == (p * n_x + 1) ** 2 + 2 * p * n_x


@pytest.mark.parametrize("dim,p", [(2, 1), (2, 2), (3, 1), (3, 2)])
def test_interface_bijection_preserves_coordinates(dim, p):
    dm = build_dofmap(build_model_a_mesh(4, dim), p)
    gi, ge = dm.regions[INTRA].gamma, dm.regions[EXTRA].gamma
    assert gi.size == ge.size == dm.n_gamma
    assert np.array_equal(dm.coords(INTRA)[gi], dm.coords(EXTRA)[ge])
    assert np.array_equal(dm.coords(INTRA)[gi], dm.gamma_coords())


def test_dofmap_rejects_degree_three():
    with pytest.raises(ValueError, match="degree"):
        build_dofmap(build_model_a_mesh(4, 2), 3)


def test_dof_nodes_unique_within_region():
    dm = build_dofmap(build_model_a_mesh(8, 2), 2)
    for tag in (INTRA, EXTRA):
        c = dm.coords(tag)
        assert np.unique(c, axis=0).shape[0] == c.shape[0]


# --- quadrature ------------------------------------------------------------


@pytest.mark.parametrize("degree", [1, 2, 3, 4, 5, 6])
def test_triangle_rule_exact_for_monomials(degree):
    q, w = simplex_rule(2, degree)  # barycentric points
    assert np.allclose(q.sum(axis=1), 1.0)
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            exact = factorial(a) * factorial(b) / factorial(a + b + 2) * 2  # weights sum to one
            assert np.sum(w * q[:, 1] ** a * q[:, 2] ** b) == pytest.approx(exact, rel=1e-12, abs=1e-15)


@pytest.mark.parametrize("degree", [1, 2, 3, 4])
def test_tetrahedron_rule_exact_for_monomials(degree):
    q, w = simplex_rule(3, degree)
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            for c in range(degree + 1 - a - b):
                exact = factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 3) * 6
                val = np.sum(w * q[:, 1] ** a * q[:, 2] ** b * q[:, 3] ** c)
                assert val == pytest.approx(exact, rel=1e-12, abs=1e-15)


# --- bulk matrices -----------------------------------------------------------


def _single_triangle_mesh(area=1.0):
    # intra unit-area right triangle plus an extra neighbour
    s = np.sqrt(2 * area)
    v = np.array([[0, 0], [s, 0], [0, s], [s, s]])
    return Mesh.from_cells(v, [[0, 1, 2], [1, 3, 2]], [INTRA, EXTRA])


def test_reference_triangle_mass_closed_form():
    dm = build_dofmap(_single_triangle_mesh(1.0), 1)
    M = assemble_mass(INTRA, dm).toarray()
    assert np.allclose(np.diag(M), 1 / 6, rtol=1e-14)
    assert np.allclose(M[~np.eye(3, dtype=bool)], 1 / 12, rtol=1e-14)


@pytest.mark.parametrize("p", [1, 2])
@pytest.mark.parametrize("tag", [INTRA, EXTRA])
def test_bulk_matrices_match_dense_oracle(p, tag, rng):
    dm = build_dofmap(build_model_a_mesh(4, 2), p)
    coeff = 1 + rng.random(dm.regions[tag].size)
    M_ref, A_ref, W_ref = oracle_matrices(dm, tag, coeff)
    assert _rel(assemble_mass(tag, dm), M_ref) <= 1e-12
    assert _rel(assemble_stiffness(tag, dm), A_ref) <= 1e-12
    assert _rel(assemble_weighted_stiffness(tag, coeff, dm), W_ref) <= 1e-12


@pytest.mark.parametrize("dim,p", [(2, 1), (2, 2), (3, 1), (3, 2)])
def test_stiffness_row_sums_vanish(dim, p):
    dm = build_dofmap(build_model_a_mesh(4, dim), p)
    for tag in (INTRA, EXTRA):
        A = assemble_stiffness(tag, dm)
        assert np.abs(A @ np.ones(A.shape[0])).max() <= 1e-12 * abs(A).max()


@pytest.mark.parametrize("dim,p", [(2, 1), (2, 2), (3, 1), (3, 2)])
def test_unit_weight_reproduces_stiffness(dim, p):
    dm = build_dofmap(build_model_a_mesh(4, dim), p)
    for tag in (INTRA, EXTRA):
        A = assemble_stiffness(tag, dm)
        W = assemble_weighted_stiffness(tag, np.ones(dm.regions[tag].size), dm)
        assert abs(W - A).max() <= 1e-12 * abs(A).max()


@pytest.mark.parametrize("dim,p", [(2, 1), (2, 2), (3, 1)])
def test_mass_spd_and_stiffness_kernel(dim, p):
    dm = build_dofmap(build_model_a_mesh(4, dim), p)
    for tag in (INTRA, EXTRA):
        M = assemble_mass(tag, dm).toarray()
        A = assemble_stiffness(tag, dm).toarray()
        assert np.allclose(M, M.T, rtol=0, atol=1e-14 * abs(M).max())
        assert np.allclose(A, A.T, rtol=0, atol=1e-14 * abs(A).max())
        assert np.linalg.eigvalsh(M).min() > 0
        ev = np.linalg.eigvalsh(A) / abs(A).max()
        assert ev[0] > -1e-12 and abs(ev[0]) < 1e-12  # one zero eigenvalue
        assert ev[1] > 1e-8  # nullspace is exactly the constants


def test_weighted_stiffness_rejects_wrong_length():
    dm = build_dofmap(build_model_a_mesh(4, 2), 1)
    with pytest.raises(ValueError, match="shape"):
        assemble_weighted_stiffness(INTRA, np.ones(3), dm)


@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2]))
def test_positive_weight_gives_symmetric_psd(seed, p):
    dm = build_dofmap(build_model_a_mesh(4, 2), p)
    c = 0.01 + np.random.default_rng(seed).random(dm.n_extra) * 100
    W = assemble_weighted_stiffness(EXTRA, c, dm).toarray()
    assert np.allclose(W, W.T, rtol=0, atol=1e-13 * abs(W).max())
    assert np.linalg.eigvalsh(W).min() >= -1e-12 * abs(W).max()


# --- interface matrices ------------------------------------------------------


@pytest.mark.parametrize("dim,p", [(2, 1), (2, 2), (3, 1), (3, 2)])
def test_interface_mass_properties(dim, p):
    mesh = build_model_a_mesh(4, dim)
    dm = build_dofmap(mesh, p)
    M_i, M_ie = assemble_interface_mass(INTRA, dm)
    M_e, M_ei = assemble_interface_mass(EXTRA, dm)
    gamma = 2 * dim * 0.5e-6 ** (dim - 1)
    assert M_i.sum() == pytest.approx(gamma, rel=1e-12)
    assert M_e.sum() == pytest.approx(gamma, rel=1e-12)
    assert abs(M_ie - M_ei.T).max() <= 1e-14 * abs(M_ie).max()
    for tag, M in ((INTRA, M_i), (EXTRA, M_e)):
        off = np.setdiff1d(np.arange(M.shape[0]), dm.regions[tag].gamma)
        assert abs(M[off]).max() == 0 and abs(M[:, off]).max() == 0


def test_interface_mass_2d_n4_value():
    dm = build_dofmap(build_model_a_mesh(4, 2), 1)
    M_i, _ = assemble_interface_mass(INTRA, dm)
    assert M_i.sum() == pytest.approx(4 * 0.5e-6, rel=1e-12)


# --- determinism and export --------------------------------------------------


def test_assembly_independent_of_threads():
    from knpemi import parallel

    dm = build_dofmap(build_model_a_mesh(64, 2), 2)
    before = parallel.get_threads()
    try:
        parallel.set_threads(1)
        A1 = assemble_stiffness(EXTRA, dm)
        parallel.set_threads(4)
        A4 = assemble_stiffness(EXTRA, dm)
    finally:
        parallel.set_threads(before)
    assert np.array_equal(A1.indices, A4.indices) and np.array_equal(A1.data, A4.data)


def test_csr_columns_sorted_unique():
    A = assemble_stiffness(EXTRA, build_dofmap(build_model_a_mesh(8, 2), 2))
    for i in range(A.shape[0]):
        cols = A.indices[A.indptr[i]:A.indptr[i + 1]]
        assert np.all(np.diff(cols) > 0)


def test_matrix_market_round_trip(tmp_path):
    A = assemble_mass(INTRA, build_dofmap(build_model_a_mesh(4, 2), 1))
    export_matrix_market(tmp_path / "m.mtx", A)
    B = scipy.io.mmread(str(tmp_path / "m.mtx"))
    assert abs(sp.csr_matrix(B) - A).max() == 0.0
