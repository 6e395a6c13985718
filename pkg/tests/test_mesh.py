import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from knpemi.mesh import (
    EXTRA,
    INTRA,
    MODEL_A_SIDE,
    MeshError,
    MeshFormatError,
    build_model_a_mesh,
    export_mesh,
    import_mesh,
)


def test_model_a_2d_n4_counts():
    m = build_model_a_mesh(4, 2)
    assert m.n_vertices == 25
    assert m.n_cells == 32
    assert m.interface_facets.shape[0] == 8
    assert m.interface_vertices().size == 8


def test_model_a_3d_n4_counts():
    m = build_model_a_mesh(4, 3)
    assert m.n_vertices == 125
    assert m.n_cells == 384


def test_model_a_3d_n20_interface_vertices():
    s = 10
    assert build_model_a_mesh(20, 3).interface_vertices().size == (s + 1) ** 3 - (s - 1) ** 3 == 602


@pytest.mark.parametrize("n_x", [2, 6, 10, 0, -4])
def test_model_a_rejects_misaligned_resolution(n_x):
    with pytest.raises(MeshError, match="multiple of 4"):
        build_model_a_mesh(n_x, 2)


def test_model_a_rejects_bad_dimension():
    with pytest.raises(MeshError):
        build_model_a_mesh(4, 1)


@pytest.mark.parametrize("dim,n_x", [(2, 4), (2, 8), (2, 16), (3, 4), (3, 8)])
def test_model_a_invariants(dim, n_x):
    m = build_model_a_mesh(n_x, dim)
    m.validate()
    assert np.all(m.cell_volumes() > 0)
    # every interface facet joins one intra and one extra cell
    ic = m.interface_cells
    assert np.all(m.tags[ic[:, 0]] == INTRA) and np.all(m.tags[ic[:, 1]] == EXTRA)
    for f, (a, b) in zip(m.interface_facets, ic):
        assert set(f) <= set(m.cells[a]) and set(f) <= set(m.cells[b])
    # exterior facets are extracellular
    assert np.all(m.tags[m.boundary_cells] == EXTRA)
    expected_gamma = 2 * n_x if dim == 2 else 6 * (n_x // 2) ** 2 + 2
    assert m.interface_vertices().size == expected_gamma
    intra_volume = m.region_volume(INTRA)
    assert intra_volume == pytest.approx((0.5 * MODEL_A_SIDE) ** dim, rel=1e-12)
    assert m.interface_measure() == pytest.approx(2 * dim * (0.5 * MODEL_A_SIDE) ** (dim - 1), rel=1e-12)


def test_coordinates_in_meters():
    m = build_model_a_mesh(4, 2)
    assert m.vertices.max() == pytest.approx(1e-6)
    assert m.vertices.min() == 0.0


def test_two_triangle_file(tmp_path):
    p = tmp_path / "two.mesh"
    p.write_text("knpemi-mesh v1 dim=2\nvertices 4\n0 0\n1 0\n1 1\n0 1\ncells 2\n0 1 2 i\n0 2 3 e\n")
    m = import_mesh(p, require_extra_boundary=False)
    assert m.interface_facets.shape[0] == 1
    assert sorted(m.interface_facets[0]) == [0, 2]


def test_intra_cell_on_boundary_is_rejected(tmp_path):
    p = tmp_path / "bad.mesh"
    p.write_text("knpemi-mesh v1 dim=2\nvertices 4\n0 0\n1 0\n1 1\n0 1\ncells 2\n0 1 2 i\n0 2 3 e\n")
    with pytest.raises(MeshError, match="exterior facet"):
        import_mesh(p)


@pytest.mark.parametrize(
    "text,line",
    [
        ("knpemi-mesh v2 dim=2\n", 1),
        ("knpemi-mesh v1 dim=2\nvertices 1\n0 zero\n", 3),
        ("knpemi-mesh v1 dim=2\nvertices 3\n0 0\n1 0\n0 1\ncells 1\n0 1 2 x\n", 7),
        ("knpemi-mesh v1 dim=2\nvertices 3\n0 0\n1 0\n0 1\ncells 1\n0 1 9 e\n", 7),
        ("knpemi-mesh v1 dim=2\nvertices 3\n0 0\n", None),
    ],
)
def test_parse_errors_carry_line_numbers(tmp_path, text, line):
    p = tmp_path / "m.mesh"
    p.write_text(text)
    with pytest.raises(MeshFormatError, match="line" if line is None else f"line {line}:"):
        import_mesh(p)


@pytest.mark.parametrize("dim", [2, 3])
def test_export_import_round_trip(tmp_path, dim):
    m = build_model_a_mesh(4, dim)
    p = tmp_path / "a.mesh"
    export_mesh(m, p)
    assert p.read_text().splitlines()[1] == f"vertices {m.n_vertices}"
    back = import_mesh(p)
    assert back.n_vertices == m.n_vertices and back.n_cells == m.n_cells
    assert np.array_equal(back.tags, m.tags)
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.cells, m.cells)
    q = tmp_path / "b.mesh"
    export_mesh(back, q)
    assert q.read_bytes() == p.read_bytes()


def test_export_to_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        export_mesh(build_model_a_mesh(4, 2), tmp_path / "missing" / "dir" / "m.mesh")


def test_multi_cell_labels_round_trip(tmp_path):
    p = tmp_path / "labels.mesh"
    p.write_text(
        "knpemi-mesh v1 dim=2\nvertices 8\n0 0\n1 0\n2 0\n0 1\n1 1\n2 1\n0 2\n2 2\n"
        "cells 5\n0 1 4 i 1\n0 4 3 i 1\n1 2 5 i 2\n1 5 4 i 2\n3 4 6 e\n"
    )
    m = import_mesh(p, require_extra_boundary=False)
    assert m.n_cell_labels == 2
    assert sorted(m.interface_labels.tolist()) == [1]
    q = tmp_path / "again.mesh"
    export_mesh(m, q)
    assert np.array_equal(import_mesh(q, require_extra_boundary=False).labels, m.labels)


def test_interface_refined_fixture_is_valid():
    from pathlib import Path

    path = Path(__file__).parent / "fixtures" / "model_a_16_interface_refined.mesh"
    m = import_mesh(path, scale=1e-6)
    base = build_model_a_mesh(16, 2)
    assert m.n_cells > 4 * base.n_cells
    assert m.region_volume(INTRA) == pytest.approx(base.region_volume(INTRA), rel=1e-12)
    assert m.interface_measure() == pytest.approx(base.interface_measure(), rel=1e-12)
    # refinement is concentrated at the membrane: small cells are all close to it
    vol = m.cell_volumes()
    small = vol < vol.max() / 16
    centroids = m.vertices[m.cells].mean(axis=1) / 1e-6
    dist = np.min(np.abs(np.stack([centroids - 0.25, centroids - 0.75])), axis=(0, 2))
    assert dist[small].max() < 0.15


@given(st.sampled_from([4, 8, 12]), st.sampled_from([2, 3]))
def test_every_gamma_facet_has_opposite_tags(n_x, dim):
    if dim == 3 and n_x > 8:
        n_x = 8
    m = build_model_a_mesh(n_x, dim)
    a, b = m.interface_cells.T
    assert np.all(m.tags[a] != m.tags[b])
    # and no other interior facet does
    assert m.interface_facets.shape[0] == (4 * (n_x // 2) if dim == 2 else 6 * 2 * (n_x // 2) ** 2)


@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_find_cell_tag_matches_geometry(x, y):
    m = build_model_a_mesh(8, 2)
    if min(abs(v - b) for v in (x, y) for b in (0.25, 0.75)) < 1e-6:
        return
    c = m.find_cell(np.array([x, y]) * 1e-6)
    inside = 0.25 < x < 0.75 and 0.25 < y < 0.75
    assert m.tags[c] == (INTRA if inside else EXTRA)
