"""Generate the interface-refined Model A fixture (2D, coordinates in micrometres).

Starting from the structured N_x = 16 mesh, every triangle within a band
around the membrane is refined repeatedly with conforming red/green
longest-edge splits, so only the cells near the interface shrink.

    python3 tests/fixtures/make_refined_mesh.py
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from knpemi.mesh import Mesh, build_model_a_mesh, export_mesh

BASE_N_X = 16
SWEEPS = 3
BAND = 1.5  # in units of the local cell diameter

HERE = Path(__file__).resolve().parent
OUT = HERE / "model_a_16_interface_refined.mesh"


def _key(a, b):
    return (a, b) if a < b else (b, a)


def _longest(verts, tri):
    edges = [_key(tri[i], tri[j]) for i, j in ((0, 1), (1, 2), (2, 0))]
    # deterministic tie break on vertex indices
    return max(edges, key=lambda e: (round(float(np.sum((verts[e[0]] - verts[e[1]]) ** 2)), 30), -e[0], -e[1]))


def refine(verts: np.ndarray, cells: np.ndarray, tags: np.ndarray, marked: np.ndarray):
    """One conforming refinement of the marked triangles."""
    verts = [tuple(v) for v in verts]
    cells = [tuple(int(v) for v in c) for c in cells]
    V = np.asarray(verts)
    longest = [_longest(V, c) for c in cells]
    split = {longest[c] for c in np.flatnonzero(marked)}
    for c in np.flatnonzero(marked):
        a, b, d = cells[c]
        split |= {_key(a, b), _key(b, d), _key(d, a)}
    # closure: a cell with any split edge must split its longest edge
    changed = True
    while changed:
        changed = False
        for c, tri in enumerate(cells):
            es = {_key(tri[0], tri[1]), _key(tri[1], tri[2]), _key(tri[2], tri[0])}
            if es & split and longest[c] not in split:
                split.add(longest[c])
                changed = True
    mid = {}
    for e in sorted(split):
        mid[e] = len(verts)
        verts.append(tuple((np.asarray(verts[e[0]]) + np.asarray(verts[e[1]])) / 2))
    new_cells, new_tags = [], []

    def emit(tri, tag):
        new_cells.append(tri)
        new_tags.append(tag)

    for c, tri in enumerate(cells):
        tag = tags[c]
        a, b = longest[c]
        o = next(v for v in tri if v not in (a, b))
        m = mid.get(_key(a, b))
        if m is None:
            emit(tri, tag)
            continue
        ma = mid.get(_key(a, o))
        mb = mid.get(_key(b, o))
        if ma is not None and mb is not None:
            emit((a, m, ma), tag)
            emit((m, b, mb), tag)
            emit((ma, mb, o), tag)
            emit((m, mb, ma), tag)
            continue
        for end, me in ((a, ma), (b, mb)):
            if me is None:
                emit((end, m, o), tag)
            else:
                emit((end, m, me), tag)
                emit((me, m, o), tag)
    return np.asarray(verts), np.asarray(new_cells, dtype=np.int64), np.asarray(new_tags)


def near_interface(mesh: Mesh) -> np.ndarray:
    gamma = mesh.vertices[mesh.interface_vertices()]
    centroids = mesh.vertices[mesh.cells].mean(axis=1)
    diam = np.linalg.norm(mesh.vertices[mesh.cells[:, 0]] - mesh.vertices[mesh.cells[:, 1]], axis=1)
    diam = np.maximum(diam, np.linalg.norm(mesh.vertices[mesh.cells[:, 1]] - mesh.vertices[mesh.cells[:, 2]], axis=1))
    dist = np.min(np.linalg.norm(centroids[:, None, :] - gamma[None, :, :], axis=2), axis=1)
    return dist <= BAND * diam


def build() -> Mesh:
    mesh = build_model_a_mesh(BASE_N_X, 2, side=1.0)
    for _ in range(SWEEPS):
        v, c, t = refine(mesh.vertices, mesh.cells, mesh.tags, near_interface(mesh))
        mesh = Mesh.from_cells(v, c, t)
    return mesh


if __name__ == "__main__":
    mesh = build()
    export_mesh(mesh, OUT)
    print(f"wrote {OUT}: {mesh.n_vertices} vertices, {mesh.n_cells} cells")
