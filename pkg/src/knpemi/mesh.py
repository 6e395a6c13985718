"""Simplicial meshes with intra/extracellular tagging.

A mesh is a conforming simplicial tessellation of the whole domain whose cells
carry a region tag.  The membrane is the set of facets shared by an
intracellular and an extracellular cell; exterior facets form the outer
boundary.  Coordinates are stored in meters.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)

INTRA = 1
EXTRA = 0

MODEL_A_SIDE = 1e-6  # m


class MeshError(ValueError):
    """Invalid mesh topology or geometry."""


class MeshFormatError(MeshError):
    """Malformed mesh file."""


@dataclass(frozen=True, eq=False)
class Mesh:
    """Tagged simplicial mesh.

    ``tags[c]`` is ``INTRA`` or ``EXTRA``.  ``labels[c]`` is the cell label of
    intracellular cells (1..N_cell) and 0 for extracellular cells.  Interface
    facets are stored with sorted vertex tuples together with the adjacent
    intra and extra cell; exterior facets with their single owning cell.
    """

    vertices: np.ndarray
    cells: np.ndarray
    tags: np.ndarray
    labels: np.ndarray
    interface_facets: np.ndarray = field(repr=False)
    interface_cells: np.ndarray = field(repr=False)  # (nf, 2): intra, extra
    boundary_facets: np.ndarray = field(repr=False)
    boundary_cells: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def interface_labels(self) -> np.ndarray:
        return self.labels[self.interface_cells[:, 0]]

    @property
    def n_cell_labels(self) -> int:
        intra = self.labels[self.tags == INTRA]
        return int(np.unique(intra).size)

    def interface_vertices(self) -> np.ndarray:
        return np.unique(self.interface_facets)

    def cell_volumes(self) -> np.ndarray:
        """Signed cell volumes (positive for the stored orientation)."""
        return _signed_volumes(self.vertices, self.cells)

    def region_volume(self, tag: int) -> float:
        return float(self.cell_volumes()[self.tags == tag].sum())

    def interface_measure(self) -> float:
        return float(facet_measures(self.vertices, self.interface_facets).sum())

    def bounding_diagonal(self) -> float:
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))

    def find_cell(self, x) -> int:
        """Index of the lowest-numbered cell containing point ``x`` (or -1)."""
        x = np.asarray(x, dtype=float)
        lam = barycentric(self.vertices, self.cells, x)
        tol = 1e-10
        inside = np.all(lam >= -tol, axis=1)
        hits = np.flatnonzero(inside)
        return int(hits[0]) if hits.size else -1

    @classmethod
    def from_cells(cls, vertices, cells, tags, labels=None, *, reorient=True) -> "Mesh":
        """Build a mesh, orient cells positively and derive facets."""
        vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        cells = np.array(cells, dtype=np.int64)
        tags = np.asarray(tags, dtype=np.int8)
        d = vertices.shape[1]
        if d not in (2, 3):
            raise MeshError(f"unsupported dimension {d}")
        if cells.ndim != 2 or cells.shape[1] != d + 1:
            raise MeshError(f"cells must have {d + 1} vertices in {d}D")
        if cells.size and (cells.min() < 0 or cells.max() >= vertices.shape[0]):
            raise MeshError("cell references an unknown vertex")
        if labels is None:
            labels = np.where(tags == INTRA, 1, 0)
        labels = np.asarray(labels, dtype=np.int64)
        labels = np.where(tags == INTRA, labels, 0)

        vol = _signed_volumes(vertices, cells)
        if reorient and np.any(vol < 0):
            flip = vol < 0
            cells[flip, 0], cells[flip, 1] = cells[flip, 1].copy(), cells[flip, 0].copy()
            vol = np.abs(vol)
        scale = np.linalg.norm(vertices.max(0) - vertices.min(0)) if len(vertices) else 1.0
        bad = np.flatnonzero(vol <= 1e-14 * scale**d)
        if bad.size:
            raise MeshError(f"cell {bad[0]} has non-positive volume")

        facets, owners = _facet_adjacency(cells)
        counts = (owners >= 0).sum(axis=1)
        if np.any(counts > 2):
            raise MeshError("non-manifold facet shared by more than two cells")
        interior = counts == 2
        t0 = tags[owners[:, 0]]
        t1 = np.where(interior, tags[np.maximum(owners[:, 1], 0)], -1)
        iface = interior & (t0 != t1)
        own = owners[iface, :2]
        intra_first = tags[own[:, 0]] == INTRA
        icells = np.where(intra_first[:, None], own, own[:, ::-1])
        bnd = ~interior
        return cls(
            vertices=vertices,
            cells=cells,
            tags=tags,
            labels=labels,
            interface_facets=facets[iface],
            interface_cells=icells,
            boundary_facets=facets[bnd],
            boundary_cells=owners[bnd, 0],
        )

    def validate(self, *, require_extra_boundary: bool = True) -> None:
        """Check the invariants of a built-in style mesh; raise MeshError."""
        tol = 1e-12 * self.bounding_diagonal()
        pairs = cKDTree(self.vertices).query_pairs(tol, output_type="ndarray")
        if len(pairs):
            a, b = pairs[0]
            raise MeshError(f"duplicate vertices {a} and {b}")
        ic = self.interface_cells
        if np.any(self.tags[ic[:, 0]] != INTRA) or np.any(self.tags[ic[:, 1]] != EXTRA):
            raise MeshError("interface facet without one intra and one extra neighbour")
        if require_extra_boundary:
            bad = np.flatnonzero(self.tags[self.boundary_cells] == INTRA)
            if bad.size:
                f = tuple(int(v) for v in self.boundary_facets[bad[0]])
                raise MeshError(
                    f"exterior facet {f} belongs to intracellular cell "
                    f"{int(self.boundary_cells[bad[0]])}"
                )
        if not np.any(self.tags == INTRA) or not np.any(self.tags == EXTRA):
            raise MeshError("mesh needs both intra- and extracellular cells")


def _signed_volumes(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    d = vertices.shape[1]
    x = vertices[cells]
    B = x[:, 1:, :] - x[:, :1, :]
    return np.linalg.det(B) / math.factorial(d)


def facet_measures(vertices: np.ndarray, facets: np.ndarray) -> np.ndarray:
    x = vertices[facets]
    if facets.shape[1] == 2:
        return np.linalg.norm(x[:, 1] - x[:, 0], axis=1)
    return 0.5 * np.linalg.norm(np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]), axis=1)


def barycentric(vertices: np.ndarray, cells: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of a point with respect to every cell."""
    X = vertices[cells]
    B = np.transpose(X[:, 1:, :] - X[:, :1, :], (0, 2, 1))
    rhs = (x[None, :] - X[:, 0, :])[..., None]
    lam = np.linalg.solve(B, rhs)[..., 0]
    return np.concatenate([1.0 - lam.sum(1, keepdims=True), lam], axis=1)


def _facet_adjacency(cells: np.ndarray):
    """Unique sorted facets and the (up to two) cells owning each one."""
    nc, nv = cells.shape
    local = [tuple(j for j in range(nv) if j != i) for i in range(nv)]
    f = np.concatenate([cells[:, loc] for loc in local])
    f.sort(axis=1)
    owner = np.tile(np.arange(nc), nv)
    order = np.lexsort(f.T[::-1])
    f = f[order]
    owner = owner[order]
    new = np.ones(len(f), dtype=bool)
    new[1:] = np.any(f[1:] != f[:-1], axis=1)
    start = np.flatnonzero(new)
    counts = np.diff(np.append(start, len(f)))
    owners = np.full((len(start), 3), -1, dtype=np.int64)
    owners[:, 0] = owner[start]
    two = counts >= 2
    owners[two, 1] = owner[start[two] + 1]
    three = counts >= 3
    owners[three, 2] = owner[start[three] + 2]
    return f[start], owners


def build_model_a_mesh(n_x: int, dim: int, side: float = MODEL_A_SIDE) -> Mesh:
    """Uniform unit-cube mesh with the central cube ``[0.25, 0.75]^d`` intracellular.

    Squares are split into two triangles along the (0,0)-(1,1) diagonal; cubes
    into the six Kuhn tetrahedra sharing the main diagonal.
    """
    if dim not in (2, 3):
        raise MeshError(f"dimension must be 2 or 3, got {dim}")
    if n_x < 4 or n_x % 4:
        raise MeshError(f"N_x must be a positive multiple of 4 (got {n_x}) so the membrane aligns with the grid")
    n1 = n_x + 1
    g = np.linspace(0.0, side, n1)
    if dim == 2:
        X, Y = np.meshgrid(g, g, indexing="xy")
        vertices = np.column_stack([X.ravel(), Y.ravel()])
        i, j = np.meshgrid(np.arange(n_x), np.arange(n_x), indexing="xy")
        v00 = (i + n1 * j).ravel()
        v10, v01, v11 = v00 + 1, v00 + n1, v00 + n1 + 1
        cells = np.stack(
            [np.column_stack([v00, v10, v11]), np.column_stack([v00, v11, v01])], axis=1
        ).reshape(-1, 3)
    else:
        Z, Y, X = np.meshgrid(g, g, g, indexing="ij")
        vertices = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
        k, j, i = np.meshgrid(np.arange(n_x), np.arange(n_x), np.arange(n_x), indexing="ij")
        base = (i + n1 * j + n1 * n1 * k).ravel()
        stride = np.array([1, n1, n1 * n1])
        tets = []
        for perm in itertools.permutations(range(3)):
            o1 = stride[perm[0]]
            o2 = o1 + stride[perm[1]]
            tets.append(np.column_stack([base, base + o1, base + o2, base + stride.sum()]))
        cells = np.stack(tets, axis=1).reshape(-1, 4)
    centroids = vertices[cells].mean(axis=1)
    inside = np.all((centroids > 0.25 * side) & (centroids < 0.75 * side), axis=1)
    tags = np.where(inside, INTRA, EXTRA)
    mesh = Mesh.from_cells(vertices, cells, tags)
    return mesh


def export_mesh(mesh: Mesh, path) -> None:
    """Write ``mesh`` in the line-oriented ``knpemi-mesh v1`` format."""
    d = mesh.dim
    multi = mesh.n_cell_labels > 1
    lines = [f"knpemi-mesh v1 dim={d}", f"vertices {mesh.n_vertices}"]
    lines.extend(" ".join(repr(float(c)) for c in row) for row in mesh.vertices)
    lines.append(f"cells {mesh.n_cells}")
    for cell, tag, label in zip(mesh.cells.tolist(), mesh.tags.tolist(), mesh.labels.tolist()):
        s = " ".join(str(v) for v in cell) + (" i" if tag == INTRA else " e")
        if multi and tag == INTRA:
            s += f" {label}"
        lines.append(s)
    Path(path).write_text("\n".join(lines) + "\n")


def import_mesh(path, scale: float = 1.0, *, require_extra_boundary: bool = True) -> Mesh:
    """Read a ``knpemi-mesh v1`` file; coordinates are multiplied by ``scale``."""
    text = Path(path).read_text().splitlines()
    it = iter(enumerate(text, start=1))

    def next_line():
        for no, line in it:
            s = line.split("#", 1)[0].strip()
            if s:
                return no, s
        raise MeshFormatError(f"line {len(text)}: unexpected end of file")

    no, header = next_line()
    parts = header.split()
    if len(parts) != 3 or parts[0] != "knpemi-mesh" or parts[1] != "v1" or not parts[2].startswith("dim="):
        raise MeshFormatError(f"line {no}: expected 'knpemi-mesh v1 dim=<d>'")
    try:
        d = int(parts[2][4:])
    except ValueError:
        raise MeshFormatError(f"line {no}: bad dimension {parts[2]!r}") from None
    if d not in (2, 3):
        raise MeshFormatError(f"line {no}: dimension must be 2 or 3")

    def section(name):
        no, s = next_line()
        p = s.split()
        if len(p) != 2 or p[0] != name:
            raise MeshFormatError(f"line {no}: expected '{name} <count>'")
        try:
            return int(p[1])
        except ValueError:
            raise MeshFormatError(f"line {no}: bad count {p[1]!r}") from None

    nv = section("vertices")
    vertices = np.empty((nv, d))
    for i in range(nv):
        no, s = next_line()
        p = s.split()
        if len(p) != d:
            raise MeshFormatError(f"line {no}: expected {d} coordinates")
        try:
            vertices[i] = [float(v) for v in p]
        except ValueError:
            raise MeshFormatError(f"line {no}: bad coordinate") from None
    nc = section("cells")
    cells = np.empty((nc, d + 1), dtype=np.int64)
    tags = np.empty(nc, dtype=np.int8)
    labels = np.zeros(nc, dtype=np.int64)
    for c in range(nc):
        no, s = next_line()
        p = s.split()
        if len(p) not in (d + 2, d + 3):
            raise MeshFormatError(f"line {no}: expected {d + 1} vertex indices, a tag and an optional label")
        try:
            cells[c] = [int(v) for v in p[: d + 1]]
        except ValueError:
            raise MeshFormatError(f"line {no}: bad vertex index") from None
        if p[d + 1] not in ("i", "e"):
            raise MeshFormatError(f"line {no}: tag must be 'i' or 'e', got {p[d + 1]!r}")
        tags[c] = INTRA if p[d + 1] == "i" else EXTRA
        if len(p) == d + 3:
            try:
                labels[c] = int(p[d + 2])
            except ValueError:
                raise MeshFormatError(f"line {no}: bad cell label {p[d + 2]!r}") from None
        else:
            labels[c] = 1 if tags[c] == INTRA else 0
        if np.any(cells[c] < 0) or np.any(cells[c] >= nv):
            raise MeshFormatError(f"line {no}: vertex index out of range")
    mesh = Mesh.from_cells(vertices * scale, cells, tags, labels)
    mesh.validate(require_extra_boundary=require_extra_boundary)
    logger.debug("imported %s: %d vertices, %d cells", path, nv, nc)
    return mesh
