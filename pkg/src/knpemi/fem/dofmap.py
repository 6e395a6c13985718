"""Per-region Lagrange degree-of-freedom numbering with duplicated membrane nodes."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from ..mesh import EXTRA, INTRA, Mesh

REGIONS = (INTRA, EXTRA)


@dataclass(eq=False)
class RegionDofs:
    tag: int
    cells: np.ndarray  # mesh cell indices belonging to the region
    nodes: np.ndarray  # sorted global node ids
    cell_dofs: np.ndarray  # (n_cells_r, n_basis) local dof ids
    gamma: np.ndarray  # local dof of each membrane node (membrane order)
    node_to_dof: np.ndarray = field(repr=False)  # global node -> local dof or -1

    @property
    def size(self) -> int:
        return int(self.nodes.size)


@dataclass(eq=False)
class DofMap:
    """Continuous Lagrange numbering of each region.

    Global "nodes" are mesh vertices followed (degree 2) by mesh edges.  Each
    region numbers the nodes it touches in increasing node order, so nodes on
    the membrane receive one dof in each region; ``regions[r].gamma[j]`` is the
    local dof of membrane node ``gamma_nodes[j]`` in region ``r``, giving the
    bijection between the two interface index sets.
    """

    mesh: Mesh
    degree: int
    node_coords: np.ndarray
    cell_nodes: np.ndarray
    regions: dict
    gamma_nodes: np.ndarray
    facet_gamma: np.ndarray  # (n_iface_facets, n_facet_basis) membrane node indices
    boundary_facet_dofs: np.ndarray  # (n_bnd_facets, n_facet_basis) extra-region dofs

    @property
    def n_intra(self) -> int:
        return self.regions[INTRA].size

    @property
    def n_extra(self) -> int:
        return self.regions[EXTRA].size

    @property
    def n_gamma(self) -> int:
        return int(self.gamma_nodes.size)

    def global_size(self, n_species: int) -> int:
        return (self.n_intra + self.n_extra) * (n_species + 1)

    def coords(self, tag: int) -> np.ndarray:
        return self.node_coords[self.regions[tag].nodes]

    def gamma_coords(self) -> np.ndarray:
        return self.node_coords[self.gamma_nodes]


def _edge_ids(pairs: np.ndarray, edge_keys: np.ndarray, n_vertices: int) -> np.ndarray:
    p = np.sort(pairs, axis=-1)
    keys = p[..., 0] * n_vertices + p[..., 1]
    idx = np.searchsorted(edge_keys, keys)
    if np.any(edge_keys[np.minimum(idx, len(edge_keys) - 1)] != keys):
        raise ValueError("facet edge not present in the cell edge set")
    return idx


def _facet_nodes(facets: np.ndarray, degree: int, edge_keys, n_vertices: int) -> np.ndarray:
    if degree == 1:
        return facets.copy()
    local = list(combinations(range(facets.shape[1]), 2))
    pairs = np.stack([facets[:, [a, b]] for a, b in local], axis=1)
    return np.concatenate([facets, n_vertices + _edge_ids(pairs, edge_keys, n_vertices)], axis=1)


def build_dofmap(mesh: Mesh, degree: int) -> DofMap:
    """Number the Lagrange dofs of degree ``degree`` (1 or 2) in each region."""
    if degree not in (1, 2):
        raise ValueError(f"unsupported polynomial degree {degree}; expected 1 or 2")
    nv = mesh.n_vertices
    cells = mesh.cells
    edge_keys = np.empty(0, dtype=np.int64)
    if degree == 1:
        cell_nodes = cells.copy()
        node_coords = mesh.vertices
    else:
        local = list(combinations(range(cells.shape[1]), 2))
        pairs = np.sort(np.stack([cells[:, [a, b]] for a, b in local], axis=1), axis=-1)
        keys = pairs[..., 0] * nv + pairs[..., 1]
        edge_keys, inv = np.unique(keys.ravel(), return_inverse=True)
        cell_nodes = np.concatenate([cells, nv + inv.reshape(keys.shape)], axis=1)
        ev = np.column_stack([edge_keys // nv, edge_keys % nv])
        node_coords = np.vstack([mesh.vertices, 0.5 * (mesh.vertices[ev[:, 0]] + mesh.vertices[ev[:, 1]])])
    n_nodes = node_coords.shape[0]

    iface_nodes = _facet_nodes(mesh.interface_facets, degree, edge_keys, nv)
    gamma_nodes, facet_gamma = np.unique(iface_nodes, return_inverse=True)
    facet_gamma = facet_gamma.reshape(iface_nodes.shape)

    regions = {}
    for tag in REGIONS:
        rc = np.flatnonzero(mesh.tags == tag)
        nodes = np.unique(cell_nodes[rc])
        n2d = np.full(n_nodes, -1, dtype=np.int64)
        n2d[nodes] = np.arange(nodes.size)
        gamma = n2d[gamma_nodes]
        if np.any(gamma < 0):
            raise ValueError("membrane node missing from a region")
        regions[tag] = RegionDofs(tag, rc, nodes, n2d[cell_nodes[rc]], gamma, n2d)

    bnd_nodes = _facet_nodes(mesh.boundary_facets, degree, edge_keys, nv)
    bnd_dofs = regions[EXTRA].node_to_dof[bnd_nodes] if len(bnd_nodes) else bnd_nodes
    return DofMap(
        mesh=mesh,
        degree=degree,
        node_coords=node_coords,
        cell_nodes=cell_nodes,
        regions=regions,
        gamma_nodes=gamma_nodes,
        facet_gamma=facet_gamma,
        boundary_facet_dofs=bnd_dofs,
    )
