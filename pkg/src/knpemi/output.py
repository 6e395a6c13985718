"""Point probes, CSV logs and legacy-VTK field snapshots."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh import EXTRA, INTRA, barycentric

REGION_NAME = {INTRA: "i", EXTRA: "e"}
PROBE_HEADER = ["t_s", "quantity", "region", "x", "y", "z", "value"]
ITERATION_HEADER = ["step", "t_s", "gmres_iters", "true_residual", "setup_s", "solve_s"]

# VTK quadratic cells list the edge nodes in a different order than the dof map
_VTK_CELL = {(2, 1): (5, None), (3, 1): (10, None), (2, 2): (22, [0, 1, 2, 3, 5, 4]),
             (3, 2): (24, [0, 1, 2, 3, 4, 7, 5, 6, 8, 9])}


def fmt(v) -> str:
    """Shortest round-tripping decimal form of a float."""
    return repr(float(v))


@dataclass(frozen=True)
class Probe:
    """A point sampler resolved to the cell that contains it."""

    x: tuple
    quantities: tuple
    region: int
    cell: int  # index into the region's cell list
    weights: np.ndarray  # basis values at the point

    @classmethod
    def locate(cls, problem, x, quantities=None) -> "Probe":
        mesh = problem.mesh
        x = np.asarray(x, dtype=float)
        if x.shape != (mesh.dim,):
            raise ValueError(f"probe {tuple(x)} does not have {mesh.dim} coordinates")
        cell = mesh.find_cell(x)
        if cell < 0:
            raise ValueError(f"probe {tuple(x)} lies outside the mesh")
        tag = int(mesh.tags[cell])
        reg = problem.dofmap.regions[tag]
        local = int(np.searchsorted(reg.cells, cell))
        lam = barycentric(mesh.vertices, mesh.cells[[cell]], x)[0]
        weights = problem.region[tag].element.eval(lam[None, :])[0]
        names = tuple(s.name for s in problem.species) + ("phi",)
        quantities = names if quantities is None else tuple(quantities)
        for q in quantities:
            if q not in names:
                raise ValueError(f"unknown probe quantity {q!r}; valid: {', '.join(names)}")
        return cls(tuple(float(v) for v in x), quantities, tag, local, weights)

    def sample(self, problem, state) -> list:
        dofs = problem.dofmap.regions[self.region].cell_dofs[self.cell]
        names = [s.name for s in problem.species]
        out = []
        for q in self.quantities:
            values = state.phi[self.region] if q == "phi" else state.c[self.region][names.index(q)]
            out.append((q, float(self.weights @ values[dofs])))
        return out


class ProbeWriter:
    def __init__(self, path, dim: int):
        self.fh = open(path, "w", newline="")
        self.w = csv.writer(self.fh)
        self.w.writerow(PROBE_HEADER)
        self.dim = dim

    def write(self, probe: Probe, t: float, samples) -> None:
        xyz = list(probe.x) + [0.0] * (3 - len(probe.x))
        for q, v in samples:
            self.w.writerow([fmt(t), q, REGION_NAME[probe.region]] + [fmt(c) for c in xyz] + [fmt(v)])

    def close(self):
        self.fh.close()


class IterationLog:
    def __init__(self, path):
        self.fh = open(path, "w", newline="")
        self.w = csv.writer(self.fh)
        self.w.writerow(ITERATION_HEADER)

    def write(self, info) -> None:
        self.w.writerow([info.step, fmt(info.t), info.iterations, fmt(info.true_residual),
                         fmt(info.setup_s), fmt(info.solve_s)])

    def close(self):
        self.fh.close()


def write_solver_stats(path, mode: str, steps) -> None:
    """Per-run solver statistics: mode, iterations, wall times and residual histories."""
    data = {
        "mode": mode,
        "iterations": [int(s.iterations) for s in steps],
        "setup_s": [float(s.setup_s) for s in steps],
        "solve_s": [float(s.solve_s) for s in steps],
        "true_residual": [float(s.true_residual) for s in steps],
        "residual_histories": [[float(r) for r in s.residuals] for s in steps],
    }
    Path(path).write_text(json.dumps(data, indent=1) + "\n")


def write_vtk(path, problem, state, tag: int) -> None:
    """Legacy ASCII unstructured grid of one region with point data per field."""
    dofmap = problem.dofmap
    reg = dofmap.regions[tag]
    d = problem.mesh.dim
    ctype, perm = _VTK_CELL[(d, problem.degree)]
    conn = reg.cell_dofs if perm is None else reg.cell_dofs[:, perm]
    pts = dofmap.coords(tag)
    pts3 = np.zeros((pts.shape[0], 3))
    pts3[:, :d] = pts
    lines = ["# vtk DataFile Version 3.0", f"knpemi region {REGION_NAME[tag]} t={fmt(state.t)}",
             "ASCII", "DATASET UNSTRUCTURED_GRID", f"POINTS {pts3.shape[0]} double"]
    lines += [" ".join(fmt(v) for v in p) for p in pts3]
    nb = conn.shape[1]
    lines.append(f"CELLS {conn.shape[0]} {conn.shape[0] * (nb + 1)}")
    lines += [f"{nb} " + " ".join(str(int(i)) for i in row) for row in conn]
    lines.append(f"CELL_TYPES {conn.shape[0]}")
    lines += [str(ctype)] * conn.shape[0]
    lines.append(f"POINT_DATA {pts3.shape[0]}")
    fields = [(s.name, state.c[tag][k]) for k, s in enumerate(problem.species)] + [("phi", state.phi[tag])]
    for name, values in fields:
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [fmt(v) for v in values]
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk_point_data(path) -> dict:
    """Point-data arrays of a file written by :func:`write_vtk`."""
    lines = Path(path).read_text().splitlines()
    out = {}
    i = 0
    n = None
    while i < len(lines):
        tok = lines[i].split()
        if tok and tok[0] == "POINT_DATA":
            n = int(tok[1])
        elif tok and tok[0] == "SCALARS" and n is not None:
            out[tok[1]] = np.array([float(v) for v in lines[i + 2 : i + 2 + n]])
            i += 2 + n
            continue
        i += 1
    return out
