"""Global block operator, right-hand side and time stepping of the coupled system.

Unknowns are ordered region by region, intracellular first:
``[c_i^1 .. c_i^K, phi_i, c_e^1 .. c_e^K, phi_e]``.  Every block of the global
matrix has a fixed sparsity pattern, so the global CSR structure is built once
and each step only overwrites the values of the time-dependent blocks.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fem.assembly import InterfaceAssembler, RegionAssembler
from .fem.dofmap import DofMap, build_dofmap
from .membrane import (
    GatingState,
    LabelledMembrane,
    MembraneModel,
    PhysicalConstants,
    Stimulus,
    alpha_fractions,
    check_electroneutral,
)
from .mesh import EXTRA, INTRA, Mesh
from .solver import KrylovConfig, KrylovResult, build_p0, direct_solve, fgmres, gmres
from .solver.sparse import CsrMatrix, norm

log = logging.getLogger(__name__)

REGIONS = (INTRA, EXTRA)
SIGN = {INTRA: 1.0, EXTRA: -1.0}
SUFFIX = {INTRA: "i", EXTRA: "e"}


class ConvergenceError(RuntimeError):
    def __init__(self, message, result=None, step=None):
        super().__init__(message)
        self.result = result
        self.step = step


def _other(tag: int) -> int:
    return EXTRA if tag == INTRA else INTRA


@dataclass(frozen=True)
class Layout:
    n_species: int
    n_intra: int
    n_extra: int

    def size_of(self, tag: int) -> int:
        return self.n_intra if tag == INTRA else self.n_extra

    def start(self, tag: int) -> int:
        return 0 if tag == INTRA else (self.n_species + 1) * self.n_intra

    def conc(self, tag: int, k: int) -> slice:
        a = self.start(tag) + k * self.size_of(tag)
        return slice(a, a + self.size_of(tag))

    def phi(self, tag: int) -> slice:
        return self.conc(tag, self.n_species)

    @property
    def size(self) -> int:
        return (self.n_species + 1) * (self.n_intra + self.n_extra)

    def block_slices(self) -> list:
        out = []
        for tag in REGIONS:
            for k in range(self.n_species + 1):
                s = self.conc(tag, k)
                out.append((s.start, s.stop))
        return out


@dataclass
class SimState:
    n: int
    t: float
    c: dict  # tag -> (K, N_r)
    phi: dict  # tag -> (N_r,)
    phi_m: np.ndarray
    gating: GatingState | None = None

    def vector(self, layout: Layout) -> np.ndarray:
        u = np.empty(layout.size)
        for tag in REGIONS:
            for k in range(layout.n_species):
                u[layout.conc(tag, k)] = self.c[tag][k]
            u[layout.phi(tag)] = self.phi[tag]
        return u

    def copy(self) -> "SimState":
        return SimState(
            self.n, self.t,
            {t: v.copy() for t, v in self.c.items()},
            {t: v.copy() for t, v in self.phi.items()},
            self.phi_m.copy(),
            None if self.gating is None else self.gating.copy(),
        )


def membrane_potential(dofmap: DofMap, phi: dict) -> np.ndarray:
    return phi[INTRA][dofmap.regions[INTRA].gamma] - phi[EXTRA][dofmap.regions[EXTRA].gamma]


def unpack(u: np.ndarray, layout: Layout, dofmap: DofMap, n: int, t: float, gating=None) -> SimState:
    c = {tag: np.stack([u[layout.conc(tag, k)] for k in range(layout.n_species)]) for tag in REGIONS}
    phi = {tag: u[layout.phi(tag)].copy() for tag in REGIONS}
    return SimState(n, t, c, phi, membrane_potential(dofmap, phi), gating)


@dataclass(frozen=True)
class BulkSource:
    """Piecewise-constant source ``value`` on a box of one region during ``[t_start, t_end)``."""

    species: str
    region: int
    value: float
    lower: tuple = (-np.inf, -np.inf, -np.inf)
    upper: tuple = (np.inf, np.inf, np.inf)
    t_start: float = 0.0
    t_end: float = np.inf

    def indicator(self, x: np.ndarray) -> np.ndarray:
        d = x.shape[1]
        lo = np.asarray(self.lower[:d])
        hi = np.asarray(self.upper[:d])
        return np.all((x >= lo) & (x <= hi), axis=1).astype(float)

    def active(self, t: float) -> bool:
        return self.t_start <= t < self.t_end


def check_sources(sources, species) -> None:
    """Active sources must carry no net charge at any time and place."""
    z = {s.name: s.z for s in species}
    groups = {}
    for src in sources:
        if src.species not in z:
            raise ValueError(f"source refers to unknown species {src.species!r}")
        key = (src.region, tuple(src.lower), tuple(src.upper), src.t_start, src.t_end)
        groups[key] = groups.get(key, 0.0) + z[src.species] * src.value
    for key, charge in groups.items():
        if abs(charge) > 1e-12:
            raise ValueError(f"bulk sources are not electroneutral on {key}: net charge {charge:g}")


@dataclass(eq=False)
class Problem:
    """Discretised problem: geometry, physics and time grid."""

    mesh: Mesh
    degree: int
    species: tuple
    constants: PhysicalConstants
    membrane: MembraneModel  # or {cell label: MembraneModel}
    dt: float
    n_ode: int = 25
    stimulus: Stimulus | None = None
    sources: tuple = ()
    extra_rhs: object = None  # callable(t_n) -> global vector added to the RHS
    pin_local: int | None = None
    pin_value: object = None  # callable(t_n) -> value of the pinned potential (default 0)
    drift: bool = True

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("time step must be positive")
        if self.n_ode < 1:
            raise ValueError("number of ODE substeps must be >= 1")
        self.K = len(self.species)
        self.z = np.array([s.z for s in self.species], dtype=float)
        self.dofmap = build_dofmap(self.mesh, self.degree)
        self.layout = Layout(self.K, self.dofmap.n_intra, self.dofmap.n_extra)
        self.region = {tag: RegionAssembler(self.dofmap, tag) for tag in REGIONS}
        self.interface = InterfaceAssembler(self.dofmap)
        self.mass = {tag: self.region[tag].mass() for tag in REGIONS}
        self.stiff = {tag: self.region[tag].stiffness() for tag in REGIONS}
        self.gamma_mass = self.interface.gamma_matrix()
        self.D = {tag: np.array([s.D(tag == INTRA) for s in self.species]) for tag in REGIONS}
        self.pin_local = choose_pin(self.dofmap) if self.pin_local is None else int(self.pin_local)
        if self.pin_local in set(self.dofmap.regions[EXTRA].gamma.tolist()):
            raise ValueError("pinned potential dof lies on the membrane")
        self.pin = self.layout.phi(EXTRA).start + self.pin_local
        self.node_labels = membrane_node_labels(self.mesh, self.dofmap)
        if isinstance(self.membrane, dict):
            self.membrane = LabelledMembrane(self.membrane, self.node_labels)
        self._source_loads = [
            (src, self.region[src.region].load(lambda x, t, s=src: s.indicator(x), degree=2 * self.degree))
            for src in self.sources
        ]
        check_sources(self.sources, self.species)

    @property
    def size(self) -> int:
        return self.layout.size

    def tau(self, tag):
        return self.dt * self.D[tag]

    def tau_tilde(self, tag):
        if not self.drift:
            return np.zeros(self.K)
        return self.tau(tag) * self.z / self.constants.psi

    def initial_state(self, phi_m0: float | None = None) -> SimState:
        phi_m0 = self.constants.phi_m0 if phi_m0 is None else phi_m0
        c = {}
        for tag in REGIONS:
            n = self.layout.size_of(tag)
            c[tag] = np.stack([np.full(n, s.c_i0 if tag == INTRA else s.c_e0) for s in self.species])
        phi = {INTRA: np.full(self.layout.n_intra, phi_m0), EXTRA: np.zeros(self.layout.n_extra)}
        gating = self.membrane.initial_gating(self.dofmap.n_gamma)
        state = SimState(0, 0.0, c, phi, membrane_potential(self.dofmap, phi), gating)
        self.membrane.freeze_reference(c[INTRA][:, self.dofmap.regions[INTRA].gamma],
                                       c[EXTRA][:, self.dofmap.regions[EXTRA].gamma])
        return state

    def membrane_concentrations(self, state: SimState):
        gi = self.dofmap.regions[INTRA].gamma
        ge = self.dofmap.regions[EXTRA].gamma
        return state.c[INTRA][:, gi], state.c[EXTRA][:, ge]

    def stimulus_at(self, t: float) -> np.ndarray:
        if self.stimulus is None:
            return np.zeros(self.dofmap.n_gamma)
        from .membrane import stimulus_value

        return stimulus_value(self.stimulus, self.dofmap.gamma_coords(), t, self.node_labels)

    def channel_currents(self, state: SimState, gating, t: float) -> np.ndarray:
        ci, ce = self.membrane_concentrations(state)
        return self.membrane.currents(state.phi_m, ci, ce, gating, self.stimulus_at(t))


def choose_pin(dofmap: DofMap) -> int:
    """Smallest extracellular dof that is not on the membrane."""
    on_gamma = np.zeros(dofmap.n_extra, dtype=bool)
    on_gamma[dofmap.regions[EXTRA].gamma] = True
    free = np.flatnonzero(~on_gamma)
    if free.size == 0:
        raise ValueError("the extracellular region has only membrane dofs; cannot pin the potential")
    return int(free[0])


def membrane_node_labels(mesh: Mesh, dofmap: DofMap) -> np.ndarray:
    """Cell label of each membrane node (from the lowest-index facet containing it)."""
    labels = np.zeros(dofmap.n_gamma, dtype=np.int64)
    seen = np.zeros(dofmap.n_gamma, dtype=bool)
    fl = mesh.interface_labels
    for f in range(dofmap.facet_gamma.shape[0]):
        for g in dofmap.facet_gamma[f]:
            if not seen[g]:
                labels[g] = fl[f]
                seen[g] = True
    return labels


def _pattern_coo(A: sp.csr_matrix):
    A = sp.csr_matrix(A)
    rows = np.repeat(np.arange(A.shape[0], dtype=np.int64), np.diff(A.indptr))
    return rows, A.indices.astype(np.int64)


@dataclass(eq=False)
class _Block:
    name: str
    rows: np.ndarray  # global row of each entry
    cols: np.ndarray
    pos: np.ndarray | None = None


class BlockSystem:
    """The global operator with a fixed pattern and per-block value refresh."""

    def __init__(self, problem: Problem):
        self.problem = problem
        P = problem
        L = P.layout
        self.layout = L
        self.blocks = {}
        self._gamma_rows, self._gamma_cols = _pattern_coo(P.gamma_mass)
        for tag in REGIONS:
            q = _other(tag)
            S_rows, S_cols = _pattern_coo(P.mass[tag])
            gr = P.dofmap.regions[tag].gamma
            gq = P.dofmap.regions[q].gamma
            G_rows, G_cols = gr[self._gamma_rows], gq[self._gamma_cols]
            phi_r, phi_q = L.phi(tag).start, L.phi(q).start
            for k in range(P.K):
                ck = L.conc(tag, k).start
                self._add(("cc", tag, k), ck + S_rows, ck + S_cols)
                self._add(("cp", tag, k), ck + S_rows, phi_r + S_cols)
                self._add(("cq", tag, k), ck + G_rows, phi_q + G_cols)
                self._add(("pc", tag, k), phi_r + S_rows, ck + S_cols)
            self._add(("pp", tag), phi_r + S_rows, phi_r + S_cols)
            self._add(("pq", tag), phi_r + G_rows, phi_q + G_cols)
            # membrane-pattern entries inside the region pattern
            self.blocks[("gpos", tag)] = P.region[tag].pattern.positions(gr[self._gamma_rows], gr[self._gamma_cols])
        entries = [b for b in self.blocks.values() if isinstance(b, _Block)]
        N = L.size
        keys = np.concatenate([b.rows * N + b.cols for b in entries])
        order = np.argsort(keys, kind="stable")
        skeys = keys[order]
        if np.any(skeys[1:] == skeys[:-1]):
            raise AssertionError("overlapping blocks in the global pattern")
        inv = np.empty_like(order)
        inv[order] = np.arange(order.size)
        start = 0
        for b in entries:
            b.pos = inv[start : start + b.rows.size]
            start += b.rows.size
        rows = skeys // N
        indptr = np.zeros(N + 1, dtype=np.int64)
        indptr[1:] = np.cumsum(np.bincount(rows, minlength=N))
        self.indptr = indptr
        self.indices = (skeys % N).astype(np.int64)
        self.data = np.zeros(self.indices.size)
        self._set_static()
        row = slice(indptr[P.pin], indptr[P.pin + 1])
        self._pin_row = row
        self._pin_diag = row.start + int(np.searchsorted(self.indices[row], P.pin))
        self.pinned = False

    def _add(self, key, rows, cols):
        self.blocks[key] = _Block(str(key), np.asarray(rows, np.int64), np.asarray(cols, np.int64))

    def _set(self, key, values):
        self.data[self.blocks[key].pos] = values

    def _set_static(self):
        P = self.problem
        Cm_F = P.constants.C_m / P.constants.F
        for tag in REGIONS:
            tau = P.tau(tag)
            for k in range(P.K):
                self._set(("cc", tag, k), P.mass[tag].data + tau[k] * P.stiff[tag].data)
                self._set(("pc", tag, k), P.z[k] * tau[k] * P.stiff[tag].data)
            self._set(("pq", tag), -Cm_F * P.gamma_mass.data)

    def refresh(self, state: SimState) -> None:
        """Rewrite the concentration-dependent blocks from ``state`` (time n-1)."""
        P = self.problem
        Cm, F = P.constants.C_m, P.constants.F
        for tag in REGIONS:
            ra = P.region[tag]
            gr = P.dofmap.regions[tag].gamma
            tt = P.tau_tilde(tag)
            c = state.c[tag]
            alpha = alpha_fractions(P.D[tag], P.z, c[:, gr])
            gpos = self.blocks[("gpos", tag)]
            pp = np.zeros(ra.pattern.nnz)
            for k in range(P.K):
                Ak = ra.pattern.matrix(ra.weighted_stiffness_local(c[k])).data if tt[k] != 0 else 0.0
                Ga = P.interface.pattern.matrix(P.interface.local(alpha[k])).data
                Ck = Cm / (F * P.z[k])
                cp = tt[k] * Ak + np.zeros(ra.pattern.nnz)
                cp[gpos] += Ck * Ga
                self._set(("cp", tag, k), cp)
                self._set(("cq", tag, k), -Ck * Ga)
                pp += P.z[k] * tt[k] * Ak
            pp[gpos] += Cm / F * P.gamma_mass.data
            self._set(("pp", tag), pp)
        self._set_static_pin_row()

    def _set_static_pin_row(self):
        # restore the row values that a previous pin may have overwritten
        P = self.problem
        Cm_F = P.constants.C_m / P.constants.F
        tag = EXTRA
        tau = P.tau(tag)
        for k in range(P.K):
            self._set(("pc", tag, k), P.z[k] * tau[k] * P.stiff[tag].data)
        self._set(("pq", tag), -Cm_F * P.gamma_mass.data)
        self.pinned = False

    def pin(self) -> None:
        self.data[self._pin_row] = 0.0
        self.data[self._pin_diag] = 1.0
        self.pinned = True

    def matrix(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.data.copy(), self.indices, self.indptr), shape=(self.layout.size,) * 2)

    def operator(self) -> CsrMatrix:
        return CsrMatrix(self.matrix())

    def block(self, row_slice: slice, col_slice: slice) -> sp.csr_matrix:
        return self.matrix()[row_slice, col_slice]

    def rhs(self, state: SimState, currents: np.ndarray, t_n: float) -> np.ndarray:
        """Right-hand side for the step ending at ``t_n`` from the state at n-1."""
        P = self.problem
        L = self.layout
        Cm, F, dt = P.constants.C_m, P.constants.F, P.dt
        f = np.zeros(L.size)
        MG = P.gamma_mass
        I_load = np.stack([MG @ currents[k] for k in range(P.K)])
        phi_load = MG @ state.phi_m
        for tag in REGIONS:
            s = SIGN[tag]
            gr = P.dofmap.regions[tag].gamma
            alpha = alpha_fractions(P.D[tag], P.z, state.c[tag][:, gr])
            for k in range(P.K):
                sl = L.conc(tag, k)
                fk = P.mass[tag] @ state.c[tag][k]
                Ga = P.interface.pattern.wrap(P.interface.pattern.matrix(P.interface.local(alpha[k])).data)
                fk[gr] += -s * dt / (F * P.z[k]) * I_load[k] + s * Cm / (F * P.z[k]) * (Ga @ state.phi_m)
                f[sl] = fk
            fp = np.zeros(L.size_of(tag))
            fp[gr] = -s / F * (dt * I_load.sum(axis=0) - Cm * phi_load)
            f[L.phi(tag)] = fp
        for src, load in P._source_loads:
            if src.active(t_n):
                k = [s.name for s in P.species].index(src.species)
                f[L.conc(src.region, k)] += src.value * load
        if P.extra_rhs is not None:
            f += P.extra_rhs(t_n)
        return f

    def pin_rhs(self, f: np.ndarray, t_n: float | None = None) -> None:
        pv = self.problem.pin_value
        f[self.problem.pin] = 0.0 if pv is None or t_n is None else float(pv(t_n))


def assemble_operator(system: BlockSystem, state: SimState) -> BlockSystem:
    system.refresh(state)
    return system


def assemble_rhs(system: BlockSystem, state: SimState, currents, t_n: float) -> np.ndarray:
    return system.rhs(state, currents, t_n)


def pin_potential(system: BlockSystem, rhs: np.ndarray, t_n: float | None = None) -> None:
    system.pin()
    system.pin_rhs(rhs, t_n)


def block_names(problem: Problem) -> list:
    names = []
    for tag in REGIONS:
        names += [f"{s.name}_{SUFFIX[tag]}" for s in problem.species] + [f"phi_{SUFFIX[tag]}"]
    return names


@dataclass(frozen=True)
class SolverSettings:
    precond: str = "amg_monolithic"
    krylov: KrylovConfig = KrylovConfig()
    theta: float | None = None  # None: 0.25 in 2D, 0.5 in 3D
    freeze: bool = True
    inner_tol: float = 1e-8
    raise_on_failure: bool = True
    method: str = "gmres"  # or "direct": sparse LU of the whole operator

    def __post_init__(self):
        if self.method not in ("gmres", "direct"):
            raise ValueError(f"unknown solve method {self.method!r}")

    def strength(self, dim: int) -> float:
        if self.theta is not None:
            return self.theta
        return 0.25 if dim == 2 else 0.5


@dataclass
class StepInfo:
    step: int
    t: float
    iterations: int
    converged: bool
    true_residual: float
    setup_s: float
    solve_s: float
    residuals: list = field(default_factory=list)


class Stepper:
    """Advances a problem in time with a (frozen) block preconditioner."""

    def __init__(self, problem: Problem, settings: SolverSettings = SolverSettings()):
        self.problem = problem
        self.settings = settings
        self.system = BlockSystem(problem)
        self.precond = None

    def build_preconditioner(self):
        s = self.settings
        return build_p0(
            self.system.matrix(),
            self.problem.layout.block_slices(),
            block_names(self.problem),
            self.problem.pin,
            mode=s.precond,
            theta=s.strength(self.problem.mesh.dim),
            inner_tol=s.inner_tol,
        )

    def step(self, state: SimState) -> tuple[SimState, StepInfo]:
        P = self.problem
        n = state.n + 1
        t_n = n * P.dt
        t0 = time.perf_counter()
        gating = P.membrane.advance(state.gating, state.phi_m, P.dt, P.n_ode)
        currents = P.channel_currents(state, gating, state.t)
        for tag in REGIONS:
            cmin = state.c[tag].min()
            if cmin < 0:
                log.warning("step %d: negative concentration %.3e in region %s", n, cmin, SUFFIX[tag])
        self.system.refresh(state)
        f = self.system.rhs(state, currents, t_n)
        pin_potential(self.system, f, t_n)
        A = self.system.operator()
        if self.settings.method == "direct":
            setup = time.perf_counter() - t0
            t1 = time.perf_counter()
            x = direct_solve(A.to_scipy(), f)
            res = KrylovResult(x, 0, True, [0.0])
        else:
            if self.precond is None or not self.settings.freeze:
                self.precond = self.build_preconditioner()
            setup = time.perf_counter() - t0
            t1 = time.perf_counter()
            x0 = state.vector(P.layout)
            x0[P.pin] = f[P.pin]
            M = None if self.settings.precond == "none" else self.precond
            solve = fgmres if self.precond.flexible else gmres
            res = solve(A, f, x0=x0, precond=M, config=self.settings.krylov)
        solve_s = time.perf_counter() - t1
        fn = norm(f)
        true_res = norm(A.residual(res.x, f)) / fn if fn > 0 else 0.0
        info = StepInfo(n, t_n, res.iterations, res.converged, true_res, setup, solve_s, res.residuals)
        if not res.converged and self.settings.raise_on_failure:
            raise ConvergenceError(
                f"step {n}: GMRES did not converge in {res.iterations} iterations "
                f"(last relative residual {res.residuals[-1]:.3e})",
                result=res, step=n,
            )
        new = unpack(res.x, P.layout, P.dofmap, n, t_n, gating)
        return new, info


def time_step(stepper: Stepper, state: SimState):
    return stepper.step(state)


def quadrature_values(problem: Problem, tag: int, values: np.ndarray, degree: int | None = None):
    """FE field and exact-geometry data at quadrature points of region ``tag``.

    Returns ``(x, u, weights)`` with ``x`` (e, q, d), ``u`` (e, q) and
    ``weights`` (e, q) already scaled by the cell measure.
    """
    from .fem.quadrature import simplex_rule

    ra = problem.region[tag]
    mesh = problem.mesh
    q, w = simplex_rule(mesh.dim, degree or 2 * problem.degree + 2)
    phi = ra.element.eval(q)
    X = mesh.vertices[mesh.cells[ra.region.cells]]
    xq = np.einsum("qv,evd->eqd", q, X)
    uq = np.asarray(values)[ra.region.cell_dofs] @ phi.T
    return xq, uq, ra.measure[:, None] * w[None, :]


def electroneutrality_defect(problem: Problem, state: SimState) -> float:
    """``max_r |int_r sum_k z_k c_k| / |Omega_r|`` in mol/m^3."""
    worst = 0.0
    for tag in REGIONS:
        charge = (problem.z[:, None] * state.c[tag]).sum(axis=0)
        total = problem.mass[tag].sum(axis=0).A1 @ charge
        worst = max(worst, abs(total) / problem.mesh.region_volume(tag))
    return worst


def validate_problem(problem: Problem) -> None:
    check_electroneutral(problem.species)


@dataclass
class SimulationOutputs:
    initial: SimState
    final: SimState
    steps: list  # StepInfo per step
    probes: list  # (t, quantity, region, x, value)
    phi_m_trace: list  # (t, mean membrane potential)
    files: dict = field(default_factory=dict)

    @property
    def iterations(self) -> list:
        return [s.iterations for s in self.steps]


def run_simulation(problem: Problem, settings: SolverSettings, n_steps: int, probes=(), out_dir=None,
                   snapshot_every: int = 10, snapshot_steps=None) -> SimulationOutputs:
    """Advance ``n_steps`` steps, recording probes, solver statistics and snapshots.

    ``probes`` is a sequence of ``(x, quantities)`` pairs (``quantities`` may be
    ``None`` for all fields).  Files are written only when ``out_dir`` is given;
    ``snapshot_every = 0`` disables snapshots.
    """
    from pathlib import Path

    from .output import IterationLog, Probe, ProbeWriter, write_solver_stats, write_vtk

    if n_steps < 0:
        raise ValueError("number of steps must be >= 0")
    located = [Probe.locate(problem, x, q) for x, q in probes]
    stepper = Stepper(problem, settings)
    state = problem.initial_state()
    initial = state.copy()
    files = {}
    writers = []
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files["probes"] = out / "probes.csv"
        files["iterations"] = out / "iterations.csv"
        files["solver_stats"] = out / "solver_stats.json"
        pw = ProbeWriter(files["probes"], problem.mesh.dim)
        il = IterationLog(files["iterations"])
        writers = [pw, il]
        files["snapshots"] = []

    def want_snapshot(n):
        if snapshot_steps is not None:
            return n in snapshot_steps
        return snapshot_every > 0 and n % snapshot_every == 0

    records, trace, steps = [], [], []

    def record(st):
        trace.append((st.t, float(st.phi_m.mean())))
        for p in located:
            samples = p.sample(problem, st)
            for q, v in samples:
                records.append((st.t, q, SUFFIX[p.region], p.x, v))
            if writers:
                writers[0].write(p, st.t, samples)
        if writers and want_snapshot(st.n):
            for tag in REGIONS:
                path = Path(out_dir) / f"snapshot_{SUFFIX[tag]}_{st.n:05d}.vtk"
                write_vtk(path, problem, st, tag)
                files["snapshots"].append(path)

    try:
        record(state)
        for _ in range(n_steps):
            state, info = stepper.step(state)
            steps.append(info)
            if writers:
                writers[1].write(info)
            record(state)
    finally:
        for w in writers:
            w.close()
        if writers:
            write_solver_stats(files["solver_stats"], settings.precond if settings.method == "gmres" else "direct",
                               steps)
    return SimulationOutputs(initial, state, steps, records, trace, files)
