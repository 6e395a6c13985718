"""The verification suites behind ``knpemi verify``."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..membrane import MembraneModel, PhysicalConstants, Stimulus, default_species
from ..mesh import INTRA, build_model_a_mesh
from ..solver import KrylovConfig
from ..system import BlockSystem, Problem, SolverSettings, Stepper, membrane_potential
from .checks import check_electroneutrality, cross_solver_check
from .mms import constant_case, run_mms
from .oracle import compare_entrywise, dense_oracle_assemble

ORACLE_TOL = 1e-12
RATE_WINDOW = 0.3
MMS_LEVELS = {1: (8, 16, 32, 64), 2: (8, 16, 32)}
CROSS_THRESHOLD = 1e-4
ELECTRONEUTRALITY_TOL = 1e-3


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def model_a_problem(n_x, dim=2, degree=1, dt=5e-5, stimulus=True, membrane="hh", **kw) -> Problem:
    species = default_species()
    C = PhysicalConstants()
    return Problem(build_model_a_mesh(n_x, dim), degree, species, C, MembraneModel(membrane, species, C), dt=dt,
                   stimulus=Stimulus() if stimulus else None, **kw)


def perturbed_state(problem: Problem, seed: int = 0):
    """Initial state with small deterministic perturbations so every block is generic."""
    rng = np.random.default_rng(seed)
    s = problem.initial_state()
    for tag in s.c:
        s.c[tag] *= 1 + 0.1 * rng.random(s.c[tag].shape)
        s.phi[tag] = s.phi[tag] + 0.01 * rng.random(s.phi[tag].shape)
    s.phi_m = membrane_potential(problem.dofmap, s.phi)
    return s


def oracle_discrepancy(problem: Problem, seed: int = 0) -> tuple[float, float]:
    """Entrywise relative difference of the sparse operator and RHS against the dense oracle."""
    s = perturbed_state(problem, seed)
    gating = problem.membrane.advance(s.gating, s.phi_m, problem.dt, problem.n_ode)
    currents = problem.channel_currents(s, gating, 0.0)
    system = BlockSystem(problem)
    system.refresh(s)
    f = system.rhs(s, currents, problem.dt)
    A_ref, f_ref = dense_oracle_assemble(problem, s, currents)
    slices = problem.layout.block_slices()
    return compare_entrywise(system.matrix(), A_ref, slices), compare_entrywise(f, f_ref, slices)


def oracle_suite() -> SuiteResult:
    worst = 0.0
    parts = []
    for dim in (2, 3):
        for degree in (1, 2):
            for stim in (False, True):
                dA, df = oracle_discrepancy(model_a_problem(4, dim, degree, dt=1e-4, stimulus=stim))
                worst = max(worst, dA, df)
                parts.append(f"d={dim} p={degree} stim={int(stim)}: {max(dA, df):.1e}")
    ok = worst <= ORACLE_TOL
    return SuiteResult("oracle", ok, f"max relative difference {worst:.2e} (limit {ORACLE_TOL:g}); " + ", ".join(parts))


def mms_suite() -> SuiteResult:
    ok = True
    parts = []
    for degree, levels in MMS_LEVELS.items():
        rows = run_mms(degree, levels)
        last = [r for r in rows if r[0] == len(levels) - 1]
        rates = {q: r for _, _, _, q, _, r in last}
        lo, hi = min(rates.values()), max(rates.values())
        good = abs(lo - (degree + 1)) <= RATE_WINDOW and abs(hi - (degree + 1)) <= RATE_WINDOW
        ok &= good
        parts.append(f"p={degree} rates " + " ".join(f"{q}={r:.2f}" for q, r in rates.items()))
    case = constant_case()
    rows = run_mms(1, (8, 16), case=case)
    worst = max(e for *_, e, _ in rows)
    ok &= worst <= 1e-10
    parts.append(f"constant fields reproduced to {worst:.1e}")
    return SuiteResult("mms", ok, "; ".join(parts))


def cross_suite() -> SuiteResult:
    report = cross_solver_check(lambda: model_a_problem(16), 5, SolverSettings(krylov=KrylovConfig(tol=1e-6)),
                                threshold=CROSS_THRESHOLD)
    return SuiteResult("cross-solver", report.ok, report.summary() + f" (limit {CROSS_THRESHOLD:g})")


def invariants_suite() -> SuiteResult:
    ok = True
    parts = []
    p64 = model_a_problem(64, stimulus=False, membrane="none")
    good = p64.size == 17412
    ok &= good
    parts.append(f"N(model_a 64, p=1) = {p64.size}")

    problem = model_a_problem(32)
    s0 = problem.initial_state()
    d0 = check_electroneutrality(problem, s0)
    ok &= d0 <= 1e-12
    bumped = s0.copy()
    bumped.c[INTRA][0] += 1.0
    d1 = check_electroneutrality(problem, bumped)
    ok &= abs(d1 - 1.0) <= 1e-10
    stepper = Stepper(problem, SolverSettings())
    s = s0
    for _ in range(10):
        s, _info = stepper.step(s)
    d10 = check_electroneutrality(problem, s)
    ok &= d10 <= ELECTRONEUTRALITY_TOL
    parts.append(f"electroneutrality initial {d0:.1e}, perturbed {d1:.3f}, after 10 steps {d10:.1e}")
    return SuiteResult("invariants", ok, "; ".join(parts))


SUITES = {"oracle": oracle_suite, "mms": mms_suite, "cross": cross_suite, "invariants": invariants_suite}


def run_suites(names=tuple(SUITES)) -> list[SuiteResult]:
    out = []
    for name in names:
        if name not in SUITES:
            out.append(SuiteResult(name, False, f"unknown suite (valid: {', '.join(SUITES)})"))
            continue
        t0 = time.perf_counter()
        try:
            res = SUITES[name]()
        except Exception as exc:  # a crashing suite is a failing suite
            res = SuiteResult(name, False, f"{type(exc).__name__}: {exc}")
        res.seconds = time.perf_counter() - t0
        out.append(res)
    return out

