"""Physical invariant diagnostics and the iterative-versus-direct comparison."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..system import Problem, SimState, SolverSettings, Stepper, electroneutrality_defect


def check_electroneutrality(problem: Problem, state: SimState) -> float:
    """``max_r |int_r sum_k z_k c_k| / |Omega_r|`` in mol/m^3."""
    return electroneutrality_defect(problem, state)


@dataclass
class CrossSolverReport:
    discrepancies: list = field(default_factory=list)  # per step
    iterations: list = field(default_factory=list)
    pin_gmres: int = -1
    pin_direct: int = -1
    threshold: float = 1e-5

    @property
    def pins_match(self) -> bool:
        return self.pin_gmres == self.pin_direct

    @property
    def max_discrepancy(self) -> float:
        return max(self.discrepancies, default=0.0)

    @property
    def ok(self) -> bool:
        return self.pins_match and self.max_discrepancy <= self.threshold

    def summary(self) -> str:
        if not self.pins_match:
            return f"pin mismatch: gmres pins dof {self.pin_gmres}, direct pins dof {self.pin_direct}"
        return f"max relative discrepancy {self.max_discrepancy:.3e} over {len(self.discrepancies)} steps"


def cross_solver_check(make_problem, n_steps: int, settings: SolverSettings = SolverSettings(),
                       threshold: float = 1e-5, direct_problem=None) -> CrossSolverReport:
    """Per-step comparison of GMRES against a sparse direct solve.

    The trajectory is advanced with the direct solver; at every step GMRES solves
    the same linear system (same previous state) so the reported discrepancies
    do not accumulate.  ``make_problem()`` builds a fresh problem for each
    solver (membrane models keep reference state).  ``direct_problem``
    overrides the problem of the direct run, which is how mismatched pins are
    exercised.
    """
    p_it = make_problem()
    p_lu = direct_problem if direct_problem is not None else make_problem()
    report = CrossSolverReport(pin_gmres=p_it.pin, pin_direct=p_lu.pin, threshold=threshold)
    if not report.pins_match:
        return report
    it = Stepper(p_it, replace(settings, method="gmres"))
    lu = Stepper(p_lu, replace(settings, method="direct"))
    p_it.initial_state()
    s_lu = p_lu.initial_state()
    for _ in range(n_steps):
        s_it, info = it.step(s_lu)
        s_lu, _ = lu.step(s_lu)
        u_it = s_it.vector(p_it.layout)
        u_lu = s_lu.vector(p_lu.layout)
        report.discrepancies.append(float(np.linalg.norm(u_it - u_lu) / np.linalg.norm(u_lu)))
        report.iterations.append(info.iterations)
    return report
