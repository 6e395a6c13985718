"""Manufactured-solution convergence studies in two dimensions.

The manufactured fields are inserted into the time-discrete scheme itself:
the time derivative is replaced by the backward difference over the step and
the drift coefficient and capacitive fractions are taken at the previous time,
exactly as the solver treats them.  Every source term (bulk, membrane and
outer boundary) is derived symbolically, so the only error left in one step is
the spatial discretisation error.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import sympy

from ..fem.assembly import boundary_load
from ..membrane import IonSpecies, MembraneModel, PhysicalConstants
from ..mesh import EXTRA, INTRA, build_model_a_mesh
from ..system import (
    REGIONS,
    SIGN,
    SUFFIX,
    Problem,
    SimState,
    SolverSettings,
    Stepper,
    membrane_potential,
    quadrature_values,
)
from ..solver import KrylovConfig

X, Y, T, TP = sympy.symbols("x y t t_prev", real=True)


@dataclass(eq=False)
class MmsCase:
    """Closed-form concentrations and potentials on the unit square.

    ``conc[tag][k]`` and ``phi[tag]`` are sympy expressions in ``x, y, t``.
    """

    species: tuple
    constants: PhysicalConstants
    conc: dict
    phi: dict
    name: str = "mms"
    _compiled: dict = field(default=None, repr=False)

    def __post_init__(self):
        for tag in REGIONS:
            charge = sympy.simplify(sum(s.z * c for s, c in zip(self.species, self.conc[tag])))
            if charge != 0:
                raise ValueError(f"manufactured concentrations carry net charge {charge} in region {SUFFIX[tag]}")
        self._compile()

    def _compile(self):
        C = self.constants
        psi = C.R * C.T / C.F
        lam = {}
        for tag in REGIONS:
            D = [s.D(tag == INTRA) for s in self.species]
            z = [s.z for s in self.species]
            phi = self.phi[tag]
            fluxes = []
            for k, c in enumerate(self.conc[tag]):
                c_prev = c.subs(T, TP)
                Jx = -D[k] * sympy.diff(c, X) - D[k] * z[k] * c_prev / psi * sympy.diff(phi, X)
                Jy = -D[k] * sympy.diff(c, Y) - D[k] * z[k] * c_prev / psi * sympy.diff(phi, Y)
                fluxes.append((Jx, Jy))
                bulk = (c - c_prev) / (T - TP) + sympy.diff(Jx, X) + sympy.diff(Jy, Y)
                lam[("bulk", tag, k)] = sympy.lambdify((X, Y, T, TP), bulk, "numpy")
                lam[("flux", tag, k)] = sympy.lambdify((X, Y, T, TP), [Jx, Jy], "numpy")
                lam[("c", tag, k)] = sympy.lambdify((X, Y, T), c, "numpy")
            Qx = sum(z[k] * fluxes[k][0] for k in range(len(z)))
            Qy = sum(z[k] * fluxes[k][1] for k in range(len(z)))
            lam[("bulk", tag, "phi")] = sympy.lambdify((X, Y, T, TP), sympy.diff(Qx, X) + sympy.diff(Qy, Y), "numpy")
            lam[("flux", tag, "phi")] = sympy.lambdify((X, Y, T, TP), [Qx, Qy], "numpy")
            lam[("phi", tag)] = sympy.lambdify((X, Y, T), phi, "numpy")
        self._compiled = lam

    def field(self, key):
        f = self._compiled[key]
        return lambda x, t: np.broadcast_to(np.asarray(f(x[:, 0], x[:, 1], t), dtype=float), (x.shape[0],))

    def rate(self, key):
        f = self._compiled[key]
        return lambda x, t, tp: np.broadcast_to(
            np.asarray(f(x[:, 0], x[:, 1], t, tp), dtype=float), (x.shape[0],)
        )

    def normal_flux(self, key):
        f = self._compiled[key]

        def flux(x, n, t, tp):
            J = f(x[:, 0], x[:, 1], t, tp)
            Jx = np.broadcast_to(np.asarray(J[0], dtype=float), (x.shape[0],))
            Jy = np.broadcast_to(np.asarray(J[1], dtype=float), (x.shape[0],))
            return Jx * n[:, 0] + Jy * n[:, 1]

        return flux

    def alpha(self, tag, k, x, t):
        w = []
        for j, s in enumerate(self.species):
            w.append(s.D(tag == INTRA) * s.z**2 * self.field(("c", tag, j))(x, t))
        return w[k] / sum(w)

    def phi_m(self, x, t):
        return self.field(("phi", INTRA))(x, t) - self.field(("phi", EXTRA))(x, t)


def _species(amplitudes):
    names = ("Na", "K", "Cl")
    z = (1, 1, -1)
    D_i = (1.0, 1.5, 2.0)
    D_e = (2.0, 1.0, 1.5)
    return tuple(
        IonSpecies(n, zk, di, de, amplitudes[INTRA][k], amplitudes[EXTRA][k], 0.0, 0.0)
        for k, (n, zk, di, de) in enumerate(zip(names, z, D_i, D_e))
    )


MMS_CONSTANTS = PhysicalConstants(R=1.0, T=1.0, F=1.0, C_m=1.0)


def default_case() -> MmsCase:
    """Smooth electroneutral fields with a nontrivial membrane jump (O(1) parameters)."""
    a = {INTRA: (2.0, 3.0, 5.0), EXTRA: (3.0, 2.0, 5.0)}
    b = {INTRA: (0.3, 0.2, 0.5), EXTRA: (0.2, 0.4, 0.6)}
    amp = {INTRA: 0.5, EXTRA: 0.2}
    bump = sympy.sin(2 * sympy.pi * X) * sympy.sin(2 * sympy.pi * Y) * sympy.exp(-T)
    wave = sympy.cos(2 * sympy.pi * X) * sympy.cos(2 * sympy.pi * Y) * sympy.exp(-T)
    q = sympy.nsimplify
    conc = {tag: [q(a[tag][k]) + q(b[tag][k]) * bump for k in range(3)] for tag in REGIONS}
    phi = {tag: q(amp[tag]) * wave for tag in REGIONS}
    return MmsCase(_species(a), MMS_CONSTANTS, conc, phi, name="trig")


def constant_case() -> MmsCase:
    """Fields constant in space and time; every source vanishes."""
    a = {INTRA: (2.0, 3.0, 5.0), EXTRA: (3.0, 2.0, 5.0)}
    conc = {tag: [sympy.Float(a[tag][k]) + 0 * X for k in range(3)] for tag in REGIONS}
    phi = {INTRA: sympy.Float(0.3) + 0 * X, EXTRA: sympy.Float(-0.1) + 0 * X}
    return MmsCase(_species(a), MMS_CONSTANTS, conc, phi, name="constant")


def _extra_rhs(problem: Problem, case: MmsCase):
    dofmap = problem.dofmap
    L = problem.layout
    C = case.constants
    dt = problem.dt
    ia = problem.interface
    K = problem.K

    def rhs(t_n):
        tp = t_n - dt
        f = np.zeros(L.size)
        for tag in REGIONS:
            s = SIGN[tag]
            gr = dofmap.regions[tag].gamma
            ra = problem.region[tag]
            deg = 2 * problem.degree + 4
            dphim = lambda x: (case.phi_m(x, t_n) - case.phi_m(x, tp)) / dt  # noqa: E731
            for k in list(range(K)) + ["phi"]:
                sl = L.phi(tag) if k == "phi" else L.conc(tag, k)
                bulk = case.rate(("bulk", tag, k))
                flux = case.normal_flux(("flux", tag, k))
                vec = ra.load(lambda x, t: bulk(x, t_n, tp), degree=deg)

                def membrane(x, n_i, t, k=k, flux=flux):
                    jn = flux(x, s * n_i, t_n, tp)
                    if k == "phi":
                        return jn - s * C.C_m * dphim(x) / C.F
                    z = case.species[k].z
                    return jn - s * case.alpha(tag, k, x, tp) * C.C_m * dphim(x) / (C.F * z)

                vec[gr] -= ia.load(membrane, degree=deg)
                if tag == EXTRA:
                    vec -= boundary_load(dofmap, lambda x, n, t: flux(x, n, t_n, tp), degree=deg)
                f[sl] += dt * vec
        return f

    return rhs


def _problem(case: MmsCase, n_x: int, degree: int, dt: float) -> Problem:
    mesh = build_model_a_mesh(n_x, 2, side=1.0)
    problem = Problem(
        mesh, degree, case.species, case.constants, MembraneModel("none", case.species, case.constants), dt=dt
    )
    problem.extra_rhs = _extra_rhs(problem, case)
    x_pin = problem.dofmap.coords(EXTRA)[problem.pin_local][None, :]
    phi_e = case.field(("phi", EXTRA))
    problem.pin_value = lambda t: float(phi_e(x_pin, t)[0])
    return problem


def _exact_state(problem: Problem, case: MmsCase, t: float) -> SimState:
    c, phi = {}, {}
    for tag in REGIONS:
        x = problem.dofmap.coords(tag)
        c[tag] = np.stack([case.field(("c", tag, k))(x, t) for k in range(problem.K)])
        phi[tag] = np.array(case.field(("phi", tag))(x, t), dtype=float)
    return SimState(0, t, c, phi, membrane_potential(problem.dofmap, phi))


def l2_errors(problem: Problem, case: MmsCase, state: SimState, t: float) -> dict:
    """L2 errors per field and region.

    The potentials are only defined up to a common additive constant, so their
    errors are taken after removing the volume-averaged difference (one constant
    for both regions).  Without this the point pin contributes its pointwise
    error, which converges with a logarithmic factor at ``p = 1``.
    """
    out = {}
    phi_diff = {}
    for tag in REGIONS:
        for k in range(problem.K):
            xq, uq, wq = quadrature_values(problem, tag, state.c[tag][k])
            exact = case.field(("c", tag, k))(xq.reshape(-1, 2), t).reshape(uq.shape)
            out[f"{problem.species[k].name}_{SUFFIX[tag]}"] = float(np.sqrt(np.sum(wq * (uq - exact) ** 2)))
        xq, uq, wq = quadrature_values(problem, tag, state.phi[tag])
        exact = case.field(("phi", tag))(xq.reshape(-1, 2), t).reshape(uq.shape)
        phi_diff[tag] = (uq - exact, wq)
    shift = sum((d * w).sum() for d, w in phi_diff.values()) / sum(w.sum() for _, w in phi_diff.values())
    for tag, (d, w) in phi_diff.items():
        out[f"phi_{SUFFIX[tag]}"] = float(np.sqrt(np.sum(w * (d - shift) ** 2)))
    return out


def run_mms(degree: int, levels, case: MmsCase | None = None, method: str = "direct",
            precond: str = "direct", tol: float = 1e-10, dt_scale: float = 1.0) -> list:
    """One step of size ``dt = dt_scale * h^2`` from the exact state on each level.

    Each step is solved by sparse LU unless ``method="gmres"``.  Returns rows
    ``(level, N_x, h, quantity, l2_error, rate)`` where ``rate`` is ``log2(e_prev / e)`` relative to the previous level (nan on the first).
    """
    case = case or default_case()
    rows = []
    previous = {}
    for level, n_x in enumerate(levels):
        h = 1.0 / n_x
        problem = _problem(case, n_x, degree, dt_scale * h * h)
        settings = SolverSettings(precond=precond, krylov=KrylovConfig(tol=tol, maxiter=2000), method=method)
        stepper = Stepper(problem, settings)
        state = _exact_state(problem, case, 0.0)
        new, _ = stepper.step(state)
        errs = l2_errors(problem, case, new, new.t)
        for q, e in errs.items():
            rate = np.log2(previous[q] / e) if q in previous and e > 0 else float("nan")
            rows.append((level, n_x, h, q, e, rate))
        previous = errs
    return rows


def write_rates_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "N_x", "h", "quantity", "l2_error", "rate"])
        for level, n_x, h, q, e, r in rows:
            w.writerow([level, n_x, repr(float(h)), q, repr(float(e)), repr(float(r))])
