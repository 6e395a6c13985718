"""Ionic species, physical constants and membrane current models.

All functions act pointwise on arrays of membrane nodes.  Units are SI:
concentrations in mol/m^3, potentials in V, currents in A/m^2, time in s.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

log = logging.getLogger(__name__)


class MembraneDomainError(ValueError):
    """Raised when a membrane function is evaluated outside its domain."""


@dataclass(frozen=True)
class PhysicalConstants:
    R: float = 8.314
    T: float = 300.0
    F: float = 9.648e4
    C_m: float = 0.02  # F/m^2
    phi_rest: float = -0.065
    phi_m0: float = -0.06774

    @property
    def psi(self) -> float:
        return self.R * self.T / self.F


@dataclass(frozen=True)
class IonSpecies:
    name: str
    z: int
    D_i: float
    D_e: float
    c_i0: float
    c_e0: float
    g_leak: float = 0.0
    g_max: float = 0.0

    def __post_init__(self):
        if self.z == 0:
            raise ValueError(f"species {self.name}: valence must be nonzero")
        if self.D_i <= 0 or self.D_e <= 0:
            raise ValueError(f"species {self.name}: diffusion coefficients must be positive")

    def D(self, intra: bool) -> float:
        return self.D_i if intra else self.D_e


def default_species() -> tuple:
    return (
        IonSpecies("Na", 1, 1.33e-9, 1.33e-9, 12.0, 100.0, g_leak=1.0, g_max=1200.0),
        IonSpecies("K", 1, 1.96e-9, 1.96e-9, 125.0, 4.0, g_leak=4.0, g_max=360.0),
        IonSpecies("Cl", -1, 2.03e-9, 2.03e-9, 137.0, 104.0, g_leak=0.0),
    )


def check_electroneutral(species, rtol: float = 1e-12) -> None:
    """Initial concentrations must carry zero net charge in each region."""
    for attr in ("c_i0", "c_e0"):
        charge = sum(s.z * getattr(s, attr) for s in species)
        scale = sum(abs(s.z * getattr(s, attr)) for s in species)
        if abs(charge) > rtol * max(scale, 1.0):
            raise ValueError(f"initial {attr[2]} concentrations not electroneutral: net charge {charge:g}")


def reversal_potential(z, c_i, c_e, constants: PhysicalConstants = PhysicalConstants()):
    c_i = np.asarray(c_i, dtype=float)
    c_e = np.asarray(c_e, dtype=float)
    bad = (c_i <= 0) | (c_e <= 0)
    if np.any(bad):
        idx = np.flatnonzero(np.atleast_1d(bad))[0]
        raise MembraneDomainError(f"nonpositive concentration at membrane node {idx}")
    return constants.psi / z * np.log(c_e / c_i)


def alpha_fractions(D, z, conc) -> np.ndarray:
    """Fractions ``D_k z_k^2 c_k / sum_l D_l z_l^2 c_l`` for ``conc`` of shape (K, n)."""
    D = np.asarray(D, dtype=float)[:, None]
    z = np.asarray(z, dtype=float)[:, None]
    w = D * z * z * np.asarray(conc, dtype=float).reshape(D.shape[0], -1)
    total = w.sum(axis=0)
    if np.any(total <= 0):
        raise MembraneDomainError(
            f"nonpositive conductivity weight at membrane node {np.flatnonzero(total <= 0)[0]}"
        )
    return w / total


def alpha_fraction(species, k: int, conc, intra: bool = True) -> np.ndarray:
    D = [s.D(intra) for s in species]
    return alpha_fractions(D, [s.z for s in species], conc)[k]


# Hodgkin-Huxley ------------------------------------------------------------


def _exprel10(x):
    """``x / (1 - exp(-x/10))`` with its limit 10 near ``x = 0``."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-7
    safe = np.where(small, 1.0, x)
    out = safe / -np.expm1(-safe / 10.0)
    return np.where(small, 10.0 + 0.5 * x, out)


def hh_rates(dphi):
    """Opening and closing rates ``(alpha, beta)``, each (3, n) for (n, m, h), in 1/s.

    ``dphi = phi_M - phi_rest`` in volts.
    """
    V = 1e3 * np.atleast_1d(np.asarray(dphi, dtype=float))
    with np.errstate(over="ignore"):
        alpha = np.stack([
            0.01 * _exprel10(V - 10.0),
            0.1 * _exprel10(V - 25.0),
            0.07 * np.exp(-V / 20.0),
        ])
        beta = np.stack([
            0.125 * np.exp(-V / 80.0),
            4.0 * np.exp(-V / 18.0),
            1.0 / (1.0 + np.exp(-(V - 30.0) / 10.0)),
        ])
    return 1e3 * alpha, 1e3 * beta


def hh_steady_state(dphi) -> np.ndarray:
    a, b = hh_rates(dphi)
    return a / (a + b)


@dataclass
class GatingState:
    """Gate values (n, m, h) at membrane nodes, shape (3, n_nodes)."""

    w: np.ndarray

    @classmethod
    def uniform(cls, n_nodes: int, w0=(0.276, 0.0379, 0.688)) -> "GatingState":
        return cls(np.repeat(np.asarray(w0, dtype=float)[:, None], n_nodes, axis=1))

    @property
    def n(self):
        return self.w[0]

    @property
    def m(self):
        return self.w[1]

    @property
    def h(self):
        return self.w[2]

    def copy(self) -> "GatingState":
        return GatingState(self.w.copy())


def rush_larsen_step(w: np.ndarray, alpha: np.ndarray, beta: np.ndarray, dt: float) -> np.ndarray:
    """Exponential integrator for ``w' = alpha (1 - w) - beta w`` with frozen rates."""
    if dt <= 0:
        raise ValueError("ODE step must be positive")
    rate = alpha + beta
    w_inf = alpha / rate
    return w_inf + (w - w_inf) * np.exp(-dt * rate)


def advance_gating(state: GatingState, phi_m, dt: float, n_substeps: int, phi_rest: float) -> GatingState:
    """``n_substeps`` Rush-Larsen steps over ``dt`` at fixed membrane potential."""
    a, b = hh_rates(np.asarray(phi_m) - phi_rest)
    w = state.w
    for _ in range(n_substeps):
        w = rush_larsen_step(w, a, b, dt / n_substeps)
    return GatingState(w)


def _species_index(species) -> dict:
    return {s.name: k for k, s in enumerate(species)}


def hh_currents(phi_m, c_i, c_e, gating: GatingState, g_stim, species, constants=PhysicalConstants()):
    """Channel currents (K, n) of the Hodgkin-Huxley model."""
    idx = _species_index(species)
    if "Na" not in idx or "K" not in idx:
        raise ValueError("Hodgkin-Huxley model requires Na and K species")
    phi_m = np.asarray(phi_m, dtype=float)
    out = np.zeros((len(species), phi_m.size))
    for k, s in enumerate(species):
        E = reversal_potential(s.z, c_i[k], c_e[k], constants)
        g = np.full(phi_m.size, s.g_leak)
        if s.name == "Na":
            g = g + g_stim + s.g_max * gating.m**3 * gating.h
        elif s.name == "K":
            g = g + s.g_max * gating.n**4
        out[k] = g * (phi_m - E)
    return out


# Kir-Na/K ------------------------------------------------------------------


@dataclass(frozen=True)
class KirNaKParams:
    rho_pump: float = 1.115e-6
    P_Na: float = 10.0
    P_K: float = 1.5
    rectify: bool = True  # False replaces f_Kir by 1 (pure leak)


def kir_factor(K_e, K_e0, E_K0, phi_m, E_K):
    A = 1.0 + np.exp(0.433)
    B = 1.0 + np.exp(-(0.1186 + E_K0) / 0.0441)
    C = 1.0 + np.exp((phi_m - E_K + 0.0185) / 0.0425)
    D = 1.0 + np.exp(-(0.1186 + phi_m) / 0.0441)
    return A * B / (C * D) * np.sqrt(K_e / K_e0)


def pump_flux(Na_i, K_e, params: KirNaKParams):
    Na_i = np.asarray(Na_i, dtype=float)
    K_e = np.asarray(K_e, dtype=float)
    return params.rho_pump * (Na_i**1.5 / (Na_i**1.5 + params.P_Na**1.5)) * (K_e / (K_e + params.P_K))


def kir_nak_currents(phi_m, c_i, c_e, g_stim, species, params: KirNaKParams, E_K0, K_e0,
                     constants=PhysicalConstants()):
    """Channel currents (K, n) of the passive Kir-Na/K model.

    ``E_K0`` and ``K_e0`` are the potassium reversal potential and
    extracellular concentration frozen at ``t = 0``.
    """
    idx = _species_index(species)
    if "Na" not in idx or "K" not in idx:
        raise ValueError("Kir-Na/K model requires Na and K species")
    iNa, iK = idx["Na"], idx["K"]
    phi_m = np.asarray(phi_m, dtype=float)
    F = constants.F
    j = pump_flux(c_i[iNa], c_e[iK], params)
    out = np.zeros((len(species), phi_m.size))
    for k, s in enumerate(species):
        E = reversal_potential(s.z, c_i[k], c_e[k], constants)
        if k == iNa:
            out[k] = (g_stim + s.g_leak) * (phi_m - E) + 3.0 * F * s.z * j
        elif k == iK:
            f = kir_factor(c_e[iK], K_e0, E_K0, phi_m, E) if params.rectify else 1.0
            out[k] = s.g_leak * (phi_m - E) * f - 2.0 * F * s.z * j
        else:
            out[k] = s.g_leak * (phi_m - E)
    return out


# Stimulus ------------------------------------------------------------------


@dataclass(frozen=True)
class Stimulus:
    """Periodic exponentially decaying sodium conductance on part of the membrane.

    ``support`` is ``"all"``, ``"halfspace"`` (``x[axis] <= threshold``) or
    ``"labels"`` (membrane nodes whose cell label is in ``labels``).
    """

    g_bar: float = 40.0
    a: float = 0.002
    period: float = 0.01
    amplitude: float = 1.0
    support: str = "all"
    axis: int = 0
    threshold: float = 0.0
    labels: tuple = ()

    def __post_init__(self):
        if self.support not in ("all", "halfspace", "labels", "none"):
            raise ValueError(f"unknown stimulus support {self.support!r}")

    def mask(self, x: np.ndarray, node_labels=None) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.support == "all":
            return np.ones(x.shape[0], dtype=bool)
        if self.support == "none":
            return np.zeros(x.shape[0], dtype=bool)
        if self.support == "halfspace":
            return x[:, self.axis] <= self.threshold
        if node_labels is None:
            raise ValueError("label-based stimulus requires membrane node labels")
        return np.isin(node_labels, self.labels)

    def temporal(self, t: float) -> float:
        if t < 0:
            raise ValueError("stimulus time must be nonnegative")
        return self.amplitude * self.g_bar * np.exp(-np.mod(t, self.period) / self.a)


def stimulus_value(stim: Stimulus, x, t: float, node_labels=None) -> np.ndarray:
    return np.where(stim.mask(x, node_labels), stim.temporal(t), 0.0)


# Model wrappers used by the time loop -----------------------------------------


@dataclass
class MembraneModel:
    """Membrane currents and gating at the interface nodes.

    ``kind`` is ``"hh"``, ``"kir_nak"``, ``"leak"`` (Kir-Na/K with ``f_Kir = 1``
    and no pump) or ``"none"`` (no channel currents).
    """

    kind: str
    species: tuple
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)
    kir: KirNaKParams = field(default_factory=KirNaKParams)
    w0: tuple = (0.276, 0.0379, 0.688)
    E_K0: np.ndarray | None = None
    K_e0: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("hh", "kir_nak", "leak", "none"):
            raise ValueError(f"unknown membrane model {self.kind!r}")
        if self.kind == "leak":
            self.kir = replace(self.kir, rho_pump=0.0, rectify=False)

    @property
    def has_gating(self) -> bool:
        return self.kind == "hh"

    def initial_gating(self, n_nodes: int) -> GatingState | None:
        return GatingState.uniform(n_nodes, self.w0) if self.has_gating else None

    def freeze_reference(self, c_i, c_e) -> None:
        """Capture the t = 0 potassium references at every membrane node."""
        idx = _species_index(self.species)
        if "K" in idx:
            k = idx["K"]
            self.K_e0 = np.array(c_e[k], dtype=float)
            self.E_K0 = reversal_potential(self.species[k].z, c_i[k], c_e[k], self.constants)

    def advance(self, gating, phi_m, dt: float, n_substeps: int):
        if not self.has_gating:
            return gating
        return advance_gating(gating, phi_m, dt, n_substeps, self.constants.phi_rest)

    def currents(self, phi_m, c_i, c_e, gating, g_stim) -> np.ndarray:
        if self.kind == "none":
            return np.zeros((len(self.species), np.size(phi_m)))
        if self.kind == "hh":
            return hh_currents(phi_m, c_i, c_e, gating, g_stim, self.species, self.constants)
        if self.K_e0 is None:
            self.freeze_reference(c_i, c_e)
        return kir_nak_currents(
            phi_m, c_i, c_e, g_stim, self.species, self.kir, self.E_K0, self.K_e0, self.constants
        )


class LabelledMembrane:
    """Different membrane models on membrane nodes grouped by cell label."""

    kind = "labelled"

    def __init__(self, models: dict, node_labels, default: MembraneModel | None = None):
        self.node_labels = np.asarray(node_labels)
        self.models = dict(models)
        self.groups = []
        covered = np.zeros(self.node_labels.size, dtype=bool)
        for label, model in self.models.items():
            idx = np.flatnonzero(self.node_labels == label)
            covered[idx] = True
            self.groups.append((model, idx))
        rest = np.flatnonzero(~covered)
        if rest.size:
            if default is None:
                missing = sorted(set(self.node_labels[rest].tolist()))
                raise ValueError(f"no membrane model for cell labels {missing}")
            self.groups.append((default, rest))
        self.species = self.groups[0][0].species if self.groups else ()

    @property
    def has_gating(self) -> bool:
        return any(m.has_gating for m, _ in self.groups)

    def initial_gating(self, n_nodes: int):
        if not self.has_gating:
            return None
        w0 = next(m.w0 for m, _ in self.groups if m.has_gating)
        return GatingState.uniform(n_nodes, w0)

    def freeze_reference(self, c_i, c_e) -> None:
        for model, idx in self.groups:
            model.freeze_reference(c_i[:, idx], c_e[:, idx])

    def advance(self, gating, phi_m, dt: float, n_substeps: int):
        if gating is None:
            return None
        out = gating.copy()
        for model, idx in self.groups:
            if model.has_gating:
                sub = model.advance(GatingState(gating.w[:, idx]), phi_m[idx], dt, n_substeps)
                out.w[:, idx] = sub.w
        return out

    def currents(self, phi_m, c_i, c_e, gating, g_stim) -> np.ndarray:
        out = np.zeros((c_i.shape[0], np.size(phi_m)))
        for model, idx in self.groups:
            sub = GatingState(gating.w[:, idx]) if gating is not None and model.has_gating else None
            out[:, idx] = model.currents(phi_m[idx], c_i[:, idx], c_e[:, idx], sub, g_stim[idx])
        return out
