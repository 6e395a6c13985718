from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from knpemi.membrane import (
    GatingState,
    IonSpecies,
    KirNaKParams,
    LabelledMembrane,
    MembraneDomainError,
    MembraneModel,
    PhysicalConstants,
    Stimulus,
    advance_gating,
    alpha_fraction,
    alpha_fractions,
    check_electroneutral,
    default_species,
    hh_currents,
    hh_rates,
    hh_steady_state,
    kir_factor,
    kir_nak_currents,
    pump_flux,
    reversal_potential,
    rush_larsen_step,
    stimulus_value,
)

C = PhysicalConstants()
SP = default_species()
CI = np.array([[12.0], [125.0], [137.0]])
CE = np.array([[100.0], [4.0], [104.0]])


def test_psi_is_derived():
    assert C.psi == 8.314 * 300 / 9.648e4
    assert replace(C, T=310).psi == pytest.approx(8.314 * 310 / 9.648e4, rel=1e-15)


# --- reversal potentials and fractions ------------------------------------------


def test_reversal_equal_concentrations_is_zero():
    assert reversal_potential(1, 7.0, 7.0, C) == 0.0


def test_reversal_potassium_initial():
    psi = 8.314 * 300 / 96480
    assert psi == pytest.approx(0.025851, abs=1e-6)
    assert float(reversal_potential(1, 125.0, 4.0, C)) == pytest.approx(psi * np.log(0.032), rel=1e-12)
    assert float(reversal_potential(1, 125.0, 4.0, C)) == pytest.approx(-0.08899, abs=1e-5)


def test_reversal_chloride_initial():
    psi = 8.314 * 300 / 96480
    assert float(reversal_potential(-1, 137.0, 104.0, C)) == pytest.approx(-psi * np.log(104 / 137), rel=1e-12)
    assert float(reversal_potential(-1, 137.0, 104.0, C)) == pytest.approx(0.0071246, abs=1e-7)


@pytest.mark.parametrize("ci,ce", [(0.0, 1.0), (1.0, -2.0), ([1.0, 1.0, -1.0], [1.0, 1.0, 1.0])])
def test_reversal_rejects_nonpositive(ci, ce):
    with pytest.raises(MembraneDomainError, match="node"):
        reversal_potential(1, ci, ce, C)


def test_alpha_single_species_is_one():
    assert alpha_fractions([2e-9], [2], [[5.0, 7.0]]).tolist() == [[1.0, 1.0]]


def test_alpha_potassium_intra_initial():
    expected = 1.96e-9 * 125 / (1.33e-9 * 12 + 1.96e-9 * 125 + 2.03e-9 * 137)
    assert float(alpha_fraction(SP, 1, CI, intra=True)[0]) == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(0.45449, abs=1e-5)


def test_alpha_rejects_zero_denominator():
    with pytest.raises(MembraneDomainError):
        alpha_fractions([1e-9, 1e-9], [1, -1], [[0.0], [0.0]])


@given(st.lists(st.floats(1e-3, 1e3), min_size=3, max_size=3))
def test_alpha_fractions_sum_to_one(conc):
    a = alpha_fractions([1.33e-9, 1.96e-9, 2.03e-9], [1, 1, -1], np.array(conc)[:, None])
    assert a.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.all((a >= 0) & (a <= 1))


# --- species and electroneutrality ------------------------------------------------


def test_default_species_electroneutral():
    check_electroneutral(SP)
    assert sum(s.z * s.c_i0 for s in SP) == 0 and sum(s.z * s.c_e0 for s in SP) == 0


def test_broken_electroneutrality_rejected():
    bad = (replace(SP[0], c_i0=13.0),) + SP[1:]
    with pytest.raises(ValueError, match="electroneutral"):
        check_electroneutral(bad)


@pytest.mark.parametrize("kw", [{"z": 0}, {"D_i": 0.0}, {"D_e": -1e-9}])
def test_species_validation(kw):
    with pytest.raises(ValueError):
        replace(SP[0], **kw)


# --- Hodgkin-Huxley rates -----------------------------------------------------------


def test_alpha_m_removable_singularity():
    a0, _ = hh_rates(0.025)  # V = 25 mV
    assert a0[1, 0] == pytest.approx(1000.0, rel=1e-12)  # 0.1 * 10 per ms
    # near the singularity alpha_m = 0.1 (10 + x/2 + x^2/120) per ms, x in mV
    for x in (1e-6, -1e-6, 1e-8, -1e-8):
        a, _ = hh_rates(0.025 + x * 1e-3)
        assert a[1, 0] == pytest.approx(1e3 * 0.1 * (10 + x / 2 + x * x / 120), rel=1e-9)
    lo, hi = hh_rates(0.025 - 1e-9)[0][1, 0], hh_rates(0.025 + 1e-9)[0][1, 0]
    assert (lo + hi) / 2 == pytest.approx(a0[1, 0], rel=1e-9)


def test_alpha_n_removable_singularity():
    a0, _ = hh_rates(0.010)
    assert a0[0, 0] == pytest.approx(100.0, rel=1e-12)  # 0.01 * 10 per ms
    assert hh_rates(0.010 + 1e-12)[0][0, 0] == pytest.approx(100.0, rel=1e-9)


def test_beta_h_saturates():
    _, b = hh_rates(1.0)
    assert b[2, 0] == pytest.approx(1000.0, rel=1e-12)


def test_rates_nonnegative_over_wide_range():
    a, b = hh_rates(np.linspace(-0.3, 0.3, 2001))
    assert np.all(a >= 0) and np.all(b > 0) and np.all(np.isfinite(a))


def test_steady_state_near_table_gates():
    # reported, not asserted tightly: the table gates come from an unstated rate variant
    w_inf = hh_steady_state(C.phi_m0 - C.phi_rest)[:, 0]
    print(f"w_inf at -2.74 mV: n={w_inf[0]:.4f} m={w_inf[1]:.4f} h={w_inf[2]:.4f}; table 0.276 0.0379 0.688")
    assert np.allclose(w_inf, (0.276, 0.0379, 0.688), atol=0.1)


# --- Rush-Larsen --------------------------------------------------------------------


def _rk4(w, a, b, T, n=1000):
    h = T / n
    f = lambda y: a * (1 - y) - b * y  # noqa: E731
    for _ in range(n):
        k1 = f(w)
        k2 = f(w + h / 2 * k1)
        k3 = f(w + h / 2 * k2)
        k4 = f(w + h * k3)
        w = w + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return w


@pytest.mark.parametrize("phi_m", [-0.080, -0.06774, -0.040, 0.0, 0.030])
def test_rush_larsen_vs_rk4(phi_m):
    dt = 5e-5 / 25
    a, b = hh_rates(phi_m - C.phi_rest)
    w = np.array([[0.276], [0.0379], [0.688]])
    rl = rush_larsen_step(w, a, b, dt)
    ref = _rk4(w, a, b, dt)
    assert np.max(np.abs(rl - ref) / np.abs(ref)) <= 1e-6


def test_rush_larsen_equal_rates_closed_form():
    a = np.array([300.0])
    w0 = np.array([0.9])
    w = w0
    for n in range(1, 6):
        w_new = rush_larsen_step(w, a, a, 1e-3)
        assert w_new[0] == pytest.approx(0.5 + 0.4 * np.exp(-2 * 300.0 * 1e-3 * n), rel=1e-13)
        assert abs(w_new[0] - 0.5) < abs(w[0] - 0.5)
        w = w_new


def test_rush_larsen_small_step_is_identity_to_first_order():
    a, b = hh_rates(0.01)
    w = np.full((3, 1), 0.3)
    for dt in (1e-8, 1e-10):
        assert np.abs(rush_larsen_step(w, a, b, dt) - w).max() <= 2 * dt * (a + b).max()


@pytest.mark.parametrize("dt", [0.0, -1e-5])
def test_rush_larsen_rejects_nonpositive_step(dt):
    with pytest.raises(ValueError):
        rush_larsen_step(np.zeros(1), np.ones(1), np.ones(1), dt)


@given(st.lists(st.floats(-0.5, 0.5), min_size=1, max_size=30), st.floats(1e-6, 1e-2))
def test_gates_stay_in_unit_interval(phis, dt):
    g = GatingState.uniform(4)
    for p in phis:
        g = advance_gating(g, np.full(4, p), dt, 5, C.phi_rest)
        assert np.all(g.w >= 0) and np.all(g.w <= 1)


# --- channel currents -----------------------------------------------------------------


def _gates(n, m, h):
    return GatingState(np.array([[n], [m], [h]], dtype=float))


def test_hh_chloride_zero_at_reversal():
    sp_cl = SP[:2] + (replace(SP[2], g_leak=0.5),)
    E_cl = float(reversal_potential(-1, 137.0, 104.0, C))
    I = hh_currents(np.array([E_cl]), CI, CE, _gates(0.3, 0.1, 0.6), 0.0, sp_cl, C)
    assert abs(I[2, 0]) <= 1e-15


@given(st.floats(-0.1, 0.05), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 50))
def test_hh_chloride_identically_zero_with_table_leak(phi, n, m, h, g):
    assert hh_currents(np.array([phi]), CI, CE, _gates(n, m, h), g, SP, C)[2, 0] == 0.0


def test_hh_closed_gates_reduce_to_leak():
    phi = np.array([-0.05])
    I = hh_currents(phi, CI, CE, _gates(0, 0, 0), 0.0, SP, C)
    E_na = reversal_potential(1, 12.0, 100.0, C)
    E_k = reversal_potential(1, 125.0, 4.0, C)
    assert I[0, 0] == pytest.approx(1.0 * (phi[0] - E_na), rel=1e-14)
    assert I[1, 0] == pytest.approx(4.0 * (phi[0] - E_k), rel=1e-14)


def test_hh_stimulus_enters_sodium_only():
    phi = np.array([-0.05])
    g = _gates(0.3, 0.05, 0.6)
    I0 = hh_currents(phi, CI, CE, g, 0.0, SP, C)
    I1 = hh_currents(phi, CI, CE, g, 40.0, SP, C)
    E_na = reversal_potential(1, 12.0, 100.0, C)
    assert I1[0, 0] - I0[0, 0] == pytest.approx(40.0 * (phi[0] - E_na), rel=1e-12)
    assert np.array_equal(I1[1:], I0[1:])


def test_hh_requires_na_and_k():
    with pytest.raises(ValueError):
        hh_currents(np.zeros(1), CI[2:], CE[2:], _gates(0, 0, 0), 0.0, SP[2:], C)


@pytest.mark.parametrize("kind", ["hh", "leak"])
def test_currents_affine_in_phi(kind):
    model = MembraneModel(kind, SP, C)
    g = _gates(0.3, 0.05, 0.6) if kind == "hh" else None
    model.freeze_reference(CI, CE)
    phis = [-0.09, -0.03, 0.04]
    I = np.array([model.currents(np.array([p]), CI, CE, g, np.array([7.0]))[:, 0] for p in phis])
    slope1 = (I[1] - I[0]) / (phis[1] - phis[0])
    slope2 = (I[2] - I[1]) / (phis[2] - phis[1])
    assert np.allclose(slope1, slope2, rtol=1e-10, atol=1e-12)


def test_pump_flux_initial():
    expected = 1.115e-6 * (12**1.5 / (12**1.5 + 10**1.5)) * (4 / (4 + 1.5))
    assert float(pump_flux(12.0, 4.0, KirNaKParams())) == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(4.6055e-7, rel=1e-4)


def test_pump_flux_monotone():
    na = np.linspace(0.5, 100, 200)
    k = np.linspace(0.5, 100, 200)
    p = KirNaKParams()
    assert np.all(np.diff(pump_flux(na, 4.0, p)) > 0)
    assert np.all(np.diff(pump_flux(12.0, k, p)) > 0)


def test_kir_factor_positive_on_grid():
    phi, ke = np.meshgrid(np.linspace(-0.2, 0.1, 61), np.linspace(0.01, 100, 60))
    E_k0 = float(reversal_potential(1, 125.0, 4.0, C))
    E_k = reversal_potential(1, 125.0, ke, C)
    f = kir_factor(ke, 4.0, E_k0, phi, E_k)
    assert np.all(f > 0) and np.all(np.isfinite(f))


def test_kir_nak_without_pump_and_rectifier_is_leak():
    phi = np.array([-0.06, -0.02])
    ci = np.repeat(CI, 2, axis=1)
    ce = np.repeat(CE, 2, axis=1)
    E_k0 = reversal_potential(1, ci[1], ce[1], C)
    params = KirNaKParams(rho_pump=0.0, rectify=False)
    I = kir_nak_currents(phi, ci, ce, np.zeros(2), SP, params, E_k0, ce[1], C)
    for k, s in enumerate(SP):
        assert np.allclose(I[k], s.g_leak * (phi - reversal_potential(s.z, ci[k], ce[k], C)), rtol=1e-14)
    leak = MembraneModel("leak", SP, C)
    assert np.allclose(leak.currents(phi, ci, ce, None, np.zeros(2)), I, rtol=1e-14)


def test_kir_nak_pump_signs():
    phi = np.array([-0.07])
    E_k0 = reversal_potential(1, CI[1], CE[1], C)
    base = kir_nak_currents(phi, CI, CE, np.zeros(1), SP, KirNaKParams(rho_pump=0.0), E_k0, CE[1], C)
    full = kir_nak_currents(phi, CI, CE, np.zeros(1), SP, KirNaKParams(), E_k0, CE[1], C)
    j = float(pump_flux(12.0, 4.0, KirNaKParams()))
    assert full[0, 0] - base[0, 0] == pytest.approx(3 * C.F * j, rel=1e-12)
    assert full[1, 0] - base[1, 0] == pytest.approx(-2 * C.F * j, rel=1e-12)


def test_unknown_membrane_model():
    with pytest.raises(ValueError, match="unknown membrane model"):
        MembraneModel("fitzhugh", SP, C)


def test_labelled_membrane_dispatch():
    labels = np.array([1, 1, 2])
    hh = MembraneModel("hh", SP, C)
    leak = MembraneModel("leak", SP, C)
    mem = LabelledMembrane({1: hh, 2: leak}, labels)
    ci = np.repeat(CI, 3, axis=1)
    ce = np.repeat(CE, 3, axis=1)
    mem.freeze_reference(ci, ce)
    g = mem.initial_gating(3)
    phi = np.full(3, -0.05)
    I = mem.currents(phi, ci, ce, g, np.zeros(3))
    assert np.allclose(I[:, :2], hh.currents(phi[:2], ci[:, :2], ce[:, :2], GatingState(g.w[:, :2]), np.zeros(2)))
    assert np.allclose(I[:, 2:], leak.currents(phi[2:], ci[:, 2:], ce[:, 2:], None, np.zeros(1)))
    with pytest.raises(ValueError, match="no membrane model"):
        LabelledMembrane({1: hh}, labels)


# --- stimulus ------------------------------------------------------------------------


def test_stimulus_values():
    s = Stimulus()
    x = np.zeros((1, 2))
    assert stimulus_value(s, x, 0.0)[0] == 40.0
    assert stimulus_value(s, x, s.period)[0] == pytest.approx(40.0, rel=1e-12)
    assert stimulus_value(s, x, 0.002)[0] == pytest.approx(40 / np.e, rel=1e-14)
    assert 40 / np.e == pytest.approx(14.715, abs=1e-3)


def test_stimulus_support():
    x = np.array([[0.1, 0.0], [0.9, 0.0]])
    half = Stimulus(support="halfspace", threshold=0.5)
    assert stimulus_value(half, x, 0.0).tolist() == [40.0, 0.0]
    lab = Stimulus(support="labels", labels=(3,))
    assert stimulus_value(lab, x, 0.0, node_labels=np.array([3, 1])).tolist() == [40.0, 0.0]
    assert stimulus_value(Stimulus(support="none"), x, 0.0).tolist() == [0.0, 0.0]
    with pytest.raises(ValueError):
        Stimulus(support="sphere")
    with pytest.raises(ValueError):
        Stimulus().temporal(-1.0)


@given(st.integers(0, 100), st.floats(1e-6, 0.0099))
def test_stimulus_periodic(n, phase):
    s = Stimulus()
    t = n * s.period + phase
    assert s.temporal(t) == pytest.approx(s.temporal(phase), rel=1e-6)
    assert 0 < s.temporal(t) <= 40.0


def test_species_record():
    assert isinstance(SP[0], IonSpecies) and [s.name for s in SP] == ["Na", "K", "Cl"]
