"""Reproduction criteria for the parametric-gate model.

Each test records a PASS/FAIL line in ``ACCEPTANCE`` (printed in the pytest
terminal summary) before asserting. These runs take tens of minutes on one core.
"""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE, THETA
from pgsim.device import FluxPulse
from pgsim.dynamics import DissipationRates, propagate_lindblad, propagate_schrodinger, rates_from_specs
from pgsim.effective import (CHANNELS, adiabatic_validity, alpha_fourier_ode, bessel_alpha, dispersive_shift,
                             gate_strength_adiabatic, gate_strength_bswap, gate_strength_iswap, gate_strengths,
                             solve_alpha_ode)
from pgsim.hamiltonian import HilbertConfig, LabeledBasis, dressed_frequencies, driven_hamiltonian, state_vector
from pgsim.metrics import gate_error_sweep, reconstruct_channel
from pgsim.spectroscopy import (CHEVRON_DURATION, CHEVRON_TIMES, chevron_scan, default_chevron_grid, gate_labels,
                                locate_resonance, resonance_profile)


TARGET_F_MIN = {"iswap": (0.065, 0.0028), "bswap": (0.147, 0.0013)}
#: gate-time scale (ns) of the sharp short-gate error rise
RISE_NS = {"iswap": 100.0, "bswap": 200.0}
SWEEP_DELTAS = {"iswap": (0.02, 0.065, 0.11, 0.14), "bswap": (0.03, 0.1, 0.147, 0.175)}


def record(name, ok, detail):
    ACCEPTANCE[name] = (bool(ok), detail)
    return ok


@pytest.fixture(scope="module")
def sweeps(device, hil):
    rates = rates_from_specs(device)
    out = {}
    for gate, deltas in SWEEP_DELTAS.items():
        mc = {"iswap": 10_000, "bswap": 0}[gate]
        out[gate] = gate_error_sweep(device, hil, rates, gate, deltas, THETA, mc_samples=mc, seed=11)
    return out


def test_chevron_minimum_frequency(device, hil):
    lines, ok = [], True
    for gate, (delta, target) in TARGET_F_MIN.items():
        start = time.perf_counter()
        grid = default_chevron_grid(device, hil, THETA, delta, gate)
        t_grid = np.linspace(0.0, CHEVRON_DURATION, CHEVRON_TIMES)
        initial, tracked = gate_labels(gate)
        chev = chevron_scan(device, hil, FluxPulse(THETA, delta, float(grid[0]), CHEVRON_DURATION), grid, t_grid,
                            initial, tracked)
        prof = resonance_profile(chev)
        minutes = (time.perf_counter() - start) / 60
        good = abs(prof.f_min / target - 1) <= 0.25 and minutes < 10
        ok &= good
        lines.append(f"{gate} delta={delta}: f_min={prof.f_min * 1e3:.3f} MHz (target {target * 1e3:.1f} +-25%), "
                     f"omega_res={prof.omega_res:.5f} GHz, {minutes:.1f} min")
    record("chevron f_min (iSWAP 2.8 MHz, bSWAP 1.3 MHz, +-25%, <10 min)", ok, "; ".join(lines))
    assert ok


def test_small_delta_slopes(device, hil):
    deltas = np.array([0.01, 0.02, 0.03])
    lines, ok = [], True
    for gate, fn in (("iswap", gate_strength_iswap), ("bswap", gate_strength_bswap)):
        numeric = np.array([locate_resonance(device, hil, THETA, d, gate).f_min / 4 for d in deltas])
        slope_num = float(deltas @ numeric / (deltas @ deltas))
        slope_ana = abs(fn(device, THETA, 1.0))
        rel = slope_num / slope_ana - 1
        ok &= abs(rel) <= 0.10
        lines.append(f"{gate}: numeric {slope_num * 1e3:.4f} vs analytic {slope_ana * 1e3:.4f} MHz/Phi0 "
                     f"({rel:+.1%})")
    record("small-delta slopes within 10%", ok, "; ".join(lines))
    assert ok


def test_iswap_bswap_ratio(device):
    ratios = [abs(gate_strength_iswap(device, THETA, d) / gate_strength_bswap(device, THETA, d))
              for d in (0.01, 0.05, 0.1, 0.15)]
    ok = all(3 <= r <= 5 for r in ratios)
    record("|iSWAP/bSWAP| strength ratio in [3, 5]", ok, f"ratio {min(ratios):.4f} to {max(ratios):.4f} over delta 0.01..0.15")
    assert ok


def test_adiabatic_properties(device):
    delta = 0.1
    same = gate_strengths(device, THETA, delta, "iswap").adiabatic == gate_strengths(device, THETA, delta,
                                                                                   "bswap").adiabatic
    same &= gate_strength_adiabatic(device, THETA, delta) == gate_strengths(device, THETA, delta).adiabatic
    w_iswap = dispersive_shift(device, THETA, delta, "iswap")["omega_phi"]
    w_bswap = dispersive_shift(device, THETA, delta, "bswap")["omega_phi"]
    lo = adiabatic_validity(device, THETA, delta, w_iswap)
    hi = adiabatic_validity(device, THETA, delta, w_bswap)
    factors = [hi[ch] / lo[ch] / (w_bswap / w_iswap) - 1 for ch in CHANNELS]
    ok = same and max(abs(f) for f in factors) <= 0.01
    record("adiabatic strength gate-independent; validity ratio scales with omega_phi (1%)", ok,
           f"identical={same}, ratio factor {hi[(2, -1)] / lo[(2, -1)]:.3f} vs omega ratio "
           f"{w_bswap / w_iswap:.3f}")
    assert ok


def test_cross_oracle(device):
    worst = 0.0
    for delta in (0.01, 0.03, 0.05):
        pulse = FluxPulse(THETA, delta, 0.577, 100.0)
        ode = alpha_fourier_ode(device, pulse, "first")
        ser = bessel_alpha(device, pulse)
        for ch in CHANNELS:
            for k in range(-3, 4):
                worst = max(worst, abs(ode(ch, k) - ser(ch, k)) / abs(ser(ch, k)))
    sol = solve_alpha_ode(device, FluxPulse(THETA, 0.0, 0.577, 100.0))
    det = device.detunings(THETA)
    fixed = max(float(np.max(np.abs(sol.alpha[(i, s)] - device.couplings[i - 1] / det[(i, s)])))
                for i, s in CHANNELS)
    ok = worst <= 1e-2 and fixed <= 1e-10
    record("alpha ODE vs Bessel series (1e-2, |k|<=3) and delta=0 fixed point (1e-10)", ok,
           f"max relative deviation {worst:.2e}; fixed-point error {fixed:.1e}")
    assert ok


def test_dispersive_shift(device, hil):
    prof = locate_resonance(device, hil, THETA, 0.05, "iswap")
    pred = dispersive_shift(device, THETA, 0.05, "iswap")["omega_phi"]
    gap = abs(prof.omega_res - pred)
    static = dressed_frequencies(device, hil, THETA)
    base = abs(static["q1"] - static["q2"])
    deltas = np.array([0.03, 0.06, 0.12])
    shifts = np.array([abs(locate_resonance(device, hil, THETA, d, "iswap", transfer="second").omega_res - base)
                       for d in deltas])
    exponent = float(np.polyfit(np.log(deltas), np.log(shifts), 1)[0])
    ok = gap <= 1e-3 and abs(exponent - 2.0) <= 0.1
    record("dispersive shift within 1 MHz at delta=0.05; exponent 2.0 +- 0.1", ok,
           f"resonance {prof.omega_res:.6f} vs predicted {pred:.6f} GHz (gap {gap * 1e3:.2f} MHz); "
           f"exponent {exponent:.3f} (shifts {', '.join(f'{s * 1e3:.3f}' for s in shifts)} MHz)")
    assert ok


def _rise_time(reports, nominal):
    """Gate time where the error first exceeds twice the sweep minimum, scanning toward short gates."""
    errs = np.array([r.error for r in reports])
    k_min = int(np.argmin(errs))
    for r in reports[k_min + 1:]:
        if r.error > 2 * errs[k_min]:
            return r.gate_time
    return np.nan


def test_fidelity_pipeline(device, hil, sweeps):
    lines, ok = [], True
    # 2-design formula vs Haar sampling on a calibrated dissipative channel
    rep = sweeps["iswap"][1]
    z = abs(rep.fidelity - rep.mc_fidelity) / rep.mc_stderr
    mc_ok = z <= 3
    lines.append(f"2-design F={rep.fidelity:.6f} vs MC {rep.mc_fidelity:.6f} +- {rep.mc_stderr:.1e} ({z:.1f} sigma)")
    # long-gate leakage
    long_rep = sweeps["iswap"][0]
    coherent = reconstruct_channel(device, hil, long_rep.pulse, DissipationRates.zero())
    leak_ok = coherent.leakage < 1e-6
    lines.append(f"long gate {long_rep.gate_time:.0f} ns: coherent leakage {coherent.leakage:.1e}, "
                 f"with decoherence {long_rep.leakage:.1e}")
    shape_ok = True
    for gate, reps in sweeps.items():
        errs = [r.error for r in reps]
        k = int(np.argmin(errs))
        u_shape = 0 < k < len(errs) - 1
        rise = _rise_time(reps, RISE_NS[gate])
        near = RISE_NS[gate] / 2 <= rise <= 2 * RISE_NS[gate]
        shape_ok &= u_shape and near
        pts = ", ".join(f"{r.gate_time:.0f} ns: {r.error:.2%}" for r in reps)
        lines.append(f"{gate} [{pts}] rise at {rise:.0f} ns")
    ok = mc_ok and leak_ok and shape_ok
    record("fidelity: MC within 3 sigma; long-gate leakage < 1e-6; U-shaped error with rise near 100/200 ns", ok,
           "; ".join(lines))
    assert ok


def test_numerical_hygiene(device, hil):
    pulse = FluxPulse(THETA, 0.065, 0.5687, 300.0)
    ham = driven_hamiltonian(device, hil, pulse)
    basis = LabeledBasis(hil)
    t = np.linspace(0, 300, 31)
    psi = state_vector(basis, "100")
    ket = propagate_schrodinger(ham, psi, t)
    rho = np.outer(psi, psi.conj())
    dm = propagate_lindblad(ham, rho, rates_from_specs(device), t)
    drift = max(ket.info["norm_drift"], dm.info["trace_drift"])
    ket2 = propagate_schrodinger(ham, psi, t, max_step=ket.info["max_step"] / 2)
    dm2 = propagate_lindblad(ham, rho, rates_from_specs(device), t, max_step=dm.info["max_step"] / 2)
    halving = max(np.max(np.abs(ket.diagonal() - ket2.diagonal())), np.max(np.abs(dm.diagonal() - dm2.diagonal())))
    e3 = dressed_frequencies(device, HilbertConfig(3, 3, 3), THETA)
    e4 = dressed_frequencies(device, HilbertConfig(4, 4, 4), THETA)
    level = max(abs(e3[k] - e4[k]) for k in ("q1", "q2", "zz"))
    ok = drift <= 1e-8 and halving < 1e-6 and level < 1e-3
    record("hygiene: norm/trace <= 1e-8, step halving < 1e-6, 3->4 levels < 1 MHz", ok,
           f"drift {drift:.1e}, step-halving change {halving:.1e}, level drift {level * 1e3:.3f} MHz")
    assert ok
