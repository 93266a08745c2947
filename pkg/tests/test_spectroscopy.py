import numpy as np
import pytest

from pgsim.device import DeviceSpec, FluxPulse, coupler_frequency
from pgsim.hamiltonian import HilbertConfig, LabeledBasis, dressed_basis, static_hamiltonian
from pgsim.spectroscopy import (ChevronData, DampedOscillationRegressor, FitError, TwoStateResonanceModel,
                                chevron_rows, chevron_scan, fit_damped_oscillation, gate_labels, leakage_spectrum,
                                locate_resonance, predicted_resonance, resonance_profile, spectral_peak)

THETA = -0.108
T = np.linspace(0, 2000, 201)


def _series(f, gamma=0.0, amp=0.45, off=0.5, ph=0.3, t=T):
    return off + amp * np.exp(-gamma * t) * np.cos(2 * np.pi * f * t + ph)


def test_spectral_peak_interpolates():
    f, amp, _, floor = spectral_peak(T, _series(0.00283))
    assert f == pytest.approx(0.00283, rel=2e-3)
    assert amp > 10 * floor


def test_fit_noiseless_exact():
    fit = fit_damped_oscillation(T, _series(0.0028))
    assert fit.frequency == pytest.approx(0.0028, rel=1e-6)
    assert fit.decay == pytest.approx(0.0, abs=1e-9)
    assert fit.residual < 1e-9
    np.testing.assert_allclose(fit(T), _series(0.0028), atol=1e-8)


def test_fit_noisy_decaying(rng):
    gamma = 1 / 10_000
    good = 0
    for _ in range(100):
        p = _series(0.0028, gamma) + 0.01 * rng.standard_normal(len(T))
        fit = fit_damped_oscillation(T, p)
        good += abs(fit.frequency / 0.0028 - 1) < 0.01
    assert good == 100


def test_fit_rejects_flat_and_short():
    with pytest.raises(FitError, match="no oscillation"):
        fit_damped_oscillation(T, np.full(len(T), 0.3))
    with pytest.raises(FitError):
        fit_damped_oscillation(T[:5], _series(0.0028, t=T[:5]))
    with pytest.raises(FitError):
        # less than a period in the window
        fit_damped_oscillation(T, _series(0.0002))


def test_fit_scale_equivariant():
    p = _series(0.0031, 2e-4, ph=-1.1)
    a = fit_damped_oscillation(T, p)
    b = fit_damped_oscillation(T, 3.0 * p)
    assert b.frequency == pytest.approx(a.frequency, rel=1e-6)
    assert b.decay == pytest.approx(a.decay, rel=1e-5, abs=1e-10)
    assert b.phase == pytest.approx(a.phase, abs=1e-6)
    assert b.amplitude == pytest.approx(3 * a.amplitude, rel=1e-6)
    assert b.offset == pytest.approx(3 * a.offset, rel=1e-6)


def test_regressor_interface():
    est = DampedOscillationRegressor()
    p = _series(0.004)
    est.fit(T, p)
    np.testing.assert_allclose(est.predict(T), p, atol=1e-7)
    assert est.score(T, p) > 1 - 1e-9


def _synthetic_chevron(center, f_min, omega):
    pops = []
    for w in omega:
        f = np.hypot(f_min, w - center)
        pops.append(1 - (f_min / f) ** 2 * np.sin(np.pi * f * T) ** 2)
    return ChevronData(np.asarray(omega), T, np.array(pops), "|100>", "|100>", FluxPulse(THETA, 0.05, center, 2000.0))


def test_resonance_profile_symmetric_center():
    omega = 0.57 + np.linspace(-0.01, 0.01, 21)
    prof = resonance_profile(_synthetic_chevron(0.57, 0.0028, omega))
    assert prof.omega_res == pytest.approx(0.57, abs=1e-9)
    assert prof.f_min == pytest.approx(0.0028, rel=1e-3)


def test_resonance_profile_grid_reversal():
    omega = 0.57 + np.linspace(-0.01, 0.012, 23)
    chev = _synthetic_chevron(0.5703, 0.0028, omega)
    rev = ChevronData(omega[::-1], T, chev.populations[::-1], chev.initial, chev.tracked, chev.pulse)
    a, b = resonance_profile(chev), resonance_profile(rev)
    assert a.omega_res == b.omega_res and a.f_min == b.f_min


def test_two_state_model_exact():
    w = np.linspace(-0.01, 0.01, 9)
    f = np.sqrt(0.002**2 + (w - 0.001) ** 2)
    m = TwoStateResonanceModel().fit(w, f)
    assert m.omega_res_ == pytest.approx(0.001, abs=1e-10)
    assert m.f_min_ == pytest.approx(0.002, rel=1e-8)
    with pytest.raises(FitError):
        TwoStateResonanceModel().fit(w[:2], f[:2])


def test_chevron_flat_without_coupling(device):
    dev = DeviceSpec(device.q1, device.q2, device.coupler, 1e-300, 1e-300)
    cfg = HilbertConfig(2, 2, 2)
    tpl = FluxPulse(THETA, 0.065, 0.57, 200.0)
    chev = chevron_scan(dev, cfg, tpl, [0.56, 0.57], np.linspace(0, 200, 21))
    np.testing.assert_allclose(chev.populations, 1.0, atol=1e-12)


def test_chevron_columns_independent(device):
    cfg = HilbertConfig(2, 2, 2)
    tpl = FluxPulse(THETA, 0.065, 0.57, 100.0)
    grid = np.array([0.565, 0.57, 0.575])
    t = np.linspace(0, 100, 11)
    a = chevron_scan(device, cfg, tpl, grid, t)
    b = chevron_scan(device, cfg, tpl, grid[[2, 0, 1]], t, threads=2)
    np.testing.assert_array_equal(a.populations[[2, 0, 1]], b.populations)
    assert np.all(a.populations >= -1e-8) and np.all(a.populations <= 1 + 1e-8)
    cols, rows = chevron_rows(a)
    assert cols[0] == "time_ns" and rows.shape == (11, 4)
    with pytest.raises(ValueError):
        chevron_scan(device, cfg, tpl, [], t)


def test_predicted_resonance_near_bare_sum_and_difference(device, hil):
    iswap = predicted_resonance(device, hil, THETA, 0.065, "iswap")
    bswap = predicted_resonance(device, hil, THETA, 0.147, "bswap")
    assert abs(iswap - 0.577) < 0.02
    assert abs(bswap - (device.q1.frequency + device.q2.frequency)) < 0.05
    assert gate_labels("bswap") == ("000", "110")


def test_locate_resonance_rejects_zero_delta(device, hil):
    with pytest.raises(ValueError):
        locate_resonance(device, hil, THETA, 0.0, "iswap")


def test_leakage_threshold_and_sideband(device, hil):
    basis = LabeledBasis(hil)
    e, _ = dressed_basis(static_hamiltonian(device, hil, coupler_frequency(device, THETA)), basis)
    w = (e[basis.index("001")] - e[basis.index("010")]) / (2 * np.pi)
    tpl = FluxPulse(THETA, 0.05, w, 300.0)
    lines = leakage_spectrum(device, hil, tpl, [w], initial="010", duration=300.0, samples=256)
    assert lines and lines[0].label == "001"
    assert leakage_spectrum(device, hil, tpl, [w], initial="010", threshold=1.1, duration=300.0) == []
    with pytest.raises(ValueError):
        leakage_spectrum(device, hil, tpl, [w], threshold=0.0)


def test_leakage_quiet_between_lines(device, hil):
    tpl = FluxPulse(THETA, 0.147, 9.2, 300.0)
    lines = leakage_spectrum(device, hil, tpl, [9.15, 9.2], initial="000", subspace=("000", "110"),
                             duration=300.0, samples=256)
    assert lines == []
