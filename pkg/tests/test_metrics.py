import numpy as np
import pytest
from scipy.stats import unitary_group

from pgsim.device import FluxPulse
from pgsim.dynamics import DissipationRates, rates_from_specs
from pgsim.effective import ideal_gate
from pgsim.hamiltonian import HilbertConfig
from pgsim.metrics import (ChannelError, QuantumChannel, apply_z, average_fidelity, coherent_channel,
                           depolarizing_channel, haar_fidelity_mc, matrix_unit, optimal_z_angles, pauli_fidelity,
                           reconstruct_channel, report_rows, unitary_channel)

THETA = -0.108
SMALL = HilbertConfig(3, 3, 2)


def _amplitude_damping(gamma):
    k0 = np.diag([1, np.sqrt(1 - gamma)])
    k1 = np.array([[0, np.sqrt(gamma)], [0, 0]])
    return [np.kron(a, b) for a in (k0, k1) for b in (k0, k1)]


def _random_state(rng):
    z = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    z /= np.linalg.norm(z)
    return np.outer(z, z.conj())


def test_identity_channel():
    rep = average_fidelity(QuantumChannel.identity(), np.eye(4))
    assert rep.fidelity == pytest.approx(1.0, abs=1e-12)
    for gate in ("iswap", "bswap"):
        u = ideal_gate(gate)
        assert average_fidelity(unitary_channel(u), u, virtual_z=False).fidelity == pytest.approx(1.0, abs=1e-12)


def test_depolarizing_quarter_matches_monte_carlo():
    ch = depolarizing_channel(1.0)
    u = ideal_gate("iswap")
    assert pauli_fidelity(ch, u) == pytest.approx(0.25, abs=1e-12)
    mean, _ = haar_fidelity_mc(ch, u, 10_000, seed=1)
    assert round(mean, 3) == 0.25


@pytest.mark.parametrize("case", ["damping", "random_unitary", "partial_depol", "leaky"])
def test_two_design_agrees_with_monte_carlo(case):
    rng = np.random.default_rng(7)
    u = ideal_gate("iswap")
    if case == "damping":
        ch = QuantumChannel.from_kraus([u @ k for k in _amplitude_damping(0.2)])
    elif case == "random_unitary":
        ch = unitary_channel(unitary_group.rvs(4, random_state=rng))
    elif case == "partial_depol":
        ch = QuantumChannel(depolarizing_channel(0.3).superop @ unitary_channel(u).superop)
    else:
        ch = QuantumChannel(0.97 * unitary_channel(u).superop)
    exact = pauli_fidelity(ch, u)
    mean, err = haar_fidelity_mc(ch, u, 10_000, seed=3)
    # channels with state-independent fidelity give zero sample spread
    assert abs(exact - mean) <= 3 * err + 1e-12


def test_channel_linearity(rng):
    ch = QuantumChannel.from_kraus(_amplitude_damping(0.3))
    r1, r2 = _random_state(rng), _random_state(rng)
    a, b = 0.3 - 0.2j, 1.7
    assert np.max(np.abs(ch(a * r1 + b * r2) - (a * ch(r1) + b * ch(r2)))) < 1e-8


def test_images_round_trip(rng):
    ch = unitary_channel(unitary_group.rvs(4, random_state=rng))
    images = np.array([[ch(matrix_unit(m, n)) for n in range(4)] for m in range(4)])
    np.testing.assert_allclose(QuantumChannel.from_images(images).superop, ch.superop, atol=1e-14)
    assert ch.hermiticity_error() < 1e-14 and abs(ch.trace_deficit()) < 1e-14


def test_nonphysical_channel_raises():
    with pytest.raises(ChannelError):
        average_fidelity(QuantumChannel(1.5 * np.eye(16)), np.eye(4), virtual_z=False)


def test_virtual_z_recovers_local_phases():
    u = ideal_gate("bswap")
    angles = (0.4, -1.1, 0.9, 0.25)
    distorted = apply_z(unitary_channel(u), angles)
    assert pauli_fidelity(distorted, u) < 0.9
    rep = average_fidelity(distorted, u)
    assert rep.fidelity == pytest.approx(1.0, abs=1e-9)
    assert len(optimal_z_angles(distorted, u)) == 4


def test_zero_duration_identity(device):
    pulse = FluxPulse(THETA, 0.0, 0.57, 0.0, envelope="pure_square")
    ch = reconstruct_channel(device, SMALL, pulse, DissipationRates.zero())
    np.testing.assert_allclose(ch.superop, np.eye(16), atol=1e-10)
    assert ch.leakage == pytest.approx(0.0, abs=1e-12)


def test_strong_damping_drives_to_ground(device):
    pulse = FluxPulse(THETA, 0.0, 0.57, 200.0)
    rates = DissipationRates((0.1, 0.1, 0.1), (0.0, 0.0, 0.0))
    ch = reconstruct_channel(device, SMALL, pulse, rates)
    for m in range(4):
        out = ch(matrix_unit(m, m))
        assert out[0, 0].real > 0.98


def test_short_gate_pipeline(device):
    """Uncalibrated short iSWAP-like pulse: dissipative channel stays physical and close to coherent."""
    pulse = FluxPulse(THETA, 0.1, 0.567, 60.0, edge_time=10.0)
    coh = coherent_channel(device, SMALL, pulse)
    zero = reconstruct_channel(device, SMALL, pulse, DissipationRates.zero())
    assert np.max(np.abs(coh.superop - zero.superop)) < 1e-6
    assert coh.leakage == pytest.approx(zero.info["final_leakage"], abs=1e-8)
    lossy = reconstruct_channel(device, SMALL, pulse, rates_from_specs(device), threads=2)
    assert lossy.hermiticity_error() < 1e-10
    assert 0 <= lossy.trace_deficit() < 1e-3
    u = ideal_gate("iswap")
    f_zero = average_fidelity(zero, u).fidelity
    f_lossy = average_fidelity(lossy, u).fidelity
    assert f_lossy < f_zero
    cols, rows = report_rows([average_fidelity(lossy, u)])
    assert cols[:5] == ["delta_phi0", "gate_time_ns", "fidelity", "error", "leakage"]
    assert rows[0][0] == pytest.approx(0.1)
