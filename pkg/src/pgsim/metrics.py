"""Process reconstruction, Haar-average gate fidelity and gate calibration.

Channels act on the two-qubit computational subspace spanned by the dressed
states ``|00>, |01>, |10>, |11>`` (prepared with the coupler in its ground
state) and are
expressed in the frame rotating with the dressed static energies. The coupler
is traced out; population that ends in higher transmon levels is lost from the
channel and reported as leakage.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import minimize

from .device import DeviceSpec, FluxPulse, coupler_frequency
from .dynamics import DissipationRates, propagate_operators, propagate_unitary
from .effective import gate_time_for_angle, ideal_gate, ode_gate_strength
from .hamiltonian import HilbertConfig, LabeledBasis, dressed_basis, driven_hamiltonian, static_hamiltonian

D = 4
TRACE_TOL = 1e-6
FIDELITY_TOL = 1e-6
LEAKAGE_SAMPLES = 65
CAL_SCAN_HALF_WIDTH = 0.008

_PAULI_1Q = (np.eye(2, dtype=complex), np.array([[0, 1], [1, 0]], dtype=complex),
             np.array([[0, -1j], [1j, 0]], dtype=complex), np.array([[1, 0], [0, -1]], dtype=complex))
PAULIS = tuple(np.kron(a, b) for a, b in itertools.product(_PAULI_1Q, repeat=2))


class ChannelError(RuntimeError):
    """Reconstructed channel or fidelity is not physical."""


def matrix_unit(m: int, n: int, d: int = D) -> np.ndarray:
    e = np.zeros((d, d), dtype=complex)
    e[m, n] = 1.0
    return e


@dataclass
class QuantumChannel:
    """Linear map on 4x4 density matrices.

    ``superop`` acts on row-major vectorised matrices: column ``4 m + n`` is
    the image of ``|m><n|``.
    """

    superop: np.ndarray
    pulse: Optional[FluxPulse] = None
    gate_time: float = 0.0
    leakage: float = 0.0
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.superop = np.asarray(self.superop, dtype=complex)
        if self.superop.shape != (D * D, D * D):
            raise ValueError(f"superoperator must be 16x16, got {self.superop.shape}")

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        rho = np.asarray(rho, dtype=complex)
        return (self.superop @ rho.reshape(-1)).reshape(D, D)

    @classmethod
    def from_images(cls, images: np.ndarray, **kw) -> "QuantumChannel":
        """Build from ``images[m, n] = E(|m><n|)``."""
        images = np.asarray(images, dtype=complex).reshape(D * D, D * D)
        return cls(images.T.copy(), **kw)

    @classmethod
    def from_kraus(cls, kraus: Sequence[np.ndarray], **kw) -> "QuantumChannel":
        s = sum(np.kron(k, k.conj()) for k in kraus)
        return cls(s, **kw)

    @classmethod
    def identity(cls) -> "QuantumChannel":
        return cls(np.eye(D * D, dtype=complex))

    def trace_deficit(self) -> float:
        """Mean trace lost over the basis inputs (zero for trace-preserving maps)."""
        return float(1.0 - np.real(np.trace(self(np.eye(D)))) / D)

    def hermiticity_error(self) -> float:
        err = 0.0
        for m, n in itertools.product(range(D), repeat=2):
            a = self(matrix_unit(m, n))
            b = self(matrix_unit(n, m))
            err = max(err, float(np.max(np.abs(a - b.conj().T))))
        return err


def unitary_channel(u: np.ndarray) -> QuantumChannel:
    return QuantumChannel.from_kraus([np.asarray(u, dtype=complex)])


def depolarizing_channel(p: float = 1.0) -> QuantumChannel:
    """``rho -> (1 - p) rho + p Tr(rho) I / 4``."""
    s = (1 - p) * np.eye(D * D, dtype=complex)
    s += p / D * np.outer(np.eye(D).reshape(-1), np.eye(D).reshape(-1))
    return QuantumChannel(s)


# --------------------------------------------------------------------------
# fidelity


@dataclass(frozen=True)
class FidelityReport:
    fidelity: float
    error: float
    leakage: float
    gate_time: float
    pulse: Optional[FluxPulse] = None
    z_angles: tuple = (0.0, 0.0, 0.0, 0.0)
    trace_deficit: float = 0.0
    mc_fidelity: float = float("nan")
    mc_stderr: float = float("nan")


def _phase_diag(a: float, b: float) -> np.ndarray:
    # qubit 1 is the left tensor factor
    return np.exp(1j * np.array([0.0, b, a, a + b]))


def _local_z(angles) -> tuple:
    pre = np.diag(_phase_diag(angles[0], angles[1]))
    post = np.diag(_phase_diag(angles[2], angles[3]))
    return pre, post


def pauli_fidelity(channel: QuantumChannel, ideal: np.ndarray) -> float:
    """Haar-average state fidelity through the 2-design Pauli sum.

    Valid for trace-decreasing maps: the constant term is ``d Tr E(I)``,
    which reduces to ``d^2`` when no trace is lost.
    """
    u = np.asarray(ideal, dtype=complex)
    total = sum(np.trace(u @ p.conj().T @ u.conj().T @ channel(p)) for p in PAULIS)
    total += D * np.trace(channel(np.eye(D)))
    return float(np.real(total) / (D * D * (D + 1)))


# bit patterns of |00>, |01>, |10>, |11>
_BITS = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)


def _vec_phase(a: float, b: float) -> np.ndarray:
    # phase picked up by |i><j| under the local Z, row-major
    ph = _BITS[:, 0] * a + _BITS[:, 1] * b
    return (ph[:, None] - ph[None, :]).reshape(-1)


def _corrected(weights: np.ndarray, angles) -> float:
    pre = _vec_phase(angles[0], angles[1])
    post = _vec_phase(angles[2], angles[3])
    return float(np.real(np.sum(weights * np.exp(1j * (post[:, None] + pre[None, :])))))


def optimal_z_angles(channel: QuantumChannel, ideal: np.ndarray, seed: int = 0) -> tuple:
    """Local Z rotations before and after the channel maximising the overlap with ``ideal``.

    Returns ``(pre_1, pre_2, post_1, post_2)`` in radians.
    """
    u = np.asarray(ideal, dtype=complex)
    weights = np.kron(u, u.conj()).conj() * channel.superop
    rng = np.random.default_rng(seed)
    starts = [np.zeros(4)] + [rng.uniform(-np.pi, np.pi, 4) for _ in range(8)]
    best = None
    for x0 in starts:
        res = minimize(lambda x: -_corrected(weights, x), x0, method="BFGS", options={"gtol": 1e-12})
        if best is None or res.fun < best.fun - 1e-14:
            best = res
    ang = (best.x + np.pi) % (2 * np.pi) - np.pi
    return tuple(float(a) for a in ang)


def apply_z(channel: QuantumChannel, angles) -> QuantumChannel:
    """Channel followed and preceded by local Z rotations ``(pre_1, pre_2, post_1, post_2)``."""
    pre, post = _local_z(angles)
    s = np.kron(post, post.conj()) @ channel.superop @ np.kron(pre, pre.conj())
    return QuantumChannel(s, channel.pulse, channel.gate_time, channel.leakage, dict(channel.info))


def average_fidelity(channel: QuantumChannel, ideal: np.ndarray, virtual_z: bool = True,
                     seed: int = 0) -> FidelityReport:
    """Haar-average fidelity to ``ideal``, optionally after optimal local Z corrections."""
    angles = optimal_z_angles(channel, ideal, seed) if virtual_z else (0.0, 0.0, 0.0, 0.0)
    corrected = apply_z(channel, angles) if virtual_z else channel
    f = pauli_fidelity(corrected, ideal)
    if not -FIDELITY_TOL <= f <= 1.0 + FIDELITY_TOL:
        raise ChannelError(f"fidelity {f:.9f} outside [0, 1]; trace deficit {channel.trace_deficit():.3e}, "
                           f"hermiticity error {channel.hermiticity_error():.3e}")
    f = min(max(f, 0.0), 1.0)
    return FidelityReport(f, 1.0 - f, channel.leakage, channel.gate_time, channel.pulse, angles,
                          channel.trace_deficit())


def haar_fidelity_mc(channel: QuantumChannel, ideal: np.ndarray, samples: int = 10_000, seed: int = 0) -> tuple:
    """Monte Carlo Haar average ``<psi| U^dag E(psi) U |psi>``; returns ``(mean, standard_error)``."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((samples, D)) + 1j * rng.standard_normal((samples, D))
    psi = z / np.linalg.norm(z, axis=1, keepdims=True)
    rho = np.einsum("si,sj->sij", psi, psi.conj()).reshape(samples, -1)
    out = (rho @ channel.superop.T).reshape(samples, D, D)
    target = psi @ np.asarray(ideal, dtype=complex).T
    vals = np.real(np.einsum("si,sij,sj->s", target.conj(), out, target))
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(samples))


# --------------------------------------------------------------------------
# reconstruction


@dataclass(frozen=True)
class _Frame:
    energies: np.ndarray
    vectors: np.ndarray
    comp: list
    blocks: np.ndarray  # (4, levels_c) indices of |a, c>

    def rotate(self, rho: np.ndarray, t: float) -> np.ndarray:
        """Lab-frame full density matrices to dressed rotating-frame matrices."""
        r = self.vectors.conj().T @ rho @ self.vectors
        ph = np.exp(1j * self.energies * t)
        return ph[:, None] * r * ph.conj()[None, :]

    def reduce(self, r: np.ndarray) -> np.ndarray:
        """Trace out the coupler and drop non-computational transmon levels."""
        out = np.zeros(r.shape[:-2] + (D, D), dtype=complex)
        for c in range(self.blocks.shape[1]):
            idx = self.blocks[:, c]
            out += r[..., idx[:, None], idx[None, :]]
        return out


def _frame(device: DeviceSpec, config: HilbertConfig, theta: float) -> _Frame:
    basis = LabeledBasis(config)
    static = static_hamiltonian(device, config, float(coupler_frequency(device, theta)))
    e, v = dressed_basis(static, basis)
    blocks = np.array([[basis.index((a, b, c)) for c in range(config.levels_c)] for a in (0, 1) for b in (0, 1)])
    return _Frame(e, v, basis.computational(0), blocks)


def _chunks(n: int, parts: int) -> list:
    parts = max(1, min(parts, n))
    return [list(c) for c in np.array_split(np.arange(n), parts)]


def reconstruct_channel(device: DeviceSpec, config: HilbertConfig, pulse: FluxPulse, rates: DissipationRates,
                        transfer: str = "exact", leakage_samples: int = LEAKAGE_SAMPLES, threads: int = 1,
                        max_step: Optional[float] = None, segment: Optional[float] = None) -> QuantumChannel:
    """Propagate the 16 matrix units ``|m><n|`` through the master equation.

    The channel is read out in the rotating frame of the dressed static
    energies. ``leakage`` is the time average over the pulse of the population
    outside the computational transmon levels (any coupler state), averaged
    over the four basis inputs, which equals the Haar average. At the end of
    the pulse it coincides with the channel's trace loss.
    """
    fr = _frame(device, config, pulse.theta)
    ham = driven_hamiltonian(device, config, pulse, transfer)
    vc = fr.vectors[:, fr.comp]
    ops = np.array([np.outer(vc[:, m], vc[:, n].conj()) for m in range(D) for n in range(D)])
    t_grid = np.linspace(0.0, pulse.duration, max(int(leakage_samples), 2))
    groups = _chunks(len(ops), threads)

    def run(idx):
        return propagate_operators(ham, ops[idx], rates, t_grid, max_step, segment)

    if threads > 1 and len(groups) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, groups))
    else:
        parts = [run(g) for g in groups]
    traj = np.concatenate(parts, axis=1)  # (n_t, 16, d, d)

    final = traj[-1]
    expected = np.eye(D).reshape(-1)
    drift = float(np.max(np.abs(np.trace(final, axis1=1, axis2=2) - expected)))
    if drift > TRACE_TOL:
        raise ChannelError(f"full-space trace drift {drift:.2e} exceeds {TRACE_TOL:g}")
    rot = fr.rotate(final, pulse.duration)
    images = fr.reduce(rot)

    diag = traj[:, [D * m + m for m in range(D)]]
    keep = fr.vectors[:, fr.blocks.reshape(-1)]
    comp_pop = np.real(np.einsum("ji,tsjk,ki->ts", keep.conj(), diag, keep))
    leak = np.clip(1.0 - comp_pop.mean(axis=1), 0.0, None)
    leakage = float(trapezoid(leak, t_grid) / pulse.duration) if pulse.duration > 0 else float(leak[-1])
    ch = QuantumChannel.from_images(images, pulse=pulse, gate_time=pulse.duration, leakage=leakage,
                                    info={"trace_drift": drift, "final_leakage": float(leak[-1])})
    return ch


def coherent_channel(device: DeviceSpec, config: HilbertConfig, pulse: FluxPulse, transfer: str = "exact",
                     max_step: Optional[float] = None) -> QuantumChannel:
    """Dissipation-free channel from four ket propagations (fast path for calibration).

    ``leakage`` here is the end-of-pulse value, not the time average.
    """
    fr = _frame(device, config, pulse.theta)
    ham = driven_hamiltonian(device, config, pulse, transfer)
    t_grid = [0.0, pulse.duration]
    if ham.periodic is not None:
        w0, w1, _ = ham.periodic
        t_grid = [0.0, 0.5 * (w0 + w1), w1, pulse.duration]
    kets = propagate_unitary(ham, t_grid, fr.vectors[:, fr.comp], max_step)[-1]
    ph = np.exp(1j * fr.energies * pulse.duration)
    amp = ph[:, None] * (fr.vectors.conj().T @ kets)  # (d, 4)
    blocks = amp[fr.blocks]  # (4 a, levels_c, 4 inputs)
    images = np.einsum("acm,bcn->mnab", blocks, blocks.conj())
    comp = np.sum(np.abs(blocks) ** 2, axis=(0, 1))
    return QuantumChannel.from_images(images, pulse=pulse, gate_time=pulse.duration,
                                      leakage=float(np.clip(1.0 - comp.mean(), 0.0, None)))


# --------------------------------------------------------------------------
# calibration and sweeps


@dataclass(frozen=True)
class Calibration:
    pulse: FluxPulse
    coherent_fidelity: float
    initial_pulse: FluxPulse
    evaluations: int


def initial_gate_pulse(device: DeviceSpec, config: HilbertConfig, theta: float, delta: float, gate: str,
                       edge_time: float = 20.0) -> FluxPulse:
    """Resonance from the dressed spectrum plus the modulation shift; time from the ODE strength."""
    from .spectroscopy import predicted_resonance

    w = predicted_resonance(device, config, theta, delta, gate)
    strength = ode_gate_strength(device, theta, delta, gate, omega_phi=w)
    probe = FluxPulse(theta, delta, w, 2 * edge_time + 1.0, edge_time)
    t = gate_time_for_angle(2 * strength, probe)
    return FluxPulse(theta, delta, w, t, edge_time)


def calibrate_gate(device: DeviceSpec, config: HilbertConfig, theta: float, delta: float, gate: str,
                   edge_time: float = 20.0, transfer: str = "exact", virtual_z: bool = True,
                   pulse: Optional[FluxPulse] = None, scan_half_width: float = CAL_SCAN_HALF_WIDTH,
                   xatol: float = 1e-2, max_evaluations: int = 200) -> Calibration:
    """Maximise the coherent fidelity over duration and modulation frequency.

    A coarse scan of ``omega_phi`` at the initial duration (step a third of
    the swap frequency, over ``+- scan_half_width`` GHz) locates the
    resonance; Nelder-Mead then refines both parameters.
    """
    start = pulse or initial_gate_pulse(device, config, theta, delta, gate, edge_time)
    target = ideal_gate(gate)
    flat = max(start.duration - 2 * edge_time, 1.0)
    swap_freq = 1.0 / (2 * flat)  # population oscillation frequency of a pi/2 rotation
    cache = {}

    def infidelity(t, w):
        key = (round(float(t), 9), round(float(w), 12))
        if key not in cache:
            if t <= 2 * edge_time + 1e-6 or w <= 0:
                cache[key] = 1.0
            else:
                ch = coherent_channel(device, config, start.replace(duration=float(t), omega_phi=float(w)), transfer)
                cache[key] = 1.0 - average_fidelity(ch, target, virtual_z).fidelity
        return cache[key]

    w0 = start.omega_phi
    if scan_half_width > 0:
        n = int(np.ceil(scan_half_width / (swap_freq / 3)))
        grid = w0 + np.linspace(-scan_half_width, scan_half_width, 2 * n + 1)
        grid = grid[grid > 0]
        w0 = float(grid[np.argmin([infidelity(start.duration, w) for w in grid])])

    # simplex in units of 1 ns and the swap frequency
    def objective(x):
        return infidelity(start.duration + x[0], w0 + x[1] * swap_freq)

    simplex = np.array([[0.0, 0.0], [0.05 * start.duration, 0.0], [0.0, 0.2]])
    res = minimize(objective, np.zeros(2), method="Nelder-Mead",
                   options={"initial_simplex": simplex, "xatol": xatol, "fatol": 1e-7, "maxfev": max_evaluations})
    best = start.replace(duration=float(start.duration + res.x[0]), omega_phi=float(w0 + res.x[1] * swap_freq))
    return Calibration(best, 1.0 - float(res.fun), start, len(cache))


def gate_error_sweep(device: DeviceSpec, config: HilbertConfig, rates: DissipationRates, gate: str,
                     deltas: Sequence[float], theta: float, edge_time: float = 20.0, transfer: str = "exact",
                     virtual_z: bool = True, threads: int = 1, mc_samples: int = 0, seed: int = 0) -> list:
    """Calibrate, reconstruct and score the gate at each modulation amplitude.

    With ``mc_samples > 0`` each report also carries a Haar Monte Carlo
    estimate of the corrected channel's fidelity (seeded per point).
    """
    target = ideal_gate(gate)

    def point(args):
        k, delta = args
        cal = calibrate_gate(device, config, theta, float(delta), gate, edge_time, transfer, virtual_z)
        ch = reconstruct_channel(device, config, cal.pulse, rates, transfer)
        rep = average_fidelity(ch, target, virtual_z)
        if mc_samples > 0:
            mean, err = haar_fidelity_mc(apply_z(ch, rep.z_angles), target, mc_samples, seed + k)
            rep = replace(rep, mc_fidelity=mean, mc_stderr=err)
        return rep

    items = list(enumerate(deltas))
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(point, items))
    return [point(x) for x in items]


def report_rows(reports: Sequence[FidelityReport]):
    """``(columns, rows)`` for CSV export; Monte Carlo columns only when present."""
    columns = ["delta_phi0", "gate_time_ns", "fidelity", "error", "leakage", "omega_phi_GHz"]
    with_mc = any(np.isfinite(r.mc_fidelity) for r in reports)
    if with_mc:
        columns += ["mc_fidelity", "mc_stderr"]
    rows = []
    for r in reports:
        row = [r.pulse.delta, r.gate_time, r.fidelity, r.error, r.leakage, r.pulse.omega_phi]
        if with_mc:
            row += [r.mc_fidelity, r.mc_stderr]
        rows.append(row)
    return columns, rows
