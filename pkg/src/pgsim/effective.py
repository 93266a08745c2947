"""Time-dependent Schrieffer-Wolff model of the driven coupler.

The qubit-coupler transformation amplitudes ``alpha_{i,s}`` (``s = -1`` for
the exchange branch ``nu_i - nu_c``, ``s = +1`` for the sum branch
``nu_i + nu_c``) obey ``i alpha' + g_i - Delta_{i,s}(t) alpha = 0``. From them
follow the shifted qubit frequencies, the exchange (``Omega_-``) and
two-photon (``Omega_+``) couplings and the resonant gate strengths.

Strength conventions (all ordinary frequencies in GHz):

* ``Omega_eff`` multiplies ``XX +/- YY`` in the effective Hamiltonian,
* the rotation rate is ``J = 2 Omega_eff``; ``exp(-i 2 pi J t G)`` with
  ``G = (XX +/- YY)/2`` so a full swap needs ``J T = 1/4``,
* the population of the swapped state oscillates at ``4 Omega_eff``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special
from scipy.integrate import cumulative_trapezoid
from scipy.linalg import expm
from scipy.signal.windows import nuttall
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, check_array

from . import _kernels as K
from .device import CouplerDrive, DeviceSpec, FluxPulse, envelope_deficit, transfer_expansion

TWO_PI = 2 * np.pi
GATES = ("iswap", "bswap")
CHANNELS = ((1, -1), (1, +1), (2, -1), (2, +1))

#: sideband guard radius (GHz) and the photon orders it covers
SIDEBAND_GUARD = 0.010
SIDEBAND_ORDERS = 4
#: default harmonic cutoffs
K_MAX = 6
N_INT = 8


class SidebandError(ValueError):
    """Modulation frequency sits on an n-photon sideband of a qubit-coupler transition."""


def _check_gate(gate: str) -> str:
    g = str(gate).lower()
    if g not in GATES:
        raise ValueError(f"unknown gate {gate!r}; expected one of {GATES}")
    return g


def _gate_sign(gate: str) -> int:
    return -1 if _check_gate(gate) == "iswap" else +1


def sideband_violations(device: DeviceSpec, theta: float, omega_phi: float, guard: float = SIDEBAND_GUARD,
                        orders: int = SIDEBAND_ORDERS) -> list:
    """All ``(i, s, n)`` with ``|omega_phi - |Delta_{i,s}| / n| < guard``."""
    det = device.detunings(theta)
    bad = []
    for (i, s) in CHANNELS:
        for n in range(1, orders + 1):
            if abs(omega_phi - abs(det[(i, s)]) / n) < guard:
                bad.append((i, s, n))
    return bad


def _sign_name(s: int) -> str:
    return "+" if s > 0 else "-"


def _guard_message(bad) -> str:
    return ", ".join(f"(i={i}, {_sign_name(s)}, n={n})" for i, s, n in bad)


# --------------------------------------------------------------------------
# alpha ODE


@dataclass
class AlphaSolution:
    """``alpha_{i,s}(t)`` on a uniform grid, keyed by ``(i, s)``."""

    times: np.ndarray
    alpha: dict
    device: DeviceSpec
    pulse: FluxPulse
    solver: str = "ode"
    transfer: str = "exact"
    residual: float = 0.0
    warnings: list = field(default_factory=list)

    def __getitem__(self, key) -> np.ndarray:
        return self.alpha[key]


def _alpha_default_step(device: DeviceSpec, pulse: FluxPulse) -> float:
    h = 0.005
    if pulse.omega_phi > 0:
        h = min(h, pulse.period / 128)
    return h


def _alpha_integrate(device, drive: CouplerDrive, alpha0, t_grid, h_max, homogeneous: bool = False):
    chans = CHANNELS
    g = np.array([0.0 if homogeneous else TWO_PI * device.couplings[i - 1] for i, _ in chans])
    det0 = np.array([TWO_PI * (device.qubits[i - 1].frequency + s * drive.reference) for i, s in chans])
    ddet = np.array([TWO_PI * s for _, s in chans], dtype=float)
    nodes = np.array(K.NODES)
    weights = np.array([K.A1, K.A2])
    out = np.empty((len(t_grid), len(chans)), dtype=complex)
    out[0] = alpha0
    a = np.asarray(alpha0, dtype=complex).copy()
    for k in range(1, len(t_grid)):
        dt = t_grid[k] - t_grid[k - 1]
        n = max(int(math.ceil(dt / h_max - 1e-9)), 1)
        h = dt / n
        t = t_grid[k - 1] + h * np.arange(n)
        samples = np.stack([drive(t + nodes[0] * h), drive(t + nodes[1] * h)], axis=1)
        a = K.alpha_steps(a, g.astype(complex), det0, ddet, t_grid[k - 1], h, n, nodes, weights,
                          np.ascontiguousarray(samples))
        out[k] = a
    return out


def solve_alpha_ode(device: DeviceSpec, pulse: FluxPulse, transfer="exact", t_grid: Optional[Sequence] = None,
                    max_step: Optional[float] = None, guard: float = SIDEBAND_GUARD) -> AlphaSolution:
    """Integrate ``i alpha' + g - Delta(t) alpha = 0`` from ``alpha(0) = g / Delta(0)``.

    Sideband proximity does not stop the solve; it is recorded in
    ``warnings``. ``residual`` is the largest one-interval defect against a
    four-times refined solve, divided by ``max g``.
    """
    drive = CouplerDrive(device, pulse, transfer)
    if t_grid is None:
        t_grid = np.linspace(0.0, pulse.duration, int(round(pulse.duration / 0.05)) + 1)
    t_grid = np.asarray(t_grid, dtype=float)
    if len(t_grid) < 2 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("alpha time grid must be strictly increasing with >= 2 points")
    h = max_step or _alpha_default_step(device, pulse)
    nuc0 = drive.reference + float(drive(t_grid[0]))
    alpha0 = np.array([device.couplings[i - 1] / (device.qubits[i - 1].frequency + s * nuc0) for i, s in CHANNELS],
                      dtype=complex)
    coarse = _alpha_integrate(device, drive, alpha0, t_grid, h)
    # one-step defect: restart every interval from the coarse value with a finer step
    probe = slice(0, len(t_grid), max(1, len(t_grid) // 64))
    idx = np.arange(len(t_grid))[probe]
    idx = idx[idx < len(t_grid) - 1]
    defect = 0.0
    for k in idx:
        fine = _alpha_integrate(device, drive, coarse[k], t_grid[k:k + 2], h / 4)
        defect = max(defect, float(np.max(np.abs(fine[-1] - coarse[k + 1]))))
    notes = []
    if pulse.omega_phi > 0 and pulse.delta > 0:
        bad = sideband_violations(device, pulse.theta, pulse.omega_phi, guard)
        if bad:
            notes.append(f"sideband proximity {_guard_message(bad)}")
            warnings.warn(notes[-1], RuntimeWarning, stacklevel=2)
    alpha = {ch: coarse[:, j] for j, ch in enumerate(CHANNELS)}
    return AlphaSolution(t_grid, alpha, device, pulse, "ode", drive.transfer,
                         defect / max(device.couplings), notes)


def adiabatic_alpha(device: DeviceSpec, pulse: FluxPulse, transfer="exact",
                    t_grid: Optional[Sequence] = None) -> AlphaSolution:
    """Instantaneous ``alpha = g / Delta(t)``, dropping the time derivative."""
    drive = CouplerDrive(device, pulse, transfer)
    if t_grid is None:
        t_grid = np.linspace(0.0, pulse.duration, int(round(pulse.duration / 0.05)) + 1)
    t_grid = np.asarray(t_grid, dtype=float)
    nuc = drive.reference + np.asarray(drive(t_grid))
    alpha = {(i, s): (device.couplings[i - 1] / (device.qubits[i - 1].frequency + s * nuc)).astype(complex)
             for i, s in CHANNELS}
    return AlphaSolution(t_grid, alpha, device, pulse, "adiabatic", drive.transfer)


# --------------------------------------------------------------------------
# Fourier coefficients


@dataclass
class FourierAlpha:
    """Harmonic weights ``alpha_bar_{i,s}(k)`` for ``k = -K..K``.

    ``coefficients[(i, s)][k + K]`` holds harmonic ``k``.
    """

    coefficients: dict
    lam: float
    omega_phi: float
    kmax: int
    source: str = "bessel"

    def __call__(self, channel, k: int) -> complex:
        if abs(k) > self.kmax:
            return 0.0
        return complex(self.coefficients[channel][k + self.kmax])

    @property
    def harmonics(self) -> np.ndarray:
        return np.arange(-self.kmax, self.kmax + 1)


def modulation_lambda(device: DeviceSpec, pulse: FluxPulse) -> float:
    """``lambda = delta * d nu_c / d Phi / omega_phi`` (dimensionless)."""
    if not pulse.omega_phi > 0:
        raise ValueError("omega_phi must be > 0 for a harmonic expansion")
    return pulse.delta * transfer_expansion(device, pulse.theta).d1 / pulse.omega_phi


def _bessel_inner(lam_s: float, detuning: float, omega: float, n_int: int):
    n = np.arange(-n_int, n_int + 1)
    return n, special.jv(n, lam_s) / (n * omega + detuning)


def bessel_alpha(device: DeviceSpec, pulse: FluxPulse, kmax: int = K_MAX, n_int: int = N_INT,
                 guard: float = SIDEBAND_GUARD) -> FourierAlpha:
    """Jacobi-Anger series of the periodic part of ``alpha`` for a first-order transfer.

    ``alpha_bar_{i,s}(k) = g_i sum_n J_{k-n}(-s lam) J_n(s lam) / (n omega_phi + Delta_{i,s})``.
    """
    bad = sideband_violations(device, pulse.theta, pulse.omega_phi, guard)
    if bad:
        raise SidebandError(f"sideband proximity at omega_phi = {pulse.omega_phi} GHz: {_guard_message(bad)}")
    lam = modulation_lambda(device, pulse)
    det = device.detunings(pulse.theta)
    ks = np.arange(-kmax, kmax + 1)
    coeffs = {}
    for (i, s) in CHANNELS:
        n, inner = _bessel_inner(s * lam, det[(i, s)], pulse.omega_phi, n_int)
        outer = special.jv(ks[:, None] - n[None, :], -s * lam)
        coeffs[(i, s)] = (device.couplings[i - 1] * outer @ inner).astype(complex)
    return FourierAlpha(coeffs, lam, pulse.omega_phi, kmax, "bessel")


def integration_constant(device: DeviceSpec, pulse: FluxPulse, i: int, sign: int, t,
                         n_int: int = N_INT, check: bool = True) -> np.ndarray:
    """Homogeneous part ``C_{i,s}(t)`` fixed by ``alpha(0) = g / Delta``.

    ``C(t) = c exp(-i 2 pi (Delta t + s lam' sin(omega t)))`` with
    ``c = g (1/Delta - sum_n J_n(s lam) / (n omega + Delta))``; ``lam'``
    includes the ``1/2 pi`` of the phase convention. With ``check=False`` the
    series is returned even inside a sideband guard.
    """
    if check:
        bad = sideband_violations(device, pulse.theta, pulse.omega_phi)
        if bad:
            raise SidebandError(f"sideband proximity: {_guard_message(bad)}")
    lam = modulation_lambda(device, pulse)
    det = device.detunings(pulse.theta)[(i, sign)]
    g = device.couplings[i - 1]
    _, inner = _bessel_inner(sign * lam, det, pulse.omega_phi, n_int)
    c = g * (1.0 / det - inner.sum())
    t = np.asarray(t, dtype=float)
    phase = TWO_PI * det * t + sign * lam * np.sin(TWO_PI * pulse.omega_phi * t)
    return c * np.exp(-1j * phase)


def fourier_grid(pulse: FluxPulse, n_periods: int = 200, samples_per_period: int = 64) -> np.ndarray:
    """Uniform grid spanning exactly ``n_periods`` (endpoint excluded)."""
    n = n_periods * samples_per_period
    return np.arange(n) * (pulse.period / samples_per_period)


def fourier_coefficients(solution: AlphaSolution, kmax: int = K_MAX) -> FourierAlpha:
    """Windowed harmonic analysis of an alpha time series.

    The grid must hold a whole number of modulation periods (see
    :func:`fourier_grid`); a periodic four-term cosine window then gives zero
    leakage between harmonics and suppresses the non-harmonic homogeneous part.
    """
    t = solution.times
    omega = solution.pulse.omega_phi
    dt = np.diff(t)
    if not np.allclose(dt, dt[0], rtol=1e-9, atol=1e-12):
        raise ValueError("Fourier analysis needs a uniform grid")
    span = len(t) * dt[0]
    periods = span * omega
    if abs(periods - round(periods)) > 1e-6 or round(periods) < 8:
        raise ValueError(f"grid spans {periods:.6g} modulation periods; need a whole number >= 8")
    w = nuttall(len(t), sym=False)
    w = w / w.sum()
    ks = np.arange(-kmax, kmax + 1)
    basis = np.exp(-1j * TWO_PI * omega * np.outer(ks, t - t[0]))
    coeffs = {}
    for ch, series in solution.alpha.items():
        # harmonics are referenced to t = 0 of the drive
        shift = np.exp(-1j * TWO_PI * omega * ks * t[0])
        coeffs[ch] = (basis * w[None, :]) @ series * shift
    lam = modulation_lambda(solution.device, solution.pulse)
    return FourierAlpha(coeffs, lam, omega, kmax, solution.solver)


def alpha_fourier_ode(device: DeviceSpec, pulse: FluxPulse, transfer="first", kmax: int = K_MAX,
                      n_periods: int = 200, samples_per_period: int = 64, periodic_part: bool = True) -> FourierAlpha:
    """Harmonics of the numerically integrated ``alpha`` under a steady square drive.

    With ``periodic_part`` the homogeneous solution, which rotates at the
    non-harmonic frequency ``Delta``, is removed exactly using the one-period
    monodromy before the windowed analysis.
    """
    steady = pulse.replace(envelope="pure_square", duration=n_periods * pulse.period)
    grid = fourier_grid(steady, n_periods, samples_per_period)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sol = solve_alpha_ode(device, steady, transfer, grid)
    if periodic_part:
        drive = CouplerDrive(device, steady, transfer)
        h = _alpha_default_step(device, steady)
        hom = _alpha_integrate(device, drive, np.ones(len(CHANNELS), dtype=complex), grid, h, homogeneous=True)
        j = samples_per_period
        for c, ch in enumerate(CHANNELS):
            a = sol.alpha[ch]
            mono = hom[j, c]
            start = (a[j] - mono * a[0]) / (1.0 - mono)
            sol.alpha[ch] = a - (a[0] - start) * hom[:, c]
    return fourier_coefficients(sol, kmax)


# --------------------------------------------------------------------------
# effective couplings


@dataclass
class EffectiveCouplings:
    """Shifted frequencies, couplings and phases on the alpha grid (GHz, rad)."""

    times: np.ndarray
    omega_minus: np.ndarray
    omega_plus: np.ndarray
    shifted: np.ndarray
    phase_minus: np.ndarray
    phase_plus: np.ndarray


def couplings_from_alpha(alpha: dict, device: DeviceSpec):
    """``(Omega_-, Omega_+, shifted frequencies)`` from any alpha values (arrays or scalars)."""
    g1, g2 = device.couplings
    a = alpha
    om_minus = -0.5 * (g1 * np.conj(a[(2, +1)]) + g2 * a[(1, +1)] - g1 * np.conj(a[(2, -1)]) - g2 * a[(1, -1)])
    om_plus = -0.5 * (g1 * a[(2, +1)] + g2 * a[(1, +1)] - g1 * a[(2, -1)] - g2 * a[(1, -1)])
    shifted = np.array([q.frequency + g * np.real(a[(i, -1)] + a[(i, +1)])
                        for i, (q, g) in enumerate(zip(device.qubits, device.couplings), start=1)])
    return om_minus, om_plus, shifted


def effective_couplings(alpha: AlphaSolution, device: Optional[DeviceSpec] = None) -> EffectiveCouplings:
    device = device or alpha.device
    om_minus, om_plus, shifted = couplings_from_alpha(alpha.alpha, device)
    t = alpha.times
    phase_minus = TWO_PI * cumulative_trapezoid(shifted[0] - shifted[1], t, initial=0.0)
    phase_plus = TWO_PI * cumulative_trapezoid(shifted[0] + shifted[1], t, initial=0.0)
    return EffectiveCouplings(t, om_minus, om_plus, shifted, phase_minus, phase_plus)


def static_coupling(device: DeviceSpec, theta: float) -> float:
    """Constant-flux coupling ``(g1 g2 / 2)(1/D1- + 1/D2- - 1/D1+ - 1/D2+)``."""
    d = device.detunings(theta)
    g1, g2 = device.couplings
    return 0.5 * g1 * g2 * (1 / d[(1, -1)] + 1 / d[(2, -1)] - 1 / d[(1, +1)] - 1 / d[(2, +1)])


def resonant_harmonic(device: DeviceSpec, gate: str) -> int:
    """Harmonic ``k`` of ``Omega_-/+`` that cancels the bare phase ``nu_1 -/+ nu_2``."""
    s = _gate_sign(gate)
    return -int(np.sign(device.q1.frequency + s * device.q2.frequency))


def resonant_strength(fourier: FourierAlpha, device: DeviceSpec, gate: str, k: Optional[int] = None) -> float:
    """``Omega_eff = |Omega_bar(k)| / 2`` from harmonic weights of alpha."""
    gate = _check_gate(gate)
    k = resonant_harmonic(device, gate) if k is None else k
    g1, g2 = device.couplings
    a = fourier
    if gate == "iswap":
        val = -0.5 * (g1 * np.conj(a((2, +1), -k)) + g2 * a((1, +1), k)
                      - g1 * np.conj(a((2, -1), -k)) - g2 * a((1, -1), k))
    else:
        val = -0.5 * (g1 * a((2, +1), k) + g2 * a((1, +1), k) - g1 * a((2, -1), k) - g2 * a((1, -1), k))
    return 0.5 * abs(val)


def ode_gate_strength(device: DeviceSpec, theta: float, delta: float, gate: str, transfer="second",
                      omega_phi: Optional[float] = None, n_periods: int = 200) -> float:
    """Gate strength ``Omega_eff`` from the integrated alpha harmonics.

    ``omega_phi`` defaults to the dispersively corrected resonance.
    """
    gate = _check_gate(gate)
    if delta == 0:
        return 0.0
    if omega_phi is None:
        omega_phi = dispersive_shift(device, theta, delta, gate)["omega_phi"]
    pulse = FluxPulse(theta, delta, omega_phi, 1.0 / omega_phi * n_periods, envelope="pure_square")
    return resonant_strength(alpha_fourier_ode(device, pulse, transfer, n_periods=n_periods), device, gate)


# --------------------------------------------------------------------------
# closed-form strengths


@dataclass(frozen=True)
class GateStrengths:
    """Closed-form strengths (GHz) and the adiabatic validity ratio."""

    iswap: float
    bswap: float
    adiabatic: float
    validity_ratio: float


def _prefactor(device: DeviceSpec, theta: float, delta: float) -> tuple:
    d = device.detunings(theta)
    d1 = transfer_expansion(device, theta).d1
    return d, delta * device.g1 * device.g2 * d1


def gate_strength_iswap(device: DeviceSpec, theta: float, delta: float) -> float:
    """Leading-order exchange strength ``Omega_eff^-`` (GHz)."""
    d, pre = _prefactor(device, theta, delta)
    return 0.25 * pre * (1 / (d[(1, -1)] * d[(2, -1)]) + 1 / (d[(1, +1)] * d[(2, +1)]))


def gate_strength_bswap(device: DeviceSpec, theta: float, delta: float) -> float:
    """Leading-order two-photon strength ``Omega_eff^+`` (GHz)."""
    d, pre = _prefactor(device, theta, delta)
    return -0.25 * pre * (1 / (d[(1, -1)] * d[(2, +1)]) + 1 / (d[(1, +1)] * d[(2, -1)]))


def gate_strength_adiabatic(device: DeviceSpec, theta: float, delta: float) -> float:
    """Strength from instantaneous ``alpha = g / Delta(t)``; the same for both gates."""
    d, pre = _prefactor(device, theta, delta)
    return 0.125 * pre * sum(1 / d[ch] ** 2 for ch in CHANNELS)


def adiabatic_validity(device: DeviceSpec, theta: float, delta: float, omega_phi: float) -> dict:
    """``|delta d1| omega_phi / Delta_{i,s}^2`` per channel; adiabatic needs all << 1."""
    d = device.detunings(theta)
    d1 = transfer_expansion(device, theta).d1
    return {ch: abs(delta * d1) * omega_phi / d[ch] ** 2 for ch in CHANNELS}


def gate_strengths(device: DeviceSpec, theta: float, delta: float, gate: str = "iswap",
                   omega_phi: Optional[float] = None) -> GateStrengths:
    """All closed forms at once; ``validity_ratio`` is the worst channel at ``omega_phi``."""
    if omega_phi is None:
        s = _gate_sign(gate)
        omega_phi = abs(device.q1.frequency + s * device.q2.frequency)
    ratio = max(adiabatic_validity(device, theta, delta, omega_phi).values())
    return GateStrengths(gate_strength_iswap(device, theta, delta), gate_strength_bswap(device, theta, delta),
                         gate_strength_adiabatic(device, theta, delta), ratio)


# --------------------------------------------------------------------------
# dispersive shifts


def _shift_terms(device: DeviceSpec, theta: float, gate: str, guard: float):
    s = _gate_sign(gate)
    nu1, nu2 = device.q1.frequency, device.q2.frequency
    w = nu1 + s * nu2
    d = device.detunings(theta)
    d1 = transfer_expansion(device, theta).d1
    lamb, quad = [], []
    for i, (q, g) in enumerate(zip(device.qubits, device.couplings), start=1):
        dm, dp = d[(i, -1)], d[(i, +1)]
        for name, val in ((f"Delta_{i},-", dm), (f"Delta_{i},+", dp)):
            if abs(abs(w) - abs(val)) < guard:
                raise ValueError(f"D1 pole: |nu1 {'+' if s > 0 else '-'} nu2| = {abs(w):.6g} GHz is within "
                                 f"{guard} GHz of |{name}| = {abs(val):.6g} GHz")
        lamb.append(g**2 * (1 / dm + 1 / dp))
        quad.append(-(d1**2) / w**2 * g**2 * q.frequency * (w**2 - dm * dp) / ((w**2 - dm**2) * (w**2 - dp**2)))
    return s, w, np.array(lamb), np.array(quad)


def dispersive_shift(device: DeviceSpec, theta: float, delta: float, gate: str,
                     guard: float = SIDEBAND_GUARD) -> dict:
    """Zero-harmonic qubit shifts and the shifted resonance (GHz).

    Returns ``shift`` (per qubit), ``lamb`` and ``ac`` parts, and
    ``omega_phi = |nu1 +/- nu2 + shift1 +/- shift2|``.
    """
    s, w, lamb, quad = _shift_terms(device, theta, gate, guard)
    ac = quad * delta**2
    shift = lamb + ac
    omega_phi = abs(w + shift[0] + s * shift[1])
    return {"shift": shift, "lamb": lamb, "ac": ac, "omega_phi": float(omega_phi),
            "bare": float(abs(w))}


def resonance_shift_coefficients(device: DeviceSpec, theta: float, gate: str) -> tuple:
    """``(c0, c2)`` with resonance shift ``omega_phi - |nu1 +/- nu2| = c0 + c2 delta^2``."""
    s, w, lamb, quad = _shift_terms(device, theta, gate, SIDEBAND_GUARD)
    sgn = np.sign(w)
    return float(sgn * (lamb[0] + s * lamb[1])), float(sgn * (quad[0] + s * quad[1]))


class DeltaCalibrator(RegressorMixin, BaseEstimator):
    """Fit flux amplitude per drive unit from measured resonance shifts.

    Model: ``shift(a) = offset + c2 (scale a)^2`` with ``c2`` the quadratic
    coefficient of the dispersive resonance shift, so a straight-line fit of
    shift against ``a^2`` gives ``scale = sqrt(slope / c2)``.

    Parameters
    ----------
    device : DeviceSpec
    theta : float
        DC flux bias (Phi0).
    gate : {"iswap", "bswap"}
    """

    def __init__(self, device=None, theta=-0.108, gate="iswap"):
        self.device = device
        self.theta = theta
        self.gate = gate

    def fit(self, X, y):
        X, y = check_X_y(X, y, ensure_2d=False, y_numeric=True)
        a = np.asarray(X, dtype=float).reshape(len(y), -1)[:, 0]
        if len(y) < 3:
            raise ValueError(f"calibration needs >= 3 (amplitude, shift) pairs, got {len(y)}")
        design = np.column_stack([np.ones_like(a), a**2])
        if np.linalg.matrix_rank(design) < 2:
            raise ValueError("degenerate design matrix: amplitudes must not all share the same magnitude")
        (offset, slope), *_ = np.linalg.lstsq(design, y, rcond=None)
        _, c2 = resonance_shift_coefficients(self.device, self.theta, self.gate)
        if slope / c2 <= 0:
            raise ValueError(f"fitted slope {slope:.4g} has the wrong sign for the quadratic shift {c2:.4g}")
        self.scale_ = float(np.sqrt(slope / c2))
        self.offset_ = float(offset)
        self.c2_ = float(c2)
        self.residual_ = float(np.sqrt(np.mean((design @ [offset, slope] - y) ** 2)))
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "scale_")
        a = check_array(np.asarray(X, dtype=float).reshape(-1, 1))[:, 0]
        return self.offset_ + self.c2_ * (self.scale_ * a) ** 2


def calibrate_delta(measured: Sequence, device: DeviceSpec, theta: float, gate: str) -> dict:
    """Least-squares flux scale (Phi0 per drive unit) and constant offset (GHz)."""
    pairs = np.asarray(measured, dtype=float)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise ValueError("measured must be a sequence of (amplitude, shift) pairs")
    est = DeltaCalibrator(device, theta, gate).fit(pairs[:, :1], pairs[:, 1])
    return {"scale": est.scale_, "offset": est.offset_, "residual": est.residual_}


# --------------------------------------------------------------------------
# two-qubit operators and timing

_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_SP = np.array([[0, 0], [1, 0]], dtype=complex)  # |1><0|: adds an excitation


def gate_generator(gate: str) -> np.ndarray:
    """``(XX + YY)/2`` for iSWAP, ``(XX - YY)/2`` for bSWAP; basis ``|00>, |01>, |10>, |11>``."""
    s = 1 if _check_gate(gate) == "iswap" else -1
    return 0.5 * (np.kron(_X, _X) + s * np.kron(_Y, _Y))


def ideal_gate(gate: str, angle: float = np.pi / 2) -> np.ndarray:
    """``exp(-i angle G)``; ``angle = pi/2`` is the full swap."""
    return expm(-1j * angle * gate_generator(gate))


def resonant_gate_hamiltonian(strength: complex, gate: str) -> np.ndarray:
    """``Omega sigma+_1 sigma-_2 + h.c.`` (iSWAP) or ``Omega sigma+_1 sigma+_2 + h.c.`` (bSWAP), GHz."""
    if _check_gate(gate) == "iswap":
        op = np.kron(_SP, _SP.conj().T)
    else:
        op = np.kron(_SP, _SP)
    h = strength * op
    return h + h.conj().T


def effective_two_qubit_hamiltonian(couplings: EffectiveCouplings, gate: str, t: float) -> np.ndarray:
    """On-resonance form with the coupling sampled at ``t`` (phase removed)."""
    series = couplings.omega_minus if _check_gate(gate) == "iswap" else couplings.omega_plus
    value = complex(np.interp(t, couplings.times, series.real) + 1j * np.interp(t, couplings.times, series.imag))
    return resonant_gate_hamiltonian(value, gate)


def gate_time_for_angle(strength: float, pulse: FluxPulse, angle: float = np.pi / 2,
                        max_duration: float = 1e4) -> float:
    """Shortest duration with ``2 pi strength * int_0^T E(t) dt = angle`` (ns).

    ``strength`` is the rotation rate ``J = 2 Omega_eff`` in GHz; every
    Gaussian edge adds its missing area to the square-pulse time.
    """
    if not strength > 0:
        raise ValueError("strength must be > 0")
    flat = angle / (TWO_PI * strength)
    if pulse.envelope == "pure_square":
        t = flat
    else:
        t = flat + 2 * envelope_deficit(pulse)
        t = max(t, 2 * pulse.edge_time + 1e-9)
    if t > max_duration:
        raise ValueError(f"angle {angle:.4g} unreachable: needs {t:.4g} ns > max {max_duration} ns")
    return float(t)


def strengths_table(device: DeviceSpec, theta: float, deltas: Sequence[float]) -> np.ndarray:
    """Rows ``(delta, iswap, bswap, adiabatic)`` in GHz."""
    return np.array([[d, gate_strength_iswap(device, theta, d), gate_strength_bswap(device, theta, d),
                      gate_strength_adiabatic(device, theta, d)] for d in deltas]).reshape(-1, 4)
