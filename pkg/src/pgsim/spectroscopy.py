"""Chevron scans, oscillation fitting, resonance extraction and leakage spectra."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import least_squares
from scipy.signal.windows import hann
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .device import DeviceSpec, FluxPulse, coupler_frequency
from .dynamics import populations, propagate_schrodinger
from .effective import dispersive_shift
from .hamiltonian import (HilbertConfig, LabeledBasis, dressed_basis, driven_hamiltonian, state_vector,
                          static_hamiltonian)

#: default chevron half-widths (GHz) around the predicted resonance
CHEVRON_HALF_WIDTH = {"iswap": 0.015, "bswap": 0.008}
CHEVRON_POINTS = 41
CHEVRON_TIMES = 201
CHEVRON_DURATION = 2000.0
ZERO_PAD = 8
LEAKAGE_THRESHOLD = 1e-5


class FitError(RuntimeError):
    """Oscillation or resonance fit failed."""


def _map(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------
# spectral peak and damped-oscillation fit


def spectral_peak(t: np.ndarray, p: np.ndarray, zero_pad: int = ZERO_PAD, fmin: float = 0.0,
                  fmax: Optional[float] = None):
    """Dominant frequency of a uniformly sampled series.

    Hann window, zero padding and quadratic interpolation of the log
    magnitude around the peak bin. Returns ``(frequency, amplitude, phase,
    noise_floor)``; ``amplitude`` estimates the cosine amplitude.
    """
    t = np.asarray(t, dtype=float)
    p = np.asarray(p, dtype=float)
    dt = (t[-1] - t[0]) / (len(t) - 1)
    x = p - p.mean()
    w = hann(len(x), sym=False)
    nfft = zero_pad * len(x)
    spec = np.fft.rfft(x * w, nfft)
    freqs = np.fft.rfftfreq(nfft, dt)
    mag = np.abs(spec)
    band = freqs >= fmin
    if fmax is not None:
        band &= freqs <= fmax
    # skip the DC lobe left by the mean removal
    band &= np.arange(len(freqs)) >= zero_pad
    if not np.any(band):
        return 0.0, 0.0, 0.0, 0.0
    idx = np.flatnonzero(band)
    k = idx[np.argmax(mag[idx])]
    f = freqs[k]
    if 0 < k < len(mag) - 1 and mag[k - 1] > 0 and mag[k + 1] > 0 and mag[k] > 0:
        a, b, c = np.log(mag[k - 1]), np.log(mag[k]), np.log(mag[k + 1])
        denom = a - 2 * b + c
        if denom < 0:
            f = f + 0.5 * (a - c) / denom * (freqs[1] - freqs[0])
    amp = 2 * mag[k] / w.sum()
    phase = float(np.angle(spec[k] * np.exp(2j * np.pi * freqs[k] * t[0])))
    floor = 2 * float(np.median(mag[idx])) / w.sum()
    return float(f), float(amp), phase, floor


@dataclass(frozen=True)
class OscillationFit:
    """``p(t) = offset + amplitude exp(-decay t) cos(2 pi frequency t + phase)``."""

    frequency: float
    decay: float
    amplitude: float
    offset: float
    phase: float
    residual: float

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.offset + self.amplitude * np.exp(-self.decay * t) * np.cos(2 * np.pi * self.frequency * t
                                                                                 + self.phase)


def _model(x, t):
    f, gam, amp, off, ph = x
    return off + amp * np.exp(-gam * t) * np.cos(2 * np.pi * f * t + ph)


class DampedOscillationRegressor(RegressorMixin, BaseEstimator):
    """Least-squares fit of a single exponentially damped cosine.

    Parameters
    ----------
    zero_pad : int
        FFT zero-padding factor for the initial frequency guess.
    max_nfev : int
        Iteration budget per least-squares start.
    peak_to_floor : float
        Minimum ratio of spectral peak to median spectral level.
    """

    def __init__(self, zero_pad: int = ZERO_PAD, max_nfev: int = 2000, peak_to_floor: float = 4.0):
        self.zero_pad = zero_pad
        self.max_nfev = max_nfev
        self.peak_to_floor = peak_to_floor

    def fit(self, X, y):
        t = np.asarray(X, dtype=float).reshape(-1)
        p = np.asarray(y, dtype=float).reshape(-1)
        if t.shape != p.shape:
            raise ValueError("time and value arrays differ in length")
        if len(t) < 8:
            raise FitError(f"need >= 8 samples, got {len(t)}")
        if not np.all(np.isfinite(p)) or np.any(np.diff(t) <= 0):
            raise FitError("series must be finite on a strictly increasing time grid")
        if not np.allclose(np.diff(t), t[1] - t[0], rtol=1e-6, atol=1e-12):
            raise FitError("fit needs a uniform time grid")
        span = t[-1] - t[0]
        nyquist = 0.5 / (t[1] - t[0])
        ptp = float(np.ptp(p))
        f0, a0, ph0, floor = spectral_peak(t, p, self.zero_pad)
        if ptp <= 1e-12 * max(1.0, float(np.max(np.abs(p)))) or a0 <= self.peak_to_floor * floor or a0 == 0:
            raise FitError("no oscillation detected")
        if f0 * span < 1.0:
            raise FitError(f"series spans {f0 * span:.2f} < 1 oscillation period")
        tr = t - t[0]
        lo = [0.0, 0.0, 0.0, -np.inf, -np.inf]
        hi = [nyquist, np.inf, ptp, np.inf, np.inf]
        best = None
        for ph in (ph0, ph0 + np.pi / 2, ph0 - np.pi / 2):
            x0 = np.array([f0, 0.0, min(a0, ptp * (1 - 1e-9)), p.mean(), ph])
            res = least_squares(lambda x: _model(x, tr) - p, x0, bounds=(lo, hi), max_nfev=self.max_nfev,
                                x_scale=[max(f0, 1e-9), 1.0 / span, max(ptp, 1e-12), max(ptp, 1e-12), 1.0],
                                xtol=1e-14, ftol=1e-14, gtol=1e-14)
            if best is None or res.cost < best.cost:
                best = res
        if best.status <= 0:
            raise FitError(f"least squares did not converge: {best.message}")
        f, gam, amp, off, ph = best.x
        # reference the phase to t = 0
        ph = ph - 2 * np.pi * f * t[0]
        amp_t0 = amp * np.exp(gam * t[0])
        ph = float((ph + np.pi) % (2 * np.pi) - np.pi)
        rms = float(np.sqrt(np.mean(best.fun**2)))
        self.fit_ = OscillationFit(float(f), float(gam), float(amp_t0), float(off), ph, rms)
        self.frequency_ = self.fit_.frequency
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        return self.fit_(np.asarray(X, dtype=float).reshape(-1))


def fit_damped_oscillation(t: Sequence[float], p: Sequence[float], **kwargs) -> OscillationFit:
    """Fit a damped cosine to ``(t, p)``; see :class:`DampedOscillationRegressor`."""
    return DampedOscillationRegressor(**kwargs).fit(t, p).fit_


# --------------------------------------------------------------------------
# chevrons


@dataclass
class ChevronData:
    """Population of ``tracked`` after time ``t`` of modulation at each ``omega_phi``.

    ``populations[j, k]`` belongs to ``omega_phi[j]`` and ``times[k]``.
    """

    omega_phi: np.ndarray
    times: np.ndarray
    populations: np.ndarray
    initial: str
    tracked: str
    pulse: FluxPulse
    readout: str = "bare"


def predicted_resonance(device: DeviceSpec, config: HilbertConfig, theta: float, delta: float, gate: str) -> float:
    """Dressed static transition frequency plus the modulation-induced (AC) shift, GHz.

    The static part comes from the truncated transmon spectrum, so it already
    contains the level-2 contributions missing from the two-level shift.
    """
    from .hamiltonian import dressed_frequencies

    f = dressed_frequencies(device, config, theta)
    ac = dispersive_shift(device, theta, delta, gate)["ac"]
    if gate == "iswap":
        return float(abs(f["q1"] - f["q2"] + ac[0] - ac[1]))
    return float(abs(f["q1"] + f["q2"] + f["zz"] + ac[0] + ac[1]))


def default_chevron_grid(device: DeviceSpec, config: HilbertConfig, theta: float, delta: float, gate: str,
                         points: int = CHEVRON_POINTS, half_width: Optional[float] = None) -> np.ndarray:
    """Modulation frequencies centred on :func:`predicted_resonance`."""
    center = predicted_resonance(device, config, theta, delta, gate)
    hw = CHEVRON_HALF_WIDTH[gate] if half_width is None else half_width
    return center + np.linspace(-hw, hw, points)


def gate_labels(gate: str) -> tuple:
    """``(initial, tracked)`` labels used to image a gate's chevron."""
    return ("100", "100") if gate == "iswap" else ("000", "110")


def _readout_vectors(device, config, theta, readout):
    if readout == "bare":
        return None
    if readout != "dressed":
        raise ValueError(f"readout must be 'bare' or 'dressed', got {readout!r}")
    static = static_hamiltonian(device, config, float(coupler_frequency(device, theta)))
    return dressed_basis(static, LabeledBasis(config))[1]


def chevron_scan(device: DeviceSpec, config: HilbertConfig, template: FluxPulse, omega_grid: Sequence[float],
                 t_grid: Sequence[float], initial="100", tracked="100", transfer="exact", readout: str = "bare",
                 threads: int = 1) -> ChevronData:
    """One Schroedinger run per modulation frequency, sampled on ``t_grid``.

    Each run uses ``template`` with ``omega_phi`` replaced and the duration
    stretched to the last grid time. ``readout="dressed"`` prepares and reads
    out dressed eigenstates of the static Hamiltonian at the bias point.
    """
    omega_grid = np.asarray(omega_grid, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    if omega_grid.size == 0 or t_grid.size == 0:
        raise ValueError("chevron grids must be non-empty")
    if t_grid[0] != 0.0:
        raise ValueError("chevron time grid must start at 0")
    basis = LabeledBasis(config)
    vectors = _readout_vectors(device, config, template.theta, readout)
    psi0 = state_vector(basis, initial, vectors)

    def column(w):
        pulse = template.replace(omega_phi=float(w), duration=float(t_grid[-1]))
        traj = propagate_schrodinger(driven_hamiltonian(device, config, pulse, transfer), psi0, t_grid)
        return populations(traj, [tracked], vectors)[:, 0]

    pops = np.array(_map(column, omega_grid, threads)).reshape(len(omega_grid), len(t_grid))
    return ChevronData(omega_grid, t_grid, pops, LabeledBasis.name(initial), LabeledBasis.name(tracked),
                       template.replace(duration=float(t_grid[-1])), readout)


# --------------------------------------------------------------------------
# resonance profile


class TwoStateResonanceModel(RegressorMixin, BaseEstimator):
    """``f(omega) = sqrt(f_min^2 + (omega - omega_res)^2)`` fitted by least squares."""

    def fit(self, X, y):
        w = np.asarray(X, dtype=float).reshape(-1)
        f = np.asarray(y, dtype=float).reshape(-1)
        if len(w) < 3:
            raise FitError("resonance fit needs >= 3 points")
        k = int(np.argmin(f))
        x0 = [w[k], max(f[k], 1e-9)]

        def resid(x):
            return np.sqrt(x[1] ** 2 + (w - x[0]) ** 2) - f

        res = least_squares(resid, x0, bounds=([w.min(), 0.0], [w.max(), np.inf]), x_scale=[np.ptp(w) or 1.0, x0[1]],
                            xtol=1e-15, ftol=1e-15, gtol=1e-15)
        self.omega_res_, self.f_min_ = float(res.x[0]), float(res.x[1])
        self.residual_ = float(np.sqrt(np.mean(res.fun**2)))
        return self

    def predict(self, X):
        check_is_fitted(self, "omega_res_")
        w = np.asarray(X, dtype=float).reshape(-1)
        return np.sqrt(self.f_min_**2 + (w - self.omega_res_) ** 2)


@dataclass
class ResonanceProfile:
    """Fitted oscillation frequency per ``omega_phi`` and the resonance estimate."""

    omega_phi: np.ndarray
    frequency: np.ndarray
    fits: list
    omega_res: float
    f_min: float
    residual: float
    used: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))


def resonance_profile(chevron: ChevronData, window: int = 4) -> ResonanceProfile:
    """Fit every column, then the two-state model around the smallest fitted frequency.

    ``window`` grid points on either side of the minimum enter the model fit.
    Columns whose fit fails carry ``nan``.
    """
    order = np.argsort(chevron.omega_phi, kind="stable")
    w = chevron.omega_phi[order]
    fits, freq = [], np.full(len(w), np.nan)
    for j, col in enumerate(order):
        try:
            fit = fit_damped_oscillation(chevron.times, chevron.populations[col])
            freq[j] = fit.frequency
        except FitError:
            fit = None
        fits.append(fit)
    ok = np.flatnonzero(np.isfinite(freq))
    if len(ok) < 3:
        raise FitError(f"only {len(ok)} columns produced an oscillation fit; need >= 3")
    k = ok[np.argmin(freq[ok])]
    sel = ok[(ok >= k - window) & (ok <= k + window)]
    if len(sel) < 3:
        sel = ok[np.argsort(np.abs(ok - k))[:3]]
    sel = np.sort(sel)
    model = TwoStateResonanceModel().fit(w[sel], freq[sel])
    return ResonanceProfile(w, freq, fits, model.omega_res_, model.f_min_, model.residual_, sel)


def locate_resonance(device: DeviceSpec, config: HilbertConfig, theta: float, delta: float, gate: str,
                     transfer="exact", readout: str = "dressed", points: int = 21, span: float = 3.0,
                     periods: float = 6.0, min_duration: float = 4000.0, times: int = 401, window: int = 4,
                     max_shifts: int = 3, threads: int = 1) -> ResonanceProfile:
    """Adaptive chevron: find the resonance and the minimum oscillation frequency.

    The grid spans ``+- span`` times the predicted swap frequency (at least
    2 MHz) around :func:`predicted_resonance`; the run lasts ``periods``
    predicted swap periods (at least ``min_duration`` ns). When the smallest
    fitted frequency sits on the grid boundary the grid is re-centred there,
    at most ``max_shifts`` times.
    """
    from .effective import gate_strength_bswap, gate_strength_iswap

    if delta <= 0:
        raise ValueError("delta must be > 0 to drive a resonance")
    strength = gate_strength_iswap if gate == "iswap" else gate_strength_bswap
    f_pred = 4 * abs(strength(device, theta, delta))
    half = max(0.002, span * f_pred)
    duration = max(min_duration, periods / f_pred)
    t_grid = np.linspace(0.0, duration, times)
    initial, tracked = gate_labels(gate)
    center = predicted_resonance(device, config, theta, delta, gate)
    for _ in range(max_shifts + 1):
        grid = center + np.linspace(-half, half, points)
        chev = chevron_scan(device, config, FluxPulse(theta, delta, float(grid[0]), duration), grid, t_grid,
                            initial, tracked, transfer, readout, threads)
        prof = resonance_profile(chev, window)
        k = int(np.nanargmin(prof.frequency))
        if 0 < k < points - 1:
            return prof
        center = float(prof.omega_phi[k])
    raise FitError(f"resonance not bracketed after {max_shifts} grid shifts (last centre {center:.6f} GHz)")


# --------------------------------------------------------------------------
# leakage


@dataclass(frozen=True)
class LeakageLine:
    omega_phi: float
    frequency: float
    max_leakage: float
    label: str


def leakage_spectrum(device: DeviceSpec, config: HilbertConfig, template: FluxPulse, omega_grid: Sequence[float],
                     initial="100", subspace: Sequence = ("100", "010"), threshold: float = LEAKAGE_THRESHOLD,
                     duration: float = 1000.0, samples: int = 512, transfer="second", threads: int = 1) -> list:
    """Transitions that move more than ``threshold`` population out of ``subspace``.

    Populations are read in the dressed basis at whole modulation periods so
    the drive's micromotion does not count as leakage. Each leaking label
    above threshold yields one line at its dominant oscillation frequency.
    """
    if not threshold > 0:
        raise ValueError("threshold must be > 0")
    basis = LabeledBasis(config)
    vectors = _readout_vectors(device, config, template.theta, "dressed")
    psi0 = state_vector(basis, initial, vectors)
    keep = {basis.index(lab) for lab in subspace}
    outside = [lab for k, lab in enumerate(basis.labels) if k not in keep]

    def point(w):
        period = 1.0 / w
        stride = max(int(np.floor(duration / period / samples)), 1)
        n = min(samples, int(np.floor(duration / period / stride)))
        t_grid = np.arange(n + 1) * stride * period
        pulse = template.replace(omega_phi=float(w), duration=float(t_grid[-1]))
        traj = propagate_schrodinger(driven_hamiltonian(device, config, pulse, transfer), psi0, t_grid)
        pops = populations(traj, outside, vectors)
        total = pops.sum(axis=1)
        lines = []
        if total.max() <= threshold:
            return lines
        for j, lab in enumerate(outside):
            series = pops[:, j]
            if series.max() <= threshold:
                continue
            f, *_ = spectral_peak(t_grid, series) if len(t_grid) >= 8 else (0.0,)
            lines.append(LeakageLine(float(w), float(f), float(series.max()), LabeledBasis.name(lab)))
        return lines

    out = []
    for lines in _map(point, np.asarray(omega_grid, dtype=float), threads):
        out.extend(lines)
    return out


# --------------------------------------------------------------------------
# CSV


def chevron_rows(chevron: ChevronData):
    """``(columns, rows)``: time in the first column, one column per ``omega_phi``."""
    cols = ["time_ns"] + [f"{w:.9f}" for w in chevron.omega_phi]
    rows = np.column_stack([chevron.times, chevron.populations.T])
    return cols, rows


def profile_rows(profile: ResonanceProfile):
    cols = ["omega_phi_GHz", "frequency_GHz", "decay_per_ns", "amplitude", "residual"]
    rows = []
    for w, f, fit in zip(profile.omega_phi, profile.frequency, profile.fits):
        if fit is None:
            rows.append([w, "nan", "nan", "nan", "nan"])
        else:
            rows.append([w, f, fit.decay, fit.amplitude, fit.residual])
    return cols, rows


def leakage_rows(lines: Sequence[LeakageLine]):
    cols = ["omega_phi_GHz", "frequency_GHz", "max_leakage", "label"]
    return cols, [[ln.omega_phi, ln.frequency, ln.max_leakage, ln.label] for ln in lines]
