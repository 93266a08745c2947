"""Static device parameters, flux transfer function and the flux drive.

Units used throughout the package:

* frequencies are ordinary frequencies ``nu = omega / 2 pi`` in GHz,
* times are in ns, coherence times in us,
* flux is in units of the flux quantum Phi0.

Dynamics code multiplies by ``2 pi`` internally.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

ENVELOPES = ("square_gaussian_edges", "pure_square")

#: Gaussian sigma of the rise/fall edges as a fraction of the edge time.
EDGE_SIGMAS = 2.5


@dataclass(frozen=True)
class TransmonSpec:
    """One transmon: frequency and anharmonicity in GHz, coherence times in us.

    ``anharmonicity`` is ``E_2 - 2 E_1`` (negative for a transmon).
    A missing ``t2`` means no dephasing channel.
    """

    frequency: float
    anharmonicity: float
    t1: Optional[float] = None
    t2: Optional[float] = None

    def __post_init__(self):
        if not self.frequency > 0:
            raise ValueError(f"frequency must be > 0, got {self.frequency}")
        if abs(self.anharmonicity) >= self.frequency:
            raise ValueError("|anharmonicity| must be smaller than the frequency")
        if self.t1 is not None and not self.t1 > 0:
            raise ValueError(f"t1 must be > 0, got {self.t1}")
        if self.t2 is not None and not self.t2 > 0:
            raise ValueError(f"t2 must be > 0, got {self.t2}")


@dataclass(frozen=True)
class DeviceSpec:
    """Two fixed-frequency qubits coupled through a flux-tunable transmon.

    ``coupler.frequency`` is the zero-flux coupler frequency.
    """

    q1: TransmonSpec
    q2: TransmonSpec
    coupler: TransmonSpec
    g1: float
    g2: float

    def __post_init__(self):
        if not (self.g1 > 0 and self.g2 > 0):
            raise ValueError("couplings g1, g2 must be > 0")

    @property
    def qubits(self):
        return (self.q1, self.q2)

    @property
    def couplings(self):
        return (self.g1, self.g2)

    def detunings(self, theta: float) -> dict:
        """Qubit-coupler detunings ``nu_i -/+ nu_c(theta)`` keyed by ``(i, sign)``."""
        nuc = coupler_frequency(self, theta)
        out = {}
        for i, q in enumerate(self.qubits, start=1):
            out[(i, -1)] = q.frequency - nuc
            out[(i, +1)] = q.frequency + nuc
        return out

    def dispersive_ratios(self, theta: float) -> dict:
        """``g_i / |nu_i - nu_c(theta)|`` per qubit; small values mean dispersive."""
        det = self.detunings(theta)
        return {i: g / abs(det[(i, -1)]) for i, g in enumerate(self.couplings, start=1)}

    def with_coupler(self, **changes) -> "DeviceSpec":
        return replace(self, coupler=replace(self.coupler, **changes))


def table_one_device(coupler_t2: float = 7.3, coupler_anharmonicity: float = -0.300) -> DeviceSpec:
    """The measured two-qubit device (coupler anharmonicity is not measured)."""
    return DeviceSpec(
        q1=TransmonSpec(4.422, -0.349, t1=71.0, t2=52.0),
        q2=TransmonSpec(4.999, -0.330, t1=59.0, t2=32.0),
        coupler=TransmonSpec(6.006, coupler_anharmonicity, t1=11.6, t2=coupler_t2),
        g1=0.109,
        g2=0.117,
    )


@dataclass(frozen=True)
class FluxPulse:
    """Harmonic flux modulation ``theta + E(t) delta cos(2 pi omega_phi t)``.

    ``omega_phi`` is an ordinary frequency in GHz, ``duration`` and
    ``edge_time`` are in ns.
    """

    theta: float
    delta: float
    omega_phi: float
    duration: float
    edge_time: float = 20.0
    envelope: str = "square_gaussian_edges"

    def __post_init__(self):
        if self.envelope not in ENVELOPES:
            raise ValueError(f"unknown envelope {self.envelope!r}; expected one of {ENVELOPES}")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if not abs(self.theta) + abs(self.delta) < 0.5:
            raise ValueError("|theta| + |delta| must stay below 0.5 Phi0")
        if self.omega_phi < 0:
            raise ValueError("omega_phi must be >= 0")
        if self.duration < 0:
            raise ValueError("duration must be >= 0")
        if self.envelope == "square_gaussian_edges":
            if self.edge_time < 0:
                raise ValueError("edge_time must be >= 0")
            if not self.duration > 2 * self.edge_time:
                raise ValueError("duration must exceed 2 * edge_time")

    @property
    def period(self) -> float:
        return 1.0 / self.omega_phi if self.omega_phi > 0 else np.inf

    def flat_window(self) -> tuple:
        """Time interval on which the envelope equals one."""
        if self.envelope == "pure_square":
            return (0.0, self.duration)
        return (self.edge_time, self.duration - self.edge_time)

    def replace(self, **changes) -> "FluxPulse":
        return replace(self, **changes)


@dataclass(frozen=True)
class TransferExpansion:
    """Coupler frequency and its first two flux derivatives at the dc bias."""

    theta: float
    omega_theta: float
    d1: float
    d2: float


def coupler_frequency(device: DeviceSpec, phi):
    """``nu_c0 sqrt(|cos(pi phi)|)`` in GHz; ``phi`` may be an array."""
    return device.coupler.frequency * np.sqrt(np.abs(np.cos(np.pi * np.asarray(phi, dtype=float))))


def envelope(pulse: FluxPulse, t):
    """Pulse envelope in [0, 1]: flat top with Gaussian rise and fall.

    The Gaussians (sigma = edge_time / 2.5) are shifted and rescaled so the
    envelope is exactly zero at both ends of the pulse.
    """
    t = np.asarray(t, dtype=float)
    if pulse.envelope == "pure_square" or pulse.edge_time == 0:
        return np.ones_like(t)
    te = pulse.edge_time
    sigma = te / EDGE_SIGMAS
    floor = np.exp(-0.5 * EDGE_SIGMAS**2)
    dist = np.maximum(np.maximum(te - t, t - (pulse.duration - te)), 0.0)
    g = np.exp(-0.5 * (dist / sigma) ** 2)
    return np.clip((g - floor) / (1.0 - floor), 0.0, 1.0)


def envelope_deficit(pulse: FluxPulse) -> float:
    """Missing area (ns) of one Gaussian edge relative to a square edge."""
    if pulse.envelope == "pure_square" or pulse.edge_time == 0:
        return 0.0
    x, w = np.polynomial.legendre.leggauss(64)
    te = pulse.edge_time
    t = 0.5 * te * (x + 1)
    return te - 0.5 * te * float(np.sum(w * envelope(pulse, t)))


def _check_window(pulse: FluxPulse, t: np.ndarray, slack: float = 1e-9):
    if np.any(t < -slack) or np.any(t > pulse.duration + slack):
        raise ValueError(f"time outside pulse window [0, {pulse.duration}] ns: out of pulse window")


def flux_at(pulse: FluxPulse, t):
    """Flux (Phi0) seen by the coupler at time ``t`` (ns)."""
    t = np.asarray(t, dtype=float)
    _check_window(pulse, t)
    return pulse.theta + envelope(pulse, t) * pulse.delta * np.cos(2 * np.pi * pulse.omega_phi * t)


def transfer_expansion(device: DeviceSpec, theta: float) -> TransferExpansion:
    """Closed-form first and second flux derivatives of the transfer function."""
    c = np.cos(np.pi * theta)
    if not abs(theta) < 0.5 or c <= 0:
        raise ValueError(f"degenerate bias: cos(pi theta) = {c:.3g} is not positive")
    s = np.sin(np.pi * theta)
    nu0 = device.coupler.frequency
    sq = np.sqrt(c)
    d1 = -nu0 * np.pi * s / (2 * sq)
    d2 = -nu0 * np.pi**2 * (sq / 2 + s**2 / (4 * c * sq))
    return TransferExpansion(theta=theta, omega_theta=nu0 * sq, d1=d1, d2=d2)


def expanded_coupler_frequency(exp: TransferExpansion, pulse: FluxPulse, t, order: int):
    """Taylor form of the coupler frequency in the flux excursion, to ``order``."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    dphi = flux_at(pulse, t) - exp.theta
    nu = exp.omega_theta + dphi * exp.d1
    if order == 2:
        nu = nu + 0.5 * dphi**2 * exp.d2
    return nu


Transfer = Union[str, int]


def normalize_transfer(transfer: Transfer) -> str:
    """Map the transfer selector to one of ``"exact"``, ``"first"``, ``"second"``."""
    table = {"exact": "exact", 1: "first", 2: "second", "first": "first", "second": "second",
             "1": "first", "2": "second"}
    try:
        return table[transfer]
    except (KeyError, TypeError):
        raise ValueError(f"unknown transfer selector {transfer!r}") from None


def coupler_frequency_at(device: DeviceSpec, pulse: FluxPulse, t, transfer: Transfer = "exact"):
    """Coupler frequency along the pulse using the selected transfer model."""
    kind = normalize_transfer(transfer)
    if kind == "exact":
        return coupler_frequency(device, flux_at(pulse, t))
    exp = transfer_expansion(device, pulse.theta)
    return expanded_coupler_frequency(exp, pulse, t, 1 if kind == "first" else 2)


@dataclass(frozen=True)
class CouplerDrive:
    """Callable ``t -> nu_c(t) - reference`` for a pulse, without window checks.

    Used by the propagators, which sample the drive at Gauss nodes that may
    sit a few ulp outside the window.
    """

    device: DeviceSpec
    pulse: FluxPulse
    transfer: str = "exact"
    reference: float = field(default=np.nan)

    def __post_init__(self):
        object.__setattr__(self, "transfer", normalize_transfer(self.transfer))
        if np.isnan(self.reference):
            object.__setattr__(self, "reference", float(coupler_frequency(self.device, self.pulse.theta)))

    def flux(self, t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.pulse.duration)
        p = self.pulse
        return p.theta + envelope(p, t) * p.delta * np.cos(2 * np.pi * p.omega_phi * t)

    def __call__(self, t):
        phi = self.flux(t)
        if self.transfer == "exact":
            nu = coupler_frequency(self.device, phi)
        else:
            exp = transfer_expansion(self.device, self.pulse.theta)
            dphi = phi - exp.theta
            nu = exp.omega_theta + dphi * exp.d1
            if self.transfer == "second":
                nu = nu + 0.5 * dphi**2 * exp.d2
        return nu - self.reference
