"""Truncated-boson operators and the three-transmon Hamiltonian.

Hamiltonians are dense complex matrices in angular units (rad/ns) with the
trace mean removed. Basis states are occupation triples ``(n1, n2, nc)`` in
lexicographic order, ``n1`` outermost.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .device import CouplerDrive, DeviceSpec, FluxPulse, Transfer, coupler_frequency_at

TWO_PI = 2 * np.pi


@dataclass(frozen=True)
class HilbertConfig:
    levels_q1: int = 3
    levels_q2: int = 3
    levels_c: int = 3
    max_dim: int = 512

    def __post_init__(self):
        for name in ("levels_q1", "levels_q2", "levels_c"):
            if int(getattr(self, name)) < 2:
                raise ValueError(f"{name} must be >= 2")
        if self.dim > self.max_dim:
            raise ValueError(f"Hilbert dimension {self.dim} exceeds the cap {self.max_dim}")

    @property
    def levels(self) -> tuple:
        return (self.levels_q1, self.levels_q2, self.levels_c)

    @property
    def dim(self) -> int:
        return int(np.prod(self.levels))


class LabeledBasis:
    """Bijection between basis indices and occupation labels ``(n1, n2, nc)``."""

    def __init__(self, config: HilbertConfig):
        self.config = config
        self.labels = list(itertools.product(*(range(n) for n in config.levels)))
        self._index = {lab: k for k, lab in enumerate(self.labels)}

    def __len__(self):
        return len(self.labels)

    @staticmethod
    def parse(label) -> tuple:
        if isinstance(label, str):
            s = label.strip().strip("|>").strip()
            if not s.isdigit() or len(s) != 3:
                raise ValueError(f"cannot parse basis label {label!r}")
            return tuple(int(c) for c in s)
        return tuple(int(n) for n in label)

    def index(self, label) -> int:
        lab = self.parse(label)
        try:
            return self._index[lab]
        except KeyError:
            raise ValueError(f"label {lab} is not in the truncated basis") from None

    def label(self, index: int) -> tuple:
        return self.labels[index]

    @staticmethod
    def name(label) -> str:
        return "".join(str(n) for n in LabeledBasis.parse(label))

    def computational(self, coupler: int = 0) -> list:
        """Indices of ``|00c>, |01c>, |10c>, |11c>`` in that order."""
        return [self.index((a, b, coupler)) for a in (0, 1) for b in (0, 1)]


@dataclass(frozen=True)
class Operators:
    a1: np.ndarray
    a2: np.ndarray
    ac: np.ndarray

    def __iter__(self):
        return iter((self.a1, self.a2, self.ac))

    def number(self, which: int) -> np.ndarray:
        a = (self.a1, self.a2, self.ac)[which]
        return a.conj().T @ a


def lowering(levels: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, levels, dtype=float)), 1).astype(complex)


def build_operators(config: HilbertConfig) -> Operators:
    """Lowering operators of each transmon embedded in the product space."""
    eyes = [np.eye(n) for n in config.levels]
    ops = []
    for k, n in enumerate(config.levels):
        factors = list(eyes)
        factors[k] = lowering(n)
        op = factors[0]
        for f in factors[1:]:
            op = np.kron(op, f)
        ops.append(op.astype(complex))
    return Operators(*ops)


def _remove_trace(h: np.ndarray) -> np.ndarray:
    return h - (np.trace(h).real / h.shape[0]) * np.eye(h.shape[0])


def _kerr(n_op: np.ndarray, frequency: float, anharmonicity: float) -> np.ndarray:
    # level n sits at n*nu + (u/2) n (n-1), so E_2 - 2 E_1 = u
    eye = np.eye(n_op.shape[0])
    return frequency * n_op + 0.5 * anharmonicity * n_op @ (n_op - eye)


@dataclass
class DrivenHamiltonian:
    """``H(t) = static + coefficient(t) * drive`` in rad/ns.

    ``coefficient`` returns the coupler frequency offset from the reference in
    GHz; ``drive`` is ``2 pi`` times the traceless coupler number operator.
    ``periodic`` is ``(t_start, t_end, period)`` when the coefficient is
    exactly periodic on that window.
    """

    static: np.ndarray
    drive: np.ndarray
    coefficient: Callable
    duration: float
    config: Optional[HilbertConfig] = None
    periodic: Optional[tuple] = None

    @property
    def dim(self) -> int:
        return self.static.shape[0]

    def __call__(self, t: float) -> np.ndarray:
        return self.static + float(self.coefficient(t)) * self.drive


def static_hamiltonian(device: DeviceSpec, config: HilbertConfig, coupler_freq: float) -> np.ndarray:
    """Time-independent Kerr-oscillator Hamiltonian at a fixed coupler frequency."""
    ops = build_operators(config)
    n1, n2, nc = (ops.number(k) for k in range(3))
    h = _kerr(n1, device.q1.frequency, device.q1.anharmonicity)
    h += _kerr(n2, device.q2.frequency, device.q2.anharmonicity)
    h += _kerr(nc, coupler_freq, device.coupler.anharmonicity)
    xc = ops.ac + ops.ac.conj().T
    h += device.g1 * (ops.a1 + ops.a1.conj().T) @ xc
    h += device.g2 * (ops.a2 + ops.a2.conj().T) @ xc
    return _remove_trace(TWO_PI * h)


def driven_hamiltonian(device: DeviceSpec, config: HilbertConfig, pulse: FluxPulse,
                       transfer: Transfer = "exact") -> DrivenHamiltonian:
    drive_fn = CouplerDrive(device, pulse, transfer)
    static = static_hamiltonian(device, config, drive_fn.reference)
    nc = build_operators(config).number(2)
    periodic = None
    if pulse.omega_phi > 0 and pulse.delta > 0:
        t0, t1 = pulse.flat_window()
        periodic = (t0, t1, pulse.period)
    return DrivenHamiltonian(static=static, drive=_remove_trace(TWO_PI * nc), coefficient=drive_fn,
                             duration=pulse.duration, config=config, periodic=periodic)


def hamiltonian_at(device: DeviceSpec, config: HilbertConfig, pulse: FluxPulse,
                   transfer: Transfer, t: float) -> np.ndarray:
    """Full Kerr-oscillator Hamiltonian at time ``t``."""
    nuc = float(coupler_frequency_at(device, pulse, t, transfer))
    return static_hamiltonian(device, config, nuc)


SIGMA_Z = np.diag([1.0, -1.0]).astype(complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)


def _embed(op: np.ndarray, slot: int, n: int = 3) -> np.ndarray:
    out = np.eye(1, dtype=complex)
    for k in range(n):
        out = np.kron(out, op if k == slot else np.eye(2))
    return out


def two_level_hamiltonian_at(device: DeviceSpec, pulse: FluxPulse, transfer: Transfer,
                             t: float) -> np.ndarray:
    """Pauli-form Hamiltonian of three qubits; ``|0>`` is the sigma_z = +1 state."""
    nuc = float(coupler_frequency_at(device, pulse, t, transfer))
    h = -0.5 * device.q1.frequency * _embed(SIGMA_Z, 0)
    h -= 0.5 * device.q2.frequency * _embed(SIGMA_Z, 1)
    h -= 0.5 * nuc * _embed(SIGMA_Z, 2)
    xc = _embed(SIGMA_X, 2)
    h += device.g1 * _embed(SIGMA_X, 0) @ xc + device.g2 * _embed(SIGMA_X, 1) @ xc
    return TWO_PI * h


def dressed_basis(static: np.ndarray, basis: LabeledBasis):
    """Eigenbasis of ``static`` matched one-to-one to bare labels.

    Returns ``(energies, vectors)`` with column ``k`` adiabatically connected
    to bare state ``k``; phases fixed so the bare component is real positive.
    """
    w, v = np.linalg.eigh(static)
    overlap = np.abs(v) ** 2
    rows, cols = linear_sum_assignment(-overlap)
    order = np.empty(len(w), dtype=int)
    order[rows] = cols
    vecs = v[:, order]
    diag = np.diag(vecs).copy()
    vecs = vecs * (np.abs(diag) / diag)[None, :]
    return w[order], vecs


def dressed_frequencies(device: DeviceSpec, config: HilbertConfig, theta: float) -> dict:
    """Dressed single-excitation frequencies (GHz) and the static ZZ shift."""
    from .device import coupler_frequency

    basis = LabeledBasis(config)
    e, _ = dressed_basis(static_hamiltonian(device, config, float(coupler_frequency(device, theta))), basis)
    e = e / TWO_PI
    e000, e100, e010, e110 = (e[basis.index(lab)] for lab in ("000", "100", "010", "110"))
    return {"q1": e100 - e000, "q2": e010 - e000, "zz": e110 - e100 - e010 + e000}


def state_vector(basis: LabeledBasis, label, vectors: Optional[np.ndarray] = None) -> np.ndarray:
    """Bare (or dressed, when ``vectors`` is given) basis state for ``label``."""
    k = basis.index(label)
    if vectors is not None:
        return vectors[:, k].astype(complex)
    psi = np.zeros(len(basis), dtype=complex)
    psi[k] = 1.0
    return psi


def labels_to_indices(basis: LabeledBasis, labels: Sequence) -> list:
    return [basis.index(lab) for lab in labels]
