"""Time propagation of kets (Schroedinger) and density matrices (Lindblad)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.linalg import expm, schur

from . import _kernels as K
from .device import DeviceSpec
from .hamiltonian import DrivenHamiltonian, HilbertConfig, LabeledBasis

#: largest integrator step (ns) and minimum steps per modulation period
MAX_STEP = 0.05
STEPS_PER_PERIOD = 48
#: use the one-period propagator when the flat top spans at least this many periods
FLOQUET_MIN_PERIODS = 20

#: dissipator splitting interval (ns); on the flat top it divides or spans whole periods
LINDBLAD_SEGMENT = 0.1

NORM_TOL = 1e-8
HERMITIAN_TOL = 1e-10


class PropagationError(RuntimeError):
    """Integrator failed its conservation checks."""


@dataclass
class Trajectory:
    """States sampled on a time grid (ns).

    ``states`` has shape ``(n_t, d)`` for kets and ``(n_t, d, d)`` for
    density matrices.
    """

    times: np.ndarray
    states: np.ndarray
    basis: Optional[LabeledBasis] = None
    kind: str = "ket"
    info: dict = field(default_factory=dict)

    @property
    def is_density(self) -> bool:
        return self.kind == "dm"

    def diagonal(self, vectors: Optional[np.ndarray] = None) -> np.ndarray:
        """Populations of every basis state, shape ``(n_t, d)``."""
        s = self.states
        if self.kind == "ket":
            amp = s if vectors is None else s @ vectors.conj()
            return np.abs(amp) ** 2
        if vectors is not None:
            s = np.einsum("ji,tjk,kl->til", vectors.conj(), s, vectors, optimize=True)
        return np.einsum("tii->ti", s).real


@dataclass(frozen=True)
class DissipationRates:
    """Per-transmon rates in 1/ns, ordered ``(q1, q2, coupler)``."""

    relaxation: tuple
    dephasing: tuple

    def __post_init__(self):
        if len(self.relaxation) != 3 or len(self.dephasing) != 3:
            raise ValueError("rates need one entry per transmon (q1, q2, coupler)")
        if min(self.relaxation) < 0 or min(self.dephasing) < 0:
            raise ValueError("rates must be >= 0")

    @classmethod
    def zero(cls) -> "DissipationRates":
        return cls((0.0, 0.0, 0.0), (0.0, 0.0, 0.0))

    @property
    def is_zero(self) -> bool:
        return not any(self.relaxation) and not any(self.dephasing)


def rates_from_specs(device: DeviceSpec) -> DissipationRates:
    """Relaxation ``1/T1`` and dephasing ``(1/T2 - 1/(2 T1)) / 2`` for each transmon."""
    relax, deph = [], []
    for name, spec in (("q1", device.q1), ("q2", device.q2), ("coupler", device.coupler)):
        if spec.t1 is None:
            raise ValueError(f"{name}: t1 is required for dissipation rates")
        t1 = spec.t1 * 1e3
        relax.append(1.0 / t1)
        if spec.t2 is None:
            deph.append(0.0)
            continue
        t2 = spec.t2 * 1e3
        gz = 0.5 * (1.0 / t2 - 1.0 / (2.0 * t1))
        if gz < -1e-15:
            raise ValueError(f"{name}: unphysical T2 = {spec.t2} us exceeds 2*T1 = {2 * spec.t1} us")
        deph.append(max(gz, 0.0))
    return DissipationRates(tuple(relax), tuple(deph))


# --------------------------------------------------------------------------
# stepping helpers


def default_step(hamiltonian) -> float:
    step = MAX_STEP
    per = getattr(hamiltonian, "periodic", None)
    if per is not None and np.isfinite(per[2]):
        step = min(step, per[2] / STEPS_PER_PERIOD)
    return step


def _intervals(t_grid: np.ndarray, max_step: float):
    dts = np.diff(t_grid)
    if np.any(dts < 0):
        raise ValueError("time grid must be monotonic")
    nsteps = np.maximum(np.ceil(dts / max_step - 1e-9).astype(int), 0)
    nsteps[(dts > 0) & (nsteps == 0)] = 1
    return dts, nsteps


def _cfet_expm_step(ham: DrivenHamiltonian, t0: float, h: float) -> np.ndarray:
    c1 = float(ham.coefficient(t0 + K.NODES[0] * h))
    c2 = float(ham.coefficient(t0 + K.NODES[1] * h))
    half = 0.5 * h * ham.static
    m1 = expm(-1j * (half + h * (K.A2 * c1 + K.A1 * c2) * ham.drive))
    m2 = expm(-1j * (half + h * (K.A1 * c1 + K.A2 * c2) * ham.drive))
    return m2 @ m1


class _Stepper:
    """CFET4 stepping with Taylor tables cached per step size.

    Intervals are split into equal steps no longer than ``max_step``;
    ``advance_fixed`` instead uses whole base steps plus one remainder step so
    arbitrary offsets reuse the same table.
    """

    def __init__(self, ham: DrivenHamiltonian, max_step: float):
        self.ham = ham
        self.max_step = max_step
        self._tables = {}
        self._clo, self._chi = self._coefficient_range()

    def _coefficient_range(self):
        ham = self.ham
        n = int(min(max(ham.duration / (self.max_step / 4), 1000), 4_000_000))
        t = np.linspace(0.0, ham.duration, n)
        c = np.broadcast_to(np.asarray(ham.coefficient(t), dtype=float), t.shape)
        span = float(np.max(c) - np.min(c))
        return float(np.min(c)) - 0.05 * span - 1e-12, float(np.max(c)) + 0.05 * span + 1e-12

    def tables(self, h: float) -> K.TaylorTables:
        key = round(h, 14)
        tab = self._tables.get(key)
        if tab is None:
            cands = [w * c for w in (K.A1, K.A2) for c in (self._clo, self._chi)]
            lo, hi = h * min(cands), h * max(cands)
            tab = K.TaylorTables(self.ham.static, self.ham.drive, h, 0.5 * (lo + hi), 0.5 * (hi - lo))
            self._tables[key] = tab
        return tab

    def advance(self, states: np.ndarray, t0: float, dt: float, nsteps: int) -> np.ndarray:
        if nsteps == 0 or dt == 0:
            return states
        h = dt / nsteps
        tab = self.tables(h)
        betas = K.step_betas(self.ham.coefficient, t0, h, nsteps)
        return K.apply_steps(states, tab.tables, betas, tab.center)

    def advance_fixed(self, states: np.ndarray, t0: float, dt: float) -> np.ndarray:
        h = self.max_step
        n = int(math.floor(dt / h + 1e-9))
        out = self.advance(states, t0, n * h, n) if n else states
        rest = dt - n * h
        if rest > 1e-12:
            out = _cfet_expm_step(self.ham, t0 + n * h, rest) @ out
        return out

    def propagator(self, t0: float, dt: float, tabulate: bool = True) -> np.ndarray:
        """Equal steps no longer than ``max_step``; ragged step patterns cost accuracy here.

        ``tabulate=False`` exponentiates each step directly, which is cheaper
        for one-off interval lengths.
        """
        n = max(int(math.ceil(dt / self.max_step - 1e-9)), 1)
        h = dt / n
        if tabulate or round(h, 14) in self._tables:
            tab = self.tables(h)
            return K.step_propagator(tab.tables, K.step_betas(self.ham.coefficient, t0, h, n), tab.center)
        u = np.eye(self.ham.dim, dtype=complex)
        for j in range(n):
            u = _cfet_expm_step(self.ham, t0 + j * h, h) @ u
        return u


class _PeriodPower:
    """Integer powers of a one-period unitary through its Schur form."""

    def __init__(self, u: np.ndarray):
        t, z = schur(u, output="complex")
        self.z = z
        self.lam = np.diag(t).copy()
        self.lam /= np.abs(self.lam)

    def apply(self, n: int, states: np.ndarray) -> np.ndarray:
        return self.z @ ((self.lam**n)[:, None] * (self.z.conj().T @ states))


def _use_floquet(ham, t_grid, floquet: bool) -> bool:
    per = ham.periodic if floquet else None
    if per is None:
        return False
    w0, w1, period = per
    inside = (t_grid > w0) & (t_grid <= w1 + 1e-12)
    return bool(np.isfinite(period) and (w1 - w0) / period >= FLOQUET_MIN_PERIODS and inside.sum() >= 2)


def _propagate_driven(ham: DrivenHamiltonian, states: np.ndarray, t_grid: np.ndarray, max_step: float,
                      floquet: bool = True) -> np.ndarray:
    """Return states at every grid time; ``states`` columns are propagated together."""
    stepper = _Stepper(ham, max_step)
    dts, nsteps = _intervals(t_grid, max_step)
    out = np.empty((len(t_grid),) + states.shape, dtype=complex)
    out[0] = states
    cur = np.ascontiguousarray(states, dtype=complex)

    if not _use_floquet(ham, t_grid, floquet):
        for k in range(1, len(t_grid)):
            cur = stepper.advance(cur, t_grid[k - 1], dts[k - 1], nsteps[k - 1])
            out[k] = cur
        return out

    w0, w1, period = ham.periodic
    k = 1
    while k < len(t_grid) and t_grid[k] <= w0:
        cur = stepper.advance(cur, t_grid[k - 1], dts[k - 1], nsteps[k - 1])
        out[k] = cur
        k += 1
    anchor = stepper.advance_fixed(cur, t_grid[k - 1], w0 - t_grid[k - 1])
    power = _PeriodPower(stepper.propagator(w0, period))
    while k < len(t_grid) and t_grid[k] <= w1 + 1e-12:
        elapsed = t_grid[k] - w0
        n = int(math.floor(elapsed / period + 1e-12))
        cur = stepper.advance_fixed(power.apply(n, anchor), w0, max(elapsed - n * period, 0.0))
        out[k] = cur
        k += 1
    while k < len(t_grid):
        cur = stepper.advance(cur, t_grid[k - 1], dts[k - 1], nsteps[k - 1])
        out[k] = cur
        k += 1
    return out


def _propagate_generic(hfun: Callable, states: np.ndarray, t_grid: np.ndarray, max_step: float) -> np.ndarray:
    dts, nsteps = _intervals(t_grid, max_step)
    out = np.empty((len(t_grid),) + states.shape, dtype=complex)
    out[0] = states
    cur = np.asarray(states, dtype=complex)
    for k in range(1, len(t_grid)):
        if nsteps[k - 1] == 0:
            out[k] = cur
            continue
        h = dts[k - 1] / nsteps[k - 1]
        for j in range(nsteps[k - 1]):
            t = t_grid[k - 1] + j * h
            h1 = np.asarray(hfun(t + K.NODES[0] * h))
            h2 = np.asarray(hfun(t + K.NODES[1] * h))
            for m in (K.A2 * h1 + K.A1 * h2, K.A1 * h1 + K.A2 * h2):
                w, v = np.linalg.eigh(m)
                cur = v @ (np.exp(-1j * h * w)[:, None] * (v.conj().T @ cur))
        out[k] = cur
    return out


def propagate_schrodinger(hamiltonian: Union[DrivenHamiltonian, Callable], psi0: np.ndarray,
                          t_grid: Sequence[float], max_step: Optional[float] = None, check: bool = True,
                          floquet: bool = True) -> Trajectory:
    """Integrate ``i psi' = H(t) psi`` and sample ``psi`` on ``t_grid``.

    ``hamiltonian`` is either a :class:`DrivenHamiltonian` (fast path) or any
    callable returning the Hamiltonian matrix in rad/ns at time ``t``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    psi0 = np.asarray(psi0, dtype=complex)
    if abs(np.linalg.norm(psi0) - 1.0) > NORM_TOL:
        raise ValueError("initial state must be normalized")
    step = max_step or default_step(hamiltonian)
    cols = psi0.reshape(-1, 1)
    if isinstance(hamiltonian, DrivenHamiltonian):
        states = _propagate_driven(hamiltonian, cols, t_grid, step, floquet)[:, :, 0]
    else:
        states = _propagate_generic(hamiltonian, cols, t_grid, step)[:, :, 0]
    drift = float(np.max(np.abs(np.linalg.norm(states, axis=1) - 1.0)))
    if check and drift > NORM_TOL:
        raise PropagationError(f"norm drift {drift:.2e} exceeds {NORM_TOL:g} (step {step:g} ns); reduce max_step")
    basis = LabeledBasis(hamiltonian.config) if getattr(hamiltonian, "config", None) else None
    return Trajectory(t_grid, states, basis, "ket", {"max_step": step, "norm_drift": drift})


def propagate_unitary(hamiltonian: DrivenHamiltonian, t_grid: Sequence[float], columns: Optional[np.ndarray] = None,
                      max_step: Optional[float] = None) -> np.ndarray:
    """Propagate several kets at once; returns shape ``(n_t, d, n_cols)``."""
    t_grid = np.asarray(t_grid, dtype=float)
    cols = np.eye(hamiltonian.dim, dtype=complex) if columns is None else np.asarray(columns, dtype=complex)
    step = max_step or default_step(hamiltonian)
    return _propagate_driven(hamiltonian, cols, t_grid, step)


# --------------------------------------------------------------------------
# Lindblad


def single_mode_dissipator(levels: int, relaxation: float, dephasing: float) -> np.ndarray:
    """Row-major superoperator of ``G- D[a] + Gz D[a^dag a]`` on one transmon."""
    a = np.diag(np.sqrt(np.arange(1, levels, dtype=float)), 1).astype(complex)
    n = a.conj().T @ a
    eye = np.eye(levels)
    sup = np.zeros((levels**2, levels**2), dtype=complex)
    for rate, c in ((relaxation, a), (dephasing, n)):
        if rate == 0:
            continue
        cdc = c.conj().T @ c
        sup += rate * (np.kron(c, c.conj()) - 0.5 * np.kron(cdc, eye) - 0.5 * np.kron(eye, cdc.T))
    return sup


class _Dissipator:
    """Exact per-transmon dissipator flows applied to stacks of operators."""

    def __init__(self, config: HilbertConfig, rates: DissipationRates):
        self.levels = config.levels
        self.generators = [single_mode_dissipator(n, rates.relaxation[j], rates.dephasing[j])
                           for j, n in enumerate(self.levels)]
        self.active = [bool(np.any(g)) for g in self.generators]
        self._cache = {}

    def _superops(self, tau: float):
        key = round(tau, 13)
        s = self._cache.get(key)
        if s is None:
            s = [expm(g * tau) if on else None for g, on in zip(self.generators, self.active)]
            self._cache[key] = s
        return s

    def apply(self, rhos: np.ndarray, tau: float) -> np.ndarray:
        if tau <= 0 or not any(self.active):
            return rhos
        m = rhos.shape[0]
        l1, l2, l3 = self.levels
        x = rhos.reshape(m, l1, l2, l3, l1, l2, l3)
        for j, sop in enumerate(self._superops(tau)):
            if sop is None:
                continue
            lj = self.levels[j]
            x = np.moveaxis(x, (1 + j, 4 + j), (-2, -1))
            shape = x.shape
            x = (x.reshape(-1, lj * lj) @ sop.T).reshape(shape)
            x = np.moveaxis(x, (-2, -1), (1 + j, 4 + j))
        return np.ascontiguousarray(x.reshape(rhos.shape))


def _segment_bounds(ham: DrivenHamiltonian, t_grid: np.ndarray, seg: float):
    """Split times for the dissipative splitting; flat-top segments span whole periods."""
    t0, t1 = float(t_grid[0]), float(t_grid[-1])
    per = ham.periodic
    span = None
    if per is not None and np.isfinite(per[2]) and per[1] > per[0]:
        w0, w1, period = per
        if seg >= period:
            length, offsets = max(int(round(seg / period)), 1) * period, 1
        else:
            offsets = int(round(period / seg))
            length = period / offsets
        span = (w0, length, offsets)
        n = int(math.floor((w1 - w0) / length + 1e-9))
        pts = [np.arange(t0, w0, seg), w0 + length * np.arange(n + 1), np.arange(w0 + n * length, t1, seg)]
    else:
        pts = [np.arange(t0, t1, seg)]
    b = np.unique(np.concatenate([np.asarray(p, dtype=float) for p in pts] + [[t0, t1]]))
    b = b[(b >= t0 - 1e-12) & (b <= t1 + 1e-12)]
    b = b[np.concatenate([[True], np.diff(b) > 1e-9])]
    b[0], b[-1] = t0, t1
    return b, span


def _lindblad_batch(ham: DrivenHamiltonian, rhos: np.ndarray, rates: DissipationRates, t_grid: np.ndarray,
                    max_step: float, segment: Optional[float] = None) -> np.ndarray:
    """Strang splitting: half dissipator, CFET4 segment unitary, half dissipator.

    Grid times inside a segment branch off the segment start with a shorter
    split step, so output sampling does not change the segment chain.
    """
    if ham.config is None:
        raise ValueError("Lindblad propagation needs a Hamiltonian with a Hilbert config")
    if np.any(np.diff(t_grid) < 0):
        raise ValueError("time grid must be monotonic")
    diss = _Dissipator(ham.config, rates)
    stepper = _Stepper(ham, max_step)
    bounds, span = _segment_bounds(ham, t_grid, segment or LINDBLAD_SEGMENT)
    cached = {}

    def split_step(state, s0, length, u=None, tabulate=True):
        if length <= 1e-12:
            return state
        if u is None:
            u = stepper.propagator(s0, length, tabulate)
        state = diss.apply(state, 0.5 * length)
        state = u @ state @ u.conj().T
        return diss.apply(state, 0.5 * length)

    out = np.empty((len(t_grid),) + rhos.shape, dtype=complex)
    cur = np.ascontiguousarray(rhos, dtype=complex)
    gi = 0
    for j in range(len(bounds) - 1):
        s0, s1 = bounds[j], bounds[j + 1]
        while gi < len(t_grid) and t_grid[gi] < s1 - 1e-9:
            out[gi] = split_step(cur, s0, t_grid[gi] - s0, tabulate=False)
            gi += 1
        u = None
        if span is not None and abs((s1 - s0) - span[1]) < 1e-9:
            k = (s0 - span[0]) / span[1]
            if abs(k - round(k)) < 1e-9 and k > -0.5:
                key = int(round(k)) % span[2]
                if key not in cached:
                    cached[key] = stepper.propagator(s0, span[1])
                u = cached[key]
        cur = split_step(cur, s0, s1 - s0, u)
    while gi < len(t_grid):
        out[gi] = cur
        gi += 1
    return out


def propagate_lindblad(hamiltonian: DrivenHamiltonian, rho0: np.ndarray, rates: DissipationRates,
                       t_grid: Sequence[float], max_step: Optional[float] = None, check: bool = True,
                       segment: Optional[float] = None) -> Trajectory:
    """Integrate the Lindblad equation with relaxation ``a`` and dephasing ``a^dag a`` per transmon."""
    t_grid = np.asarray(t_grid, dtype=float)
    rho0 = np.asarray(rho0, dtype=complex)
    if abs(np.trace(rho0).real - 1.0) > NORM_TOL:
        raise ValueError("initial density matrix must have unit trace")
    if np.min(np.linalg.eigvalsh(0.5 * (rho0 + rho0.conj().T))) < -1e-10:
        raise ValueError("initial density matrix must be positive semidefinite")
    step = max_step or default_step(hamiltonian)
    states = _lindblad_batch(hamiltonian, rho0[None], rates, t_grid, step, segment)[:, 0]
    drift = float(np.max(np.abs(np.einsum("tii->t", states).real - 1.0)))
    herm = float(np.max(np.abs(states - np.swapaxes(states.conj(), 1, 2))))
    if check and drift > NORM_TOL:
        raise PropagationError(f"trace drift {drift:.2e} exceeds {NORM_TOL:g}")
    if check and herm > HERMITIAN_TOL:
        raise PropagationError(f"density matrix lost Hermiticity ({herm:.2e})")
    basis = LabeledBasis(hamiltonian.config) if hamiltonian.config else None
    return Trajectory(t_grid, states, basis, "dm", {"max_step": step, "trace_drift": drift})


def propagate_operators(hamiltonian: DrivenHamiltonian, operators: np.ndarray, rates: DissipationRates,
                        t_grid: Sequence[float], max_step: Optional[float] = None,
                        segment: Optional[float] = None) -> np.ndarray:
    """Propagate a stack of (not necessarily Hermitian) operators linearly; shape ``(n_t, m, d, d)``."""
    t_grid = np.asarray(t_grid, dtype=float)
    step = max_step or default_step(hamiltonian)
    return _lindblad_batch(hamiltonian, np.asarray(operators, dtype=complex), rates, t_grid, step, segment)


# --------------------------------------------------------------------------
# readout


def populations(traj: Trajectory, labels: Sequence, vectors: Optional[np.ndarray] = None) -> np.ndarray:
    """Population series for ``labels``; shape ``(n_t, len(labels))``.

    Bare product basis by default; pass dressed ``vectors`` (columns matched
    to labels) to read out in the dressed basis.
    """
    if traj.basis is None:
        raise ValueError("trajectory has no labeled basis")
    idx = [traj.basis.index(lab) for lab in labels]
    return traj.diagonal(vectors)[:, idx]


def trajectory_to_csv(traj: Trajectory, labels: Sequence, path, vectors: Optional[np.ndarray] = None,
                      header: Optional[Sequence[str]] = None) -> None:
    from .io import write_csv

    pops = populations(traj, labels, vectors)
    cols = ["time_ns"] + [LabeledBasis.name(lab) for lab in labels]
    write_csv(path, cols, np.column_stack([traj.times, pops]), header)
