"""Compiled inner loops for the propagators.

All schemes are the fourth-order commutator-free exponential integrator with
two Gauss-Legendre nodes per step::

    U(t + h, t) ~ exp(-i h (a2 H1 + a1 H2)) exp(-i h (a1 H1 + a2 H2))

For ``H(t) = S + c(t) D`` both exponents have the form
``(h/2) S + beta D``; ``exp(-i((h/2) S + beta D))`` is tabulated once as a
Taylor series in ``beta`` and every step costs two Horner evaluations.
"""

from __future__ import annotations

import math

import numba
import numpy as np
from scipy.linalg import expm

SQRT3 = math.sqrt(3.0)
NODES = (0.5 - SQRT3 / 6, 0.5 + SQRT3 / 6)
A1 = (3 - 2 * SQRT3) / 12
A2 = (3 + 2 * SQRT3) / 12


def step_betas(coefficient, t0: float, h: float, nsteps: int) -> np.ndarray:
    """Per-step exponent weights ``(beta_first, beta_second)`` for ``nsteps`` steps."""
    t = t0 + h * np.arange(nsteps)
    c1 = np.asarray(coefficient(t + NODES[0] * h), dtype=float)
    c2 = np.asarray(coefficient(t + NODES[1] * h), dtype=float)
    c1 = np.broadcast_to(c1, t.shape)
    c2 = np.broadcast_to(c2, t.shape)
    out = np.empty((nsteps, 2))
    out[:, 0] = h * (A2 * c1 + A1 * c2)
    out[:, 1] = h * (A1 * c1 + A2 * c2)
    return out


class TaylorTables:
    """``exp(-i((h/2) S + beta D)) = sum_k (beta - center)^k T_k`` for ``|beta - center| <= radius``."""

    def __init__(self, static: np.ndarray, drive: np.ndarray, h: float, center: float, radius: float,
                 tol: float = 1e-16):
        n = static.shape[0]
        dnorm = float(np.max(np.abs(np.linalg.eigvalsh(drive)))) if np.any(drive) else 0.0
        r = radius * dnorm
        order = 0
        term = 1.0
        while term > tol and order < 40:
            order += 1
            term = term * r / order
        a = -1j * (0.5 * h * static + center * drive)
        b = -1j * drive
        if order == 0 or r == 0:
            self.tables = expm(a)[None].copy()
        else:
            size = n * (order + 1)
            big = np.zeros((size, size), dtype=complex)
            for k in range(order + 1):
                big[k * n:(k + 1) * n, k * n:(k + 1) * n] = a
                if k < order:
                    big[k * n:(k + 1) * n, (k + 1) * n:(k + 2) * n] = b
            e = expm(big)
            self.tables = np.ascontiguousarray(np.stack([e[:n, k * n:(k + 1) * n] for k in range(order + 1)]))
        self.h = h
        self.center = center
        self.radius = radius

    @classmethod
    def for_betas(cls, static, drive, h, betas: np.ndarray):
        lo, hi = float(np.min(betas)), float(np.max(betas))
        return cls(static, drive, h, 0.5 * (lo + hi), 0.5 * (hi - lo))


@numba.njit(cache=True, nogil=True)
def _horner(tables, x):
    m = tables[tables.shape[0] - 1].copy()
    for k in range(tables.shape[0] - 2, -1, -1):
        m = m * x + tables[k]
    return m


@numba.njit(cache=True, nogil=True)
def apply_steps(states, tables, betas, center):
    """Propagate the columns of ``states`` through all steps in ``betas``."""
    out = states.copy()
    for j in range(betas.shape[0]):
        m1 = _horner(tables, betas[j, 0] - center)
        m2 = _horner(tables, betas[j, 1] - center)
        out = m2 @ (m1 @ out)
    return out


@numba.njit(cache=True, nogil=True)
def step_propagator(tables, betas, center):
    n = tables.shape[1]
    u = np.eye(n, dtype=np.complex128)
    for j in range(betas.shape[0]):
        m1 = _horner(tables, betas[j, 0] - center)
        m2 = _horner(tables, betas[j, 1] - center)
        u = m2 @ (m1 @ u)
    return u


@numba.njit(cache=True, nogil=True)
def alpha_steps(alpha0, g, det0, ddet, t_start, h, nsteps, nodes, weights, coeff_samples):
    """Scalar CFET4 for ``i a' + g - Delta(t) a = 0`` on several channels.

    ``Delta_c(t) = det0[c] + ddet[c] * x(t)`` with ``x`` sampled at the two
    Gauss nodes of every step in ``coeff_samples`` (shape ``(nsteps, 2)``).
    Angular units: ``g`` and ``Delta`` already multiplied by 2 pi.
    """
    nch = alpha0.shape[0]
    a = alpha0.copy()
    for j in range(nsteps):
        x1 = coeff_samples[j, 0]
        x2 = coeff_samples[j, 1]
        for c in range(nch):
            d1 = det0[c] + ddet[c] * x1
            d2 = det0[c] + ddet[c] * x2
            y = 1j * g[c] * h * 0.5
            for f in range(2):
                if f == 0:
                    x = -1j * h * (weights[1] * d1 + weights[0] * d2)
                else:
                    x = -1j * h * (weights[0] * d1 + weights[1] * d2)
                ex = np.exp(x)
                if abs(x) > 1e-8:
                    phi = (ex - 1.0) / x
                else:
                    phi = 1.0 + 0.5 * x
                a[c] = ex * a[c] + y * phi
    return a
