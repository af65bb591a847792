"""Truncated standard-normal moments shared by the replica engine and the BPSK module."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf, ndtr

SQRT_PI = math.sqrt(math.pi)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def phi(t):
    return INV_SQRT_2PI * np.exp(-0.5 * np.square(t))


def Q(t):
    """Standard normal tail ``1 - Phi(t)``."""
    return ndtr(-np.asarray(t, dtype=float))


def _t_phi(t):
    # t * phi(t) with the limit 0 at +-inf
    t = np.asarray(t, dtype=float)
    with np.errstate(invalid="ignore"):
        return np.where(np.isfinite(t), t * phi(t), 0.0)


def normal_mass(a, b):
    """``Phi(b) - Phi(a)`` evaluated in the tail that avoids cancellation."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.where(a > 0, ndtr(-a) - ndtr(-b), ndtr(b) - ndtr(a))


def gaussian_partial_moments(a, b):
    """``(m0, m1, m2)`` with ``mk = int_a^b t^k phi(t) dt``; accepts arrays and infinities."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a > b):
        raise ValueError("partial moments need a <= b")
    m0 = normal_mass(a, b)
    m1 = phi(a) - phi(b)
    m2 = m0 + _t_phi(a) - _t_phi(b)
    if m0.ndim == 0:
        return float(m0), float(m1), float(m2)
    return m0, m1, m2


def _u_exp(u, k):
    # u^k exp(-u^2) with the limit 0 at +inf
    u = np.asarray(u, dtype=float)
    with np.errstate(invalid="ignore", over="ignore"):
        return np.where(np.isfinite(u), u**k * np.exp(-u * u), 0.0)


def rayleigh_partial_moments(a, b):
    """``int_a^b u^k 2u exp(-u^2) du`` for ``k = -1, 0, 1, 2`` and ``0 <= a <= b``.

    ``2u exp(-u^2)`` is the density of ``|y| / s`` for ``y ~ CN(0, s^2)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    e_a, e_b = _u_exp(a, 0), _u_exp(b, 0)
    de = erf(b) - erf(a)
    r_m1 = SQRT_PI * de
    r0 = e_a - e_b
    r1 = _u_exp(a, 1) - _u_exp(b, 1) + 0.5 * SQRT_PI * de
    r2 = _u_exp(a, 2) + e_a - _u_exp(b, 2) - e_b
    return r_m1, r0, r1, r2
