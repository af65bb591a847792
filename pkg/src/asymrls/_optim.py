"""Derivative-free scalar minimization shared by the prox fallback and the tuner."""

from __future__ import annotations

import math

INV_PHI = (math.sqrt(5) - 1) / 2
INV_PHI2 = (3 - math.sqrt(5)) / 2


def golden_section(f, a, b, tol=1e-12, max_iter=500):
    """Minimize a unimodal ``f`` on ``[a, b]``; returns ``(x, f(x))``.

    Stops when the bracket is narrower than ``tol * max(1, |x|)``. The
    endpoints are evaluated as well so that boundary minima are returned
    exactly.
    """
    a, b = min(a, b), max(a, b)
    a0, b0 = a, b
    fa0, fb0 = f(a0), f(b0)
    h = b - a
    c = a + INV_PHI2 * h
    d = a + INV_PHI * h
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if h <= tol * max(1.0, abs(c)):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            h = INV_PHI * h
            c = a + INV_PHI2 * h
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            h = INV_PHI * h
            d = a + INV_PHI * h
            fd = f(d)
    candidates = [(fc, c), (fd, d), (fa0, a0), (fb0, b0)]
    fx, x = min(candidates, key=lambda p: (p[0], abs(p[1])))
    return x, fx
