"""Tuning of lambda and block weights by minimizing the replica-predicted distortion.

All searches run in log-coordinates: a coarse geometric grid locates the
basin, then golden-section refinement polishes the best few grid points.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._optim import golden_section
from .errors import AllSolvesFailed, RLSError
from .replica import SQUARED_ERROR, DistortionSpec, ReplicaProblem

DEFAULT_RANGE = (1e-4, 1e3)


@dataclass
class ScalarSearch:
    x: float
    fx: float
    trace: list
    failures: int
    boundary: bool


def _safe(f, x):
    try:
        v = float(f(x))
    except (RLSError, ArithmeticError, ValueError):
        return math.nan
    return v if math.isfinite(v) else math.nan


def tune_scalar(f, lo, hi, n_grid=25, n_starts=3, xtol=1e-7, workers=1) -> ScalarSearch:
    """Minimize ``f`` over ``[lo, hi]`` (positive) by log grid plus golden section.

    Failed evaluations (solver errors, non-finite values) are skipped. Raises
    :class:`AllSolvesFailed` when no grid point can be evaluated.
    """
    if not 0 < lo < hi:
        raise ValueError("search range must satisfy 0 < lo < hi")
    grid = np.geomspace(lo, hi, n_grid)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            vals = list(ex.map(lambda x: _safe(f, x), grid))
    else:
        vals = [_safe(f, x) for x in grid]
    trace = [(float(x), v) for x, v in zip(grid, vals) if not math.isnan(v)]
    failures = sum(math.isnan(v) for v in vals)
    if not trace:
        raise AllSolvesFailed(f"no evaluation succeeded on the grid over [{lo:g}, {hi:g}]")

    def g(t):
        x = math.exp(t)
        v = _safe(f, x)
        if math.isnan(v):
            return math.inf
        trace.append((x, v))
        return v

    order = [i for i in np.argsort(vals, kind="stable") if not math.isnan(vals[i])]
    for i in order[:n_starts]:
        a = math.log(grid[max(i - 1, 0)])
        b = math.log(grid[min(i + 1, n_grid - 1)])
        golden_section(g, a, b, tol=xtol)
    x, fx = min(trace, key=lambda p: (p[1], p[0]))
    span = math.log(hi / lo)
    boundary = min(math.log(x / lo), math.log(hi / x)) <= 1e-6 * span
    return ScalarSearch(x, fx, trace, failures, boundary)


def central_difference(f, x, rel_step=1e-3):
    h = rel_step * x
    return (f(x + h) - f(x - h)) / (2 * h)


@dataclass
class TuningResult:
    lambda_star: float
    weights_star: tuple
    distortion_star: float
    trace: list = field(repr=False)
    gradient: float = math.nan  # dD/dlambda at the optimum
    boundary: bool = False
    failures: int = 0

    @property
    def stationary(self) -> bool:
        """``|dD/dlambda| <= 1e-3 * D`` at the optimum."""
        return abs(self.gradient) <= 1e-3 * self.distortion_star


def tune_lambda(problem: ReplicaProblem, d: DistortionSpec = SQUARED_ERROR, lam_range=DEFAULT_RANGE,
                weights=None, n_grid=25, workers=1) -> TuningResult:
    """Minimize the predicted distortion over the engine's lambda."""
    w = tuple(problem.penalty.weights) if weights is None else tuple(weights)

    def f(lam):
        return problem.distortion(lam, w, d)

    res = tune_scalar(f, *lam_range, n_grid=n_grid, workers=workers)
    grad = _safe(lambda x: central_difference(f, x), res.x)
    trace = [({"lambda": x, "weights": w}, v) for x, v in res.trace]
    return TuningResult(res.x, w, res.fx, trace, grad, res.boundary, res.failures)


def tune_weights(problem: ReplicaProblem, d: DistortionSpec = SQUARED_ERROR, lam=None,
                 lam_range=DEFAULT_RANGE, weight_range=(1e-3, 1e3), max_cycles=50, rtol=1e-8,
                 xtol=1e-9, workers=1) -> TuningResult:
    """Cyclic coordinate descent over block weights, and lambda when ``lam`` is None.

    For the shipped families ``u(v; w)`` is homogeneous in ``w``, so with
    lambda free only the products ``lambda * w_j`` matter; the first weight is
    then pinned to 1.
    """
    J = problem.penalty.J
    joint = lam is None
    if joint:
        start = tune_lambda(problem, d, lam_range, weights=(1.0,) * J, workers=workers)
        lam = start.lambda_star
        trace = list(start.trace)
        failures = start.failures
        if J == 1:
            return start
    else:
        trace, failures = [], 0
    weights = [1.0] * J

    def D(lam_, w_):
        v = _safe(lambda _: problem.distortion(lam_, tuple(w_), d), None)
        if not math.isnan(v):
            trace.append(({"lambda": lam_, "weights": tuple(w_)}, v))
        return v

    best = D(lam, weights)
    if math.isnan(best):
        raise AllSolvesFailed("the starting point could not be evaluated")
    free = list(range(1, J)) if joint else list(range(J))
    for _ in range(max_cycles):
        before = best
        for j in free:
            weights[j], best = _coordinate(lambda x: D(lam, weights[:j] + [x] + weights[j + 1:]),
                                           weights[j], best, weight_range, xtol)
        if joint:
            lam, best = _coordinate(lambda x: D(x, weights), lam, best, lam_range, xtol)
        if before - best <= rtol * abs(before):
            break
    grad = _safe(lambda x: central_difference(lambda l: problem.distortion(l, tuple(weights), d), x), lam)
    span = math.log(lam_range[1] / lam_range[0])
    boundary = min(math.log(lam / lam_range[0]), math.log(lam_range[1] / lam)) <= 1e-6 * span
    return TuningResult(lam, tuple(weights), best, trace, grad, boundary, failures)


def _coordinate(f, x0, f0, bounds, xtol, factor=4.0, max_expand=8):
    """Golden section in ``log x`` on ``[x0 / factor, x0 * factor]``, shifted while the
    minimum sits on the bracket edge."""
    lo_b, hi_b = math.log(bounds[0]), math.log(bounds[1])
    x, fx = x0, f0
    for _ in range(max_expand):
        c = math.log(x)
        a, b = max(lo_b, c - math.log(factor)), min(hi_b, c + math.log(factor))

        def g(t):
            v = f(math.exp(t))
            return math.inf if math.isnan(v) else v

        t, ft = golden_section(g, a, b, tol=xtol)
        if ft < fx:
            x, fx = math.exp(t), ft
        at_edge = (abs(t - a) < 1e-6 and a > lo_b) or (abs(t - b) < 1e-6 and b < hi_b)
        if not at_edge:
            break
    return x, fx
