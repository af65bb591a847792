"""BPSK recovery with ridge regularization under ordinary and box relaxation.

Lambda here is the engine lambda with ``prox_scale = 1`` and the var-1/N
spectrum, under which the ordinary-relaxation ``tau`` below coincides with
the generic replica engine.

Two variants are carried for the noise variance:

``printed``
    ``theta2 = (tau^2 + sigma2) / (rho (1 + tau)^2 - 1)`` for the ordinary
    case, and the box equations with ``theta / rho`` and ``theta2 / rho`` on
    their right-hand sides.
``rederived``
    ``theta2 = (sigma2 (1 + tau)^2 + tau^2) / (rho (1 + tau)^2 - 1)``, which
    is what the generic fixed point gives for this model, and the box
    equations with ``rho * theta`` and ``rho * theta2`` instead. In the limit
    of an inactive box these reduce to the ordinary rederived relations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._gauss import Q, gaussian_partial_moments, phi
from .errors import DenominatorNonpositive, NonConvergence
from .tuner import DEFAULT_RANGE, central_difference, tune_scalar

__all__ = [
    "BpskPoint", "ordinary_tau", "ordinary_theta2", "gaussian_partial_moments",
    "box_residuals", "box_fixed_point", "ordinary_point", "error_probability",
    "bpsk_optimal_lambda", "bpsk_point", "bpsk_curve", "BpskOptimum", "CURVE_COLUMNS",
    "VARIANTS", "RELAXATIONS",
]

VARIANTS = ("printed", "rederived")
RELAXATIONS = ("ordinary", "box")


def _check_variant(variant):
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")


@dataclass(frozen=True)
class BpskPoint:
    rho: float
    sigma2: float
    lam: float
    tau: float
    theta: float
    relaxation: str
    variant: str = "rederived"
    residuals: tuple = (0.0, 0.0)
    iterations: int = 0

    @property
    def theta2(self) -> float:
        return self.theta**2

    @property
    def beta(self) -> float:
        return self.tau / self.theta

    @property
    def xi(self) -> float:
        return self.tau / (1 + self.tau)

    @property
    def eta(self) -> float:
        return (2 + self.tau) / self.theta

    @property
    def P_E(self) -> float:
        return error_probability(self.theta)


def ordinary_tau(lam, rho):
    """Positive root of ``rho tau^2 + (rho - lam - 1) tau - lam = 0``."""
    if lam <= 0 or rho <= 0:
        raise ValueError("lambda and rho must be positive")
    b = lam + 1 - rho
    disc = math.sqrt(b * b + 4 * lam * rho)
    # the rationalized form avoids cancellation when b < 0
    return (b + disc) / (2 * rho) if b >= 0 else 2 * lam / (disc - b)


def ordinary_theta2(tau, sigma2, rho, variant="printed"):
    _check_variant(variant)
    den = rho * (1 + tau) ** 2 - 1
    if not den > 0:
        raise DenominatorNonpositive(f"rho (1 + tau)^2 - 1 = {den:.3e} is not positive")
    if variant == "printed":
        return (tau * tau + sigma2) / den
    return (sigma2 * (1 + tau) ** 2 + tau * tau) / den


def error_probability(theta):
    """``Q(1 / theta)``."""
    theta = np.asarray(theta, dtype=float)
    with np.errstate(divide="ignore"):
        out = Q(1.0 / theta)
    return float(out) if out.ndim == 0 else out


def ordinary_point(lam, rho, sigma2, variant="rederived") -> BpskPoint:
    tau = ordinary_tau(lam, rho)
    return BpskPoint(rho, sigma2, lam, tau, math.sqrt(ordinary_theta2(tau, sigma2, rho, variant)),
                     "ordinary", variant)


def _ratio(rho, variant):
    # right-hand sides read theta / q and theta2 / q
    _check_variant(variant)
    return rho if variant == "printed" else 1.0 / rho


def box_residuals(tau, theta, lam, rho, sigma2, variant="rederived"):
    """Residuals ``(lhs - rhs)`` of the two box-relaxation equations."""
    q = _ratio(rho, variant)
    beta = tau / theta
    eta = (2 + tau) / theta
    xi = tau / (1 + tau)
    xi_over_beta = theta / (1 + tau)
    m0, m1, m2 = gaussian_partial_moments(-eta, beta)
    r1 = (2 * phi(eta) + xi_over_beta * m2 + xi * phi(beta) + lam * theta / tau
          - theta / q - xi * phi(eta))
    i3 = m2 - 2 * beta * m1 + beta * beta * m0
    r2 = sigma2 + 4 * Q(eta) + xi_over_beta**2 * i3 - theta * theta / q
    return float(r1), float(r2)


def _box_map(tau, theta, lam, rho, sigma2, variant):
    """Fixed-point form: ``tau = q (lam + xi m0)``, ``theta2 = q (sigma2 + p)``."""
    q = _ratio(rho, variant)
    beta = tau / theta
    eta = (2 + tau) / theta
    m0, m1, m2 = gaussian_partial_moments(-eta, beta)
    xi = tau / (1 + tau)
    p = 4 * float(Q(eta)) + (theta / (1 + tau)) ** 2 * (m2 - 2 * beta * m1 + beta * beta * m0)
    return q * (lam + xi * m0), math.sqrt(q * (sigma2 + p))


def box_fixed_point(lam, rho, sigma2, variant="rederived", damping=0.5, tol=1e-10,
                    max_iter=5000) -> BpskPoint:
    """Solve the box-relaxation equations for ``(tau, theta)``.

    Damped fixed-point iteration from the ordinary-relaxation solution,
    followed by Newton steps on the residuals with a finite-difference
    Jacobian. Raises :class:`NonConvergence` if both residuals do not reach
    ``tol``.
    """
    if lam <= 0 or rho <= 0 or sigma2 < 0:
        raise ValueError("need lam > 0, rho > 0 and sigma2 >= 0")
    rho_eff = 1.0 / _ratio(rho, variant)
    tau = ordinary_tau(lam, rho_eff)
    theta = math.sqrt(ordinary_theta2(tau, sigma2, rho_eff, "rederived"))
    it = 0
    for it in range(1, max_iter + 1):
        t_new, th_new = _box_map(tau, theta, lam, rho, sigma2, variant)
        step = max(abs(t_new - tau) / max(tau, 1e-300), abs(th_new - theta) / theta)
        tau = (1 - damping) * tau + damping * t_new
        theta = (1 - damping) * theta + damping * th_new
        if step <= 1e-8:
            break
    x = np.array([tau, theta])

    def F(v):
        return np.array(box_residuals(v[0], v[1], lam, rho, sigma2, variant))

    r = F(x)
    for _ in range(20):
        if np.max(np.abs(r)) <= 0.1 * tol:
            break
        Jm = np.empty((2, 2))
        for k in range(2):
            h = 1e-7 * max(abs(x[k]), 1e-8)
            e = np.zeros(2)
            e[k] = h
            Jm[:, k] = (F(x + e) - F(x - e)) / (2 * h)
        try:
            dx = np.linalg.solve(Jm, -r)
        except np.linalg.LinAlgError:
            break
        # backtrack to keep tau, theta positive and the residual decreasing
        t = 1.0
        while t > 1e-6:
            cand = x + t * dx
            if np.all(cand > 0):
                rc = F(cand)
                if np.max(np.abs(rc)) < np.max(np.abs(r)):
                    x, r = cand, rc
                    break
            t *= 0.5
        else:
            break
    res = (float(r[0]), float(r[1]))
    if max(abs(res[0]), abs(res[1])) > tol:
        raise NonConvergence(f"box fixed point residuals {res} exceed {tol:g}", residual=res,
                             best=(float(x[0]), float(x[1])))
    return BpskPoint(rho, sigma2, lam, float(x[0]), float(x[1]), "box", variant, res, it)


def bpsk_point(lam, rho, sigma2, relaxation="box", variant="rederived") -> BpskPoint:
    if relaxation == "ordinary":
        return ordinary_point(lam, rho, sigma2, variant)
    if relaxation == "box":
        return box_fixed_point(lam, rho, sigma2, variant)
    raise ValueError(f"relaxation must be one of {RELAXATIONS}")


@dataclass(frozen=True)
class BpskOptimum:
    lambda_star: float
    P_E: float
    point: BpskPoint
    gradient: float
    boundary: bool


def bpsk_optimal_lambda(rho, sigma2, relaxation="box", variant="rederived",
                        lam_range=DEFAULT_RANGE) -> BpskOptimum:
    """Minimize ``P_E`` over lambda with the shared tuner machinery."""

    def f(lam):
        return bpsk_point(lam, rho, sigma2, relaxation, variant).P_E

    # P_E is unimodal in lambda on every tested grid, so one refinement start suffices
    res = tune_scalar(f, *lam_range, n_starts=1)
    try:
        grad = central_difference(f, res.x)
    except Exception:  # noqa: BLE001 - certificate only
        grad = math.nan
    return BpskOptimum(res.x, res.fx, bpsk_point(res.x, rho, sigma2, relaxation, variant), grad, res.boundary)


CURVE_COLUMNS = ("inv_sigma2_dB", "rho", "relaxation", "lambda_star", "tau", "theta", "P_E",
                 "lambda_star_var1M", "P_E_var1M", "boundary")


def _curve_row(args):
    db, rho, relaxation, variant, lam_range = args
    sigma2 = 10.0 ** (-db / 10.0)
    opt = bpsk_optimal_lambda(rho, sigma2, relaxation, variant, lam_range)
    # var-1/M at (lam, sigma2) is the var-1/N problem at (rho lam, rho sigma2)
    alt = opt if rho == 1.0 else bpsk_optimal_lambda(rho, rho * sigma2, relaxation, variant, lam_range)
    return {
        "inv_sigma2_dB": float(db), "rho": float(rho), "relaxation": relaxation,
        "lambda_star": opt.lambda_star, "tau": opt.point.tau, "theta": opt.point.theta,
        "P_E": opt.P_E, "lambda_star_var1M": alt.lambda_star / rho, "P_E_var1M": alt.P_E,
        "boundary": bool(opt.boundary),
    }


def bpsk_curve(rhos=(0.7, 1.0), snr_db=tuple(range(-5, 11)), relaxations=RELAXATIONS,
               variant="rederived", lam_range=DEFAULT_RANGE, workers=1) -> list[dict]:
    """Tuned ``P_E`` and ``lambda*`` over an SNR grid ``1/sigma2`` in dB.

    ``lambda_star`` uses the var-1/N convention of this module;
    ``lambda_star_var1M`` and ``P_E_var1M`` are the tuned values when the
    matrix entries have variance ``1/M`` at the same noise level.
    """
    jobs = [(db, rho, rel, variant, lam_range) for rel in relaxations for rho in rhos for db in snr_db]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(_curve_row, jobs))
    return [_curve_row(j) for j in jobs]
