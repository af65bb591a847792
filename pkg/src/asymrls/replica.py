"""Replica fixed point and asymptotic distortion of block-wise RLS recovery.

Each block is summarized by a decoupled scalar channel ``y = x + z`` with
``z ~ N(0, theta2)`` followed by the proximal map of ``c * u_j`` where
``c = prox_scale * tau``. The fixed point couples ``(chi, p)`` to
``(tau, theta2)`` through the R-transform of the Gram matrix spectrum.

Lambda convention: the engine at ``(prox_scale, lam)`` describes the
minimizer of ``(1 / lam_obj) ||y - A v||^2 + u(v)`` with
``lam_obj = 2 * prox_scale * lam`` (see :func:`objective_lambda`).

For the shipped penalty families the prox map is piecewise linear, so every
expectation reduces to truncated Gaussian moments and is exact up to
rounding. User-supplied penalties fall back to Gauss-Hermite quadrature.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate

from ._gauss import gaussian_partial_moments, normal_mass, phi, rayleigh_partial_moments
from .errors import NegativeTheta2, NonConvergence, QuadratureBudgetExceeded
from .penalty import REALS, PenaltyFamily, PenaltySpec, Support
from .signal_model import BlockSignalModel, ScalarPrior
from .spectral import SpectralModel, r_transform, r_transform_derivative

DISTORTIONS = ("squared_error", "sign_error", "support_error")


def objective_lambda(lam, prox_scale=1.0):
    """Lambda of the RLS objective described by the engine at ``lam``."""
    return 2.0 * prox_scale * lam


def engine_lambda(lam_objective, prox_scale=1.0):
    """Inverse of :func:`objective_lambda`."""
    return lam_objective / (2.0 * prox_scale)


@dataclass(frozen=True)
class DistortionSpec:
    kind: str = "squared_error"
    eps: float = 0.0  # support_error threshold

    def __post_init__(self):
        if self.kind not in DISTORTIONS:
            raise ValueError(f"unknown distortion {self.kind!r}; expected one of {DISTORTIONS}")
        if self.eps < 0:
            raise ValueError("support threshold must be non-negative")


SQUARED_ERROR = DistortionSpec("squared_error")
SIGN_ERROR = DistortionSpec("sign_error")


@dataclass(frozen=True)
class DecoupledSystem:
    prior: ScalarPrior
    family: object
    weight: float
    tau: float
    theta2: float
    support: Support = REALS
    prox_scale: float = 1.0

    def __post_init__(self):
        if not self.theta2 > 0:
            raise ValueError("theta2 must be positive")
        if self.tau < 0:
            raise ValueError("tau must be non-negative")
        if self.prior.is_complex:
            if not isinstance(self.family, PenaltyFamily) or self.support is not REALS:
                raise NotImplementedError("complex field needs a closed-form family on the whole plane")
            if any(c.kind == "atom" and c.loc != 0 for c in self.prior.components()):
                raise NotImplementedError("complex field supports priors centred at zero only")

    @property
    def c(self) -> float:
        return self.prox_scale * self.tau

    @property
    def theta(self) -> float:
        return math.sqrt(self.theta2)

    @property
    def piecewise(self) -> bool:
        return isinstance(self.family, PenaltyFamily)

    def pieces(self):
        return self.family.pieces(self.c, self.weight, self.support)

    def estimate(self, y):
        if self.c == 0:
            return self.support.clip(y)
        return self.family.prox(y, self.c, self.weight, self.support)


def decoupled_estimate(sys: DecoupledSystem, y):
    """``x_hat`` of the decoupled scalar channel at observation ``y``."""
    return sys.estimate(y)


# ---------------------------------------------------------------------------
# Piecewise-linear expectations (real field)
# ---------------------------------------------------------------------------

def _piece_arrays(pieces):
    arr = np.array([(p.lo, p.hi, p.slope, p.icpt) for p in pieces], dtype=float)
    return arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]


def _real_component_moments(pieces, comp, theta):
    """``(E(xh - x)^2, E xh', E(xh - x) z)`` for one mixture component."""
    lo, hi, S, I = _piece_arrays(pieces)
    if comp.kind == "atom":
        a = float(np.real(comp.loc))
        m0, m1, m2 = gaussian_partial_moments((lo - a) / theta, (hi - a) / theta)
        A0 = S * a + I - a
        A1 = S * theta
        p = np.sum(A0 * A0 * m0 + 2 * A0 * A1 * m1 + A1 * A1 * m2)
        cov = theta * np.sum((A0 + a) * m1 + A1 * m2)
    else:
        v = comp.var
        s = math.sqrt(v + theta * theta)
        k = v / (v + theta * theta)
        m0, m1, m2 = gaussian_partial_moments(lo / s, hi / s)
        B = (S - k) * s
        p = np.sum(I * I * m0 + 2 * I * B * m1 + B * B * m2) + k * theta * theta
        cov = (1 - k) * s * np.sum(I * m1 + S * s * m2)
    deriv = np.sum(S * m0)
    return float(p), float(deriv), float(cov)


def _complex_component_moments(pieces, comp, theta):
    """Radial counterpart of :func:`_real_component_moments` (circular components)."""
    lo, hi, S, I = _piece_arrays(pieces)
    v = comp.var if comp.kind == "gauss" else 0.0
    s = math.sqrt(v + theta * theta)
    k = v / (v + theta * theta)
    r_m1, r0, r1, r2 = rayleigh_partial_moments(lo / s, hi / s)
    B = (S - k) * s
    p = np.sum(I * I * r0 + 2 * I * B * r1 + B * B * r2) + k * theta * theta
    cov = (1 - k) * s * np.sum(I * r1 + S * s * r2)
    # divergence of the radial map g(r) y / r is g' + g / r; Stein gives half of it
    deriv = 0.5 * np.sum(2 * S * r0 + (I / s) * r_m1)
    return float(p), float(deriv), float(cov)


def level_sup(pieces, v):
    """``sup {y : g(y) <= v}`` for the nondecreasing piecewise-linear map ``g``."""
    ans = -math.inf
    for p in pieces:
        if p.slope == 0:
            g_lo = p.icpt
        else:
            g_lo = p.slope * p.lo + p.icpt if math.isfinite(p.lo) else -math.inf
        if g_lo <= v:
            ans = p.hi if p.slope == 0 else min(p.hi, (v - p.icpt) / p.slope)
    return ans


def level_inf(pieces, v):
    """``inf {y : g(y) >= v}`` for the nondecreasing piecewise-linear map ``g``."""
    for p in pieces:
        if p.slope == 0:
            g_hi = p.icpt
        else:
            g_hi = p.slope * p.hi + p.icpt if math.isfinite(p.hi) else math.inf
        if g_hi >= v:
            return p.lo if p.slope == 0 else max(p.lo, (v - p.icpt) / p.slope)
    return math.inf


def _ncdf(y, x, theta):
    if y == math.inf:
        return 1.0
    if y == -math.inf:
        return 0.0
    return float(normal_mass(-math.inf, (y - x) / theta))


def _prob_y_in(lo, hi, x, theta):
    if hi <= lo:
        return 0.0
    return float(normal_mass((lo - x) / theta, (hi - x) / theta))


def _gauss_integral(fn, var, breaks=()):
    """``E fn(x)`` for ``x ~ N(0, var)`` by adaptive quadrature split at ``breaks``."""
    sd = math.sqrt(var)
    pts = sorted({-math.inf, math.inf, *[b for b in breaks if math.isfinite(b)]})
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        val, _ = integrate.quad(lambda x: fn(x) * phi(x / sd) / sd, a, b,
                                epsabs=1e-13, epsrel=1e-12, limit=200)
        total += val
    return total


def _real_component_distortion(sys, comp, d):
    pieces = sys.pieces()
    theta = sys.theta
    if d.kind == "squared_error":
        return _real_component_moments(pieces, comp, theta)[0]
    if d.kind == "sign_error":
        y_le0 = level_sup(pieces, 0.0)   # g(y) <= 0  iff  y <= y_le0
        y_ge0 = level_inf(pieces, 0.0)   # g(y) >= 0  iff  y >= y_ge0

        def err(x):
            if x > 0:
                return _ncdf(y_le0, x, theta)
            if x < 0:
                return 1.0 - _ncdf(y_ge0, x, theta)
            return 1.0 - _prob_y_in(y_ge0, y_le0, x, theta)

        if comp.kind == "atom":
            return err(float(np.real(comp.loc)))
        return _gauss_integral(err, comp.var, breaks=(0.0,))
    # support error: the zero set of the estimate is {|g| <= eps} = [y_lo, y_hi]
    eps = d.eps
    y_lo, y_hi = level_inf(pieces, -eps), level_sup(pieces, eps)

    def err(x):
        small = _prob_y_in(y_lo, y_hi, x, theta)
        return small if abs(x) > eps else 1.0 - small

    if comp.kind == "atom":
        return err(float(np.real(comp.loc)))
    return _gauss_integral(err, comp.var, breaks=(-eps, eps))


def _complex_component_distortion(sys, comp, d):
    pieces = sys.family.radial_pieces(sys.c, sys.weight)
    theta = sys.theta
    if d.kind == "squared_error":
        return _complex_component_moments(pieces, comp, theta)[0]
    if d.kind == "support_error" and d.eps == 0:
        r0 = level_sup(pieces, 0.0)
        s2 = (comp.var if comp.kind == "gauss" else 0.0) + sys.theta2
        p_zero = -math.expm1(-r0 * r0 / s2) if math.isfinite(r0) else 1.0
        return 1.0 - p_zero if comp.kind == "atom" else p_zero
    raise NotImplementedError(f"{d.kind} (eps={d.eps}) is not available for the complex field")


# ---------------------------------------------------------------------------
# Gauss-Hermite fallback for user-supplied penalties (real field)
# ---------------------------------------------------------------------------

def _gh_component_moments(sys, comp, nodes, tol, max_nodes):
    theta = sys.theta

    def evaluate(n):
        t, w = np.polynomial.hermite_e.hermegauss(n)
        w = w / math.sqrt(2 * math.pi)
        if comp.kind == "atom":
            a = float(np.real(comp.loc))
            xh = np.asarray(sys.estimate(a + theta * t), dtype=float)
            return (np.sum(w * (xh - a) ** 2), theta * np.sum(w * xh * t))
        v = comp.var
        s = math.sqrt(v + theta * theta)
        k = v / (v + theta * theta)
        y = s * t
        xh = np.asarray(sys.estimate(y), dtype=float)
        return (np.sum(w * (xh - k * y) ** 2) + k * theta * theta, (1 - k) * np.sum(w * xh * y))

    n = nodes
    prev = evaluate(n)
    while True:
        n *= 2
        if n > max_nodes:
            raise QuadratureBudgetExceeded(f"Gauss-Hermite moments did not settle within {max_nodes} nodes")
        cur = evaluate(n)
        if all(abs(c - q) <= tol * max(1.0, abs(c)) for c, q in zip(cur, prev)):
            break
        prev = cur
    p, cov = cur
    return float(p), None, float(cov)


# ---------------------------------------------------------------------------
# Block moments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureOptions:
    nodes: int = 61
    tol: float = 1e-8
    max_nodes: int = 61 * 16


def block_moments(sys: DecoupledSystem, quad: QuadratureOptions = QuadratureOptions()):
    """``(p, chi_derivative, chi_covariance)`` for one block's decoupled system.

    ``chi_derivative`` is ``tau * E[d x_hat / d y]``; ``chi_covariance`` is
    ``(tau / theta2) E[(x_hat - x) z]``. The derivative path is ``None`` for
    user-supplied penalties.
    """
    comps = sys.prior.components()
    p = deriv = cov = 0.0
    if sys.c == 0:
        # identity estimator restricted to the support; only used as a limit
        sys = DecoupledSystem(sys.prior, sys.family, sys.weight, 1e-300, sys.theta2,
                              sys.support, sys.prox_scale)
    if sys.piecewise:
        if sys.prior.is_complex:
            pieces = sys.family.radial_pieces(sys.c, sys.weight)
            moment = _complex_component_moments
        else:
            pieces = sys.pieces()
            moment = _real_component_moments
        for comp in comps:
            cp, cd, cc = moment(pieces, comp, sys.theta)
            p += comp.weight * cp
            deriv += comp.weight * cd
            cov += comp.weight * cc
        return p, sys.tau * deriv, sys.tau * cov / sys.theta2
    for comp in comps:
        cp, _, cc = _gh_component_moments(sys, comp, quad.nodes, quad.tol, quad.max_nodes)
        p += comp.weight * cp
        cov += comp.weight * cc
    return p, None, sys.tau * cov / sys.theta2


def moment_p(sys: DecoupledSystem, prior: Optional[ScalarPrior] = None) -> float:
    """``E |x_hat - x|^2`` of the decoupled channel."""
    if prior is not None and prior != sys.prior:
        sys = _with_prior(sys, prior)
    return block_moments(sys)[0]


def moment_chi(sys: DecoupledSystem, prior: Optional[ScalarPrior] = None, path: str = "derivative") -> float:
    """``chi`` contribution of one block; ``path`` is ``"derivative"`` or ``"covariance"``."""
    if prior is not None and prior != sys.prior:
        sys = _with_prior(sys, prior)
    _, d, c = block_moments(sys)
    if path == "covariance" or d is None:
        return c
    if path != "derivative":
        raise ValueError("path must be 'derivative' or 'covariance'")
    return d


def _with_prior(sys, prior):
    return DecoupledSystem(prior, sys.family, sys.weight, sys.tau, sys.theta2, sys.support, sys.prox_scale)


def block_distortion(sys: DecoupledSystem, d: DistortionSpec = SQUARED_ERROR) -> float:
    if not sys.piecewise:
        if d.kind != "squared_error" or sys.prior.is_complex:
            raise NotImplementedError("user-supplied penalties support squared error on the real field only")
        return block_moments(sys)[0]
    fn = _complex_component_distortion if sys.prior.is_complex else _real_component_distortion
    return float(sum(c.weight * fn(sys, c, d) for c in sys.prior.components()))


# ---------------------------------------------------------------------------
# Fixed point
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FixedPointOptions:
    damping: float = 0.5
    tol: float = 1e-12
    max_iter: int = 10_000
    prox_scale: float = 1.0
    chi_path: str = "derivative"
    quad: QuadratureOptions = QuadratureOptions()


@dataclass(frozen=True)
class ReplicaState:
    chi: float
    p: float
    tau: float
    theta2: float
    residual: float
    iterations: int = 0
    lam: float = float("nan")
    sigma2: float = float("nan")
    prox_scale: float = 1.0
    systems: tuple = field(default=(), repr=False, compare=False)
    fractions: tuple = field(default=(), repr=False, compare=False)

    @property
    def theta(self) -> float:
        return math.sqrt(self.theta2)

    @property
    def lambda_objective(self) -> float:
        return objective_lambda(self.lam, self.prox_scale)


def tau_theta2(spectral: SpectralModel, chi, p, lam, sigma2):
    """``(tau, theta2)`` from ``(chi, p)`` with the analytic product rule."""
    omega = -chi / lam
    R = r_transform(spectral, omega)
    dR = r_transform_derivative(spectral, omega)
    tau = lam / R
    theta2 = (sigma2 * R - (sigma2 * chi - lam * p) * dR / lam) / (R * R)
    return tau, theta2


def theta2_finite_difference(spectral: SpectralModel, chi, p, lam, sigma2):
    """``theta2`` with the chi-derivative taken by central differences at fixed ``p``."""
    h = max(1e-6, 1e-6 * abs(chi))

    def F(c):
        return (sigma2 * c - lam * p) * r_transform(spectral, -c / lam)

    R = r_transform(spectral, -chi / lam)
    return (F(chi + h) - F(chi - h)) / (2 * h) / (R * R)


def build_systems(signal: BlockSignalModel, penalty: PenaltySpec, tau, theta2, prox_scale=1.0):
    if signal.J != penalty.J:
        raise ValueError("penalty and signal model have different block counts")
    return tuple(DecoupledSystem(b.prior, fam, w, tau, theta2, penalty.support, prox_scale)
                 for b, (fam, w) in zip(signal.blocks, penalty.entries))


def _fractions(signal):
    return tuple(float(f) for f in signal.limit_fractions)


def fixed_point_map(spectral, signal, penalty, lam, sigma2, chi, p, options=FixedPointOptions()):
    """One undamped update ``(chi, p) -> (chi', p')`` plus the intermediate ``(tau, theta2)``."""
    tau, theta2 = tau_theta2(spectral, chi, p, lam, sigma2)
    if not theta2 > 0:
        raise NegativeTheta2(f"theta2 = {theta2:.3e} <= 0 at chi = {chi:.3e}, p = {p:.3e}")
    systems = build_systems(signal, penalty, tau, theta2, options.prox_scale)
    chi_new = p_new = 0.0
    for frac, sys in zip(_fractions(signal), systems):
        bp, bd, bc = block_moments(sys, options.quad)
        p_new += frac * bp
        chi_new += frac * (bc if options.chi_path == "covariance" or bd is None else bd)
    return chi_new, p_new, tau, theta2, systems


def solve_fixed_point(spectral: SpectralModel, signal: BlockSignalModel, penalty: PenaltySpec,
                      lam: Optional[float], sigma2: float,
                      options: FixedPointOptions = FixedPointOptions(), init=None) -> ReplicaState:
    """Damped Picard iteration on ``(chi, p)``.

    ``lam`` is in the engine convention; ``None`` derives it from
    ``penalty.lam`` (the objective lambda) through :func:`engine_lambda`.
    The iteration starts at ``chi = p = E x^2`` unless ``init = (chi, p)``
    is given.
    """
    if lam is None:
        lam = engine_lambda(penalty.lam, options.prox_scale)
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if sigma2 < 0:
        raise ValueError("noise variance must be non-negative")
    fr = _fractions(signal)
    m2 = math.fsum(f * b.prior.second_moment() for f, b in zip(fr, signal.blocks))
    chi, p = (m2, m2) if init is None else (float(init[0]), float(init[1]))
    damp = options.damping
    residual = math.inf
    for it in range(1, options.max_iter + 1):
        chi_new, p_new, tau, theta2, systems = fixed_point_map(
            spectral, signal, penalty, lam, sigma2, chi, p, options)
        d_abs = max(abs(chi_new - chi), abs(p_new - p))
        d_rel = max(abs(chi_new - chi) / max(abs(chi_new), 1e-300),
                    abs(p_new - p) / max(abs(p_new), 1e-300))
        residual = d_abs
        if d_rel <= options.tol or d_abs <= options.tol:
            return ReplicaState(chi, p, tau, theta2, residual, it, lam, sigma2,
                                options.prox_scale, systems, fr)
        chi = (1 - damp) * chi + damp * chi_new
        p = (1 - damp) * p + damp * p_new
    raise NonConvergence(f"replica fixed point did not converge in {options.max_iter} iterations",
                         residual=residual, best=(chi, p))


def self_consistency_residuals(state: ReplicaState, spectral, signal, penalty, options=FixedPointOptions()):
    """Relative residuals of the four fixed-point relations at ``state``."""
    tau, theta2 = tau_theta2(spectral, state.chi, state.p, state.lam, state.sigma2)
    chi_new, p_new, _, _, _ = fixed_point_map(spectral, signal, penalty, state.lam, state.sigma2,
                                              state.chi, state.p, options)

    def rel(a, b):
        return abs(a - b) / max(abs(b), 1e-300) if b != 0 else abs(a)

    return {"tau": rel(state.tau, tau), "theta2": rel(state.theta2, theta2),
            "chi": rel(state.chi, chi_new), "p": rel(state.p, p_new)}


def asymptotic_distortion(state: ReplicaState, systems=None, d: DistortionSpec = SQUARED_ERROR,
                          fractions=None) -> float:
    """Block-fraction-weighted average of the per-block decoupled distortion."""
    systems = state.systems if systems is None else systems
    fractions = state.fractions if fractions is None else fractions
    if len(systems) != len(fractions):
        raise ValueError("one fraction per decoupled system is required")
    return math.fsum(f * block_distortion(s, d) for f, s in zip(fractions, systems))


def conditional_cdf(sys: DecoupledSystem, x: float, v: float):
    """``(P(x_hat < v | x), P(x_hat <= v | x))`` for the real decoupled channel."""
    if sys.prior.is_complex or not sys.piecewise:
        raise NotImplementedError("conditional laws need a closed-form family on the real field")
    pieces = sys.pieces()
    return (_ncdf(level_inf(pieces, v), x, sys.theta), _ncdf(level_sup(pieces, v), x, sys.theta))


@dataclass(frozen=True)
class ReplicaProblem:
    """Everything except ``lam`` and the weights; used by the tuner and the CLI.

    With ``warm_start`` each solve starts from the previous fixed point
    reached in the same thread, falling back to a cold start on failure.
    """

    spectral: SpectralModel
    signal: BlockSignalModel
    penalty: PenaltySpec
    sigma2: float
    options: FixedPointOptions = FixedPointOptions()
    warm_start: bool = True
    _last: threading.local = field(default_factory=threading.local, init=False, repr=False, compare=False)

    def solve(self, lam, weights=None) -> ReplicaState:
        pen = self.penalty if weights is None else self.penalty.with_weights(weights)
        init = getattr(self._last, "point", None) if self.warm_start else None
        try:
            state = solve_fixed_point(self.spectral, self.signal, pen, lam, self.sigma2, self.options, init)
        except (NegativeTheta2, NonConvergence):
            if init is None:
                raise
            state = solve_fixed_point(self.spectral, self.signal, pen, lam, self.sigma2, self.options)
        self._last.point = (state.chi, state.p)
        return state

    def distortion(self, lam, weights=None, d: DistortionSpec = SQUARED_ERROR) -> float:
        return asymptotic_distortion(self.solve(lam, weights), d=d)
