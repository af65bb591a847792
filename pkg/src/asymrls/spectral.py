"""Asymptotic eigenvalue laws of the Gram matrix ``J = A^H A``.

Sign conventions::

    G(s) = integral of p(l) / (l - s) dl          (Stieltjes transform)
    R(w) = G^{-1}(-w) - 1/w                        (R-transform)

With these signs ``G`` is positive and increasing on the real axis below the
spectrum, so ``G^{-1}(-w)`` for ``w < 0`` is found by bracketing to the left
of the smallest eigenvalue. ``R(0)`` is the mean eigenvalue and ``R'(0)`` the
eigenvalue variance.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .errors import NonConvergence, OutOfDomain, SingularPoint

_EPS = np.finfo(float).eps
_OMEGA_ZERO = 1e-9
_SMALL_OMEGA = 1e-2

VARIANCE_CONVENTIONS = ("var-1/M", "var-1/N")


class SpectralModel:
    """Base class. Subclasses provide the Stieltjes transform and, when known,
    closed forms of the R-transform and its derivative."""

    kind: str = "abstract"

    # -- to be provided by subclasses ---------------------------------------
    @property
    def support(self) -> tuple[float, float]:
        raise NotImplementedError

    def mean(self) -> float:
        raise NotImplementedError

    def variance(self) -> float:
        raise NotImplementedError

    def stieltjes(self, s):
        raise NotImplementedError

    def stieltjes_derivative(self, s: float) -> float:
        raise NotImplementedError

    def in_support(self, s: float) -> bool:
        raise NotImplementedError

    def r_closed(self, omega: float) -> float | None:
        return None

    def r_closed_derivative(self, omega: float) -> float | None:
        return None

    def lower_edge_stieltjes(self) -> float:
        """``lim G(s)`` as ``s`` increases to the smallest eigenvalue (may be inf)."""
        return math.inf

    def upper_edge_stieltjes(self) -> float:
        return -math.inf

    # -- shared machinery ---------------------------------------------------
    @property
    def has_closed_form(self) -> bool:
        return self.r_closed(-1.0) is not None

    def _check_real_point(self, s) -> None:
        if np.imag(s) == 0 and self.in_support(float(np.real(s))):
            raise SingularPoint(f"s={s!r} lies in the support of the {self.kind} law")

    def inverse_stieltjes(self, value: float, maxiter: int = 500) -> float:
        """Real ``s`` outside the spectrum with ``G(s) = value``.

        Positive values are sought below the spectrum, negative ones above it.
        """
        if value == 0.0:
            raise OutOfDomain("G(s) = 0 has no finite preimage")
        lo_edge, hi_edge = self.support
        if value > 0:
            if value >= self.lower_edge_stieltjes():
                raise OutOfDomain(f"no real preimage of G = {value:g} below the spectrum")
            edge, direction = lo_edge, -1.0
        else:
            if value <= self.upper_edge_stieltjes():
                raise OutOfDomain(f"no real preimage of G = {value:g} above the spectrum")
            edge, direction = hi_edge, 1.0

        def f(s):
            return float(np.real(self.stieltjes(s))) - value

        # G is increasing on both sides of the spectrum.
        far = edge + direction
        step = 1.0
        for _ in range(2000):
            if (f(far) < 0) == (direction < 0):
                break
            step *= 2.0
            far = edge + direction * step
        else:
            raise NonConvergence("could not bracket G^{-1} away from the spectrum")
        near = edge + direction * step
        gap = step
        for _ in range(2000):
            near = edge + direction * gap
            if (f(near) > 0) == (direction < 0) or f(near) == 0:
                break
            gap *= 0.5
            if gap < 1e-300:
                raise OutOfDomain("preimage accumulates at the spectral edge")
        else:
            raise NonConvergence("could not bracket G^{-1} near the spectrum")
        a, b = sorted((far, near))
        s, info = optimize.brentq(f, a, b, xtol=1e-300, rtol=4 * _EPS, maxiter=maxiter,
                                  full_output=True, disp=False)
        resid = abs(f(s))
        allowance = 8 * _EPS * max(1.0, abs(s)) * abs(self.stieltjes_derivative(s))
        if not info.converged or resid > max(1e-12 * max(1.0, abs(value)), allowance):
            raise NonConvergence(f"G^{{-1}}({value:g}) residual {resid:.3e}", residual=resid)
        return s

    def r_numeric(self, omega: float) -> float:
        if abs(omega) < _OMEGA_ZERO:
            return self.mean() + self.variance() * omega
        return self.inverse_stieltjes(-omega) - 1.0 / omega

    def r_numeric_derivative(self, omega: float) -> float:
        if abs(omega) < _OMEGA_ZERO:
            return self.variance()
        s = self.inverse_stieltjes(-omega)
        return -1.0 / self.stieltjes_derivative(s) + 1.0 / omega**2


def _atoms_stieltjes(eigs, weights, s):
    return np.sum(weights / (eigs - s))


@dataclass(frozen=True)
class Tabulated(SpectralModel):
    """Finite mixture of point masses ``(eigenvalue, weight)``."""

    atoms: tuple[tuple[float, float], ...]
    kind = "tabulated"

    def __post_init__(self):
        atoms = tuple((float(e), float(w)) for e, w in self.atoms)
        if not atoms:
            raise ValueError("Tabulated spectrum needs at least one atom")
        if any(e < 0 for e, _ in atoms):
            raise ValueError("eigenvalues must be non-negative")
        if any(w <= 0 for _, w in atoms):
            raise ValueError("atom weights must be positive")
        total = math.fsum(w for _, w in atoms)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"atom weights sum to {total!r}, expected 1")
        object.__setattr__(self, "atoms", atoms)

    @property
    def _eigs(self):
        return np.array([e for e, _ in self.atoms])

    @property
    def _weights(self):
        return np.array([w for _, w in self.atoms])

    @property
    def support(self):
        e = self._eigs
        return float(e.min()), float(e.max())

    def mean(self):
        return float(np.dot(self._weights, self._eigs))

    def variance(self):
        m = self.mean()
        return float(np.dot(self._weights, (self._eigs - m) ** 2))

    def in_support(self, s):
        return bool(np.any(self._eigs == s))

    def stieltjes(self, s):
        self._check_real_point(s)
        return _atoms_stieltjes(self._eigs, self._weights, s)

    def stieltjes_derivative(self, s):
        return float(np.sum(self._weights / (self._eigs - s) ** 2))

    # With d_i = l_i - R, the equation G(R + 1/w) = -w is equivalent to
    # sum_i w_i d_i / (1 - w d_i) = 0, which stays well conditioned as w -> 0.
    def _h_terms(self, r, omega):
        d = self._eigs - r
        q = 1.0 - omega * d
        return d, q

    def r_numeric(self, omega):
        if abs(omega) >= _SMALL_OMEGA or omega > 0:
            return super().r_numeric(omega)
        if omega == 0.0:
            return self.mean()
        lmin = float(self._eigs.min())
        hi = lmin - 1.0 / omega

        def h(r):
            d, q = self._h_terms(r, omega)
            return float(np.sum(self._weights * d / q))

        lo = self.mean() - 1.0
        while h(lo) < 0:
            lo -= 2.0 * (hi - lo)
        gap = hi - lo
        while h(hi - gap) > 0:
            gap *= 0.5
        return optimize.brentq(h, lo, hi - gap, xtol=1e-300, rtol=4 * _EPS, maxiter=500)

    def r_numeric_derivative(self, omega):
        r = self.r_numeric(omega)
        d, q = self._h_terms(r, omega)
        return float(np.sum(self._weights * d**2 / q**2) / np.sum(self._weights / q**2))


@dataclass(frozen=True)
class Identity(SpectralModel):
    """All eigenvalues equal one (square orthogonal ``A``)."""

    kind = "identity"

    @property
    def support(self):
        return 1.0, 1.0

    def mean(self):
        return 1.0

    def variance(self):
        return 0.0

    def in_support(self, s):
        return s == 1.0

    def stieltjes(self, s):
        self._check_real_point(s)
        return 1.0 / (1.0 - s)

    def stieltjes_derivative(self, s):
        return 1.0 / (1.0 - s) ** 2

    def r_closed(self, omega):
        return 1.0

    def r_closed_derivative(self, omega):
        return 0.0


@dataclass(frozen=True)
class RowOrthogonal(SpectralModel):
    """``A`` with ``M = rho N`` orthonormal rows: ``J`` is a projection."""

    rho: float
    kind = "row_orthogonal"

    def __post_init__(self):
        if not 0 < self.rho <= 1:
            raise ValueError("RowOrthogonal requires 0 < rho <= 1")

    def to_tabulated(self) -> Tabulated:
        if self.rho == 1.0:
            return Tabulated(((1.0, 1.0),))
        return Tabulated(((1.0, self.rho), (0.0, 1.0 - self.rho)))

    @property
    def support(self):
        return (1.0, 1.0) if self.rho == 1.0 else (0.0, 1.0)

    def mean(self):
        return self.rho

    def variance(self):
        return self.rho * (1.0 - self.rho)

    def in_support(self, s):
        return s == 1.0 or (s == 0.0 and self.rho < 1.0)

    def stieltjes(self, s):
        self._check_real_point(s)
        g = self.rho / (1.0 - s)
        if self.rho < 1.0:
            g = g + (1.0 - self.rho) / (0.0 - s)
        return g

    def stieltjes_derivative(self, s):
        d = self.rho / (1.0 - s) ** 2
        if self.rho < 1.0:
            d += (1.0 - self.rho) / s**2
        return d

    # R(w) = (w - 1 + sqrt(D)) / (2w) with D = (1 - w)^2 + 4 rho w, written
    # in rationalized form so that w -> 0 needs no special casing.
    def r_closed(self, omega):
        r = self.rho
        if r == 1.0:
            return 1.0
        sq = math.sqrt((1.0 - omega) ** 2 + 4.0 * r * omega)
        return 2.0 * r / (sq + 1.0 - omega)

    def r_closed_derivative(self, omega):
        r = self.rho
        if r == 1.0:
            return 0.0
        sq = math.sqrt((1.0 - omega) ** 2 + 4.0 * r * omega)
        dsq = (omega - 1.0 + 2.0 * r) / sq
        return -2.0 * r * (dsq - 1.0) / (sq + 1.0 - omega) ** 2


@dataclass(frozen=True)
class MarchenkoPastur(SpectralModel):
    """Limit law of ``A^T A`` for i.i.d. ``A`` (M x N, ``rho = M/N``).

    ``scale = 1`` is the law for entries of variance ``1/M`` (mean eigenvalue
    one, ``R(w) = rho / (rho - w)``); ``scale = rho`` corresponds to variance
    ``1/N`` (``R(w) = rho / (1 - w)``). In general all eigenvalues are
    multiplied by ``scale``.
    """

    rho: float
    scale: float = 1.0
    kind = "marchenko_pastur"

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @classmethod
    def preset(cls, rho: float, convention: str) -> "MarchenkoPastur":
        if convention == "var-1/M":
            return cls(rho, 1.0)
        if convention == "var-1/N":
            return cls(rho, rho)
        raise ValueError(f"unknown variance convention {convention!r}; "
                         f"expected one of {VARIANCE_CONVENTIONS}")

    @property
    def _ratio(self):
        # c = N/M in the usual Wishart parametrization
        return 1.0 / self.rho

    @property
    def edges(self) -> tuple[float, float]:
        c = self._ratio
        return (self.scale * (1 - math.sqrt(c)) ** 2, self.scale * (1 + math.sqrt(c)) ** 2)

    @property
    def zero_atom(self) -> float:
        return max(0.0, 1.0 - self.rho)

    @property
    def support(self):
        lo, hi = self.edges
        return (0.0 if self.rho < 1 else lo), hi

    def mean(self):
        return self.scale

    def variance(self):
        return self.scale**2 / self.rho

    def in_support(self, s):
        lo, hi = self.edges
        return (lo <= s <= hi) or (s == 0.0 and self.rho < 1)

    def density(self, x):
        """Density of the absolutely continuous part (total mass ``min(1, rho)``)."""
        lo, hi = self.edges
        x = np.asarray(x, dtype=float)
        inside = (x > lo) & (x < hi)
        out = np.zeros_like(x)
        xi = x[inside]
        out[inside] = np.sqrt((hi - xi) * (xi - lo)) / (2 * np.pi * self._ratio * self.scale * xi)
        return out

    def _roots(self, s):
        a, r = self.scale, self.rho
        qa = a * s
        qb = s * r - a * r + a
        if qa == 0:
            return (-r / qb,)
        disc = np.sqrt(qb * qb - 4 * qa * r + 0j)
        return ((-qb + disc) / (2 * qa), (-qb - disc) / (2 * qa))

    def stieltjes(self, s):
        self._check_real_point(s)
        roots = self._roots(s)
        if len(roots) == 1:
            return float(np.real(roots[0]))
        if np.imag(s) != 0:
            sgn = np.sign(np.imag(s))
            g = max(roots, key=lambda z: sgn * np.imag(z))
            return complex(g)
        s = float(np.real(s))
        # Select the physical branch by continuity from the upper half plane.
        delta = 1e-7 * (1.0 + abs(s))
        probe = max(self._roots(s + 1j * delta), key=lambda z: np.imag(z))
        g = min(roots, key=lambda z: abs(z - probe))
        return float(np.real(g))

    def stieltjes_quadrature(self, s):
        """``G(s)`` by adaptive quadrature of the density (independent of the closed form)."""
        self._check_real_point(s)
        lo, hi = self.edges
        norm = 2 * np.pi * self._ratio * self.scale
        atom = self.zero_atom / (0.0 - s) if self.rho < 1 else 0.0

        def part(fn):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", integrate.IntegrationWarning)
                return _part(fn)

        def _part(fn):
            if lo == 0.0:
                val, _ = integrate.quad(lambda x: fn(x), lo, hi, weight="alg", wvar=(-0.5, 0.5),
                                        epsabs=1e-15, epsrel=1e-13, limit=200)
            else:
                val, _ = integrate.quad(lambda x: fn(x) / x, lo, hi, weight="alg", wvar=(0.5, 0.5),
                                        epsabs=1e-15, epsrel=1e-13, limit=200)
            return val / norm

        if np.imag(s) == 0:
            s = float(np.real(s))
            return atom + part(lambda x: 1.0 / (x - s))
        re = part(lambda x: np.real(1.0 / (x - s)))
        im = part(lambda x: np.imag(1.0 / (x - s)))
        return atom + re + 1j * im

    def stieltjes_derivative(self, s):
        # dG/ds = G^2 ... not in closed form for all branches; differentiate the quadratic
        a, r = self.scale, self.rho
        g = self.stieltjes(s)
        # implicit: a s g^2 + (s r - a r + a) g + r = 0
        num = a * g * g + r * g
        den = 2 * a * s * g + (s * r - a * r + a)
        return float(-num / den)

    def lower_edge_stieltjes(self):
        if self.rho <= 1:
            return math.inf
        lo, _ = self.edges
        return self._edge_value(lo)

    def upper_edge_stieltjes(self):
        _, hi = self.edges
        return self._edge_value(hi)

    def _edge_value(self, edge):
        # At a square-root edge the two roots merge: g = -qb / (2 qa).
        a, r = self.scale, self.rho
        qa = a * edge
        qb = edge * r - a * r + a
        return -qb / (2 * qa)

    def r_closed(self, omega):
        a, r = self.scale, self.rho
        den = r - a * omega
        if den <= 0:
            raise OutOfDomain(f"R-transform pole at omega = {r / a:g}")
        return a * r / den

    def r_closed_derivative(self, omega):
        a, r = self.scale, self.rho
        den = r - a * omega
        if den <= 0:
            raise OutOfDomain(f"R-transform pole at omega = {r / a:g}")
        return a * a * r / den**2


def stieltjes(model: SpectralModel, s):
    """Stieltjes transform ``G_J(s)``; raises :class:`SingularPoint` on the support."""
    return model.stieltjes(s)


def r_transform(model: SpectralModel, omega: float, method: str = "auto") -> float:
    """R-transform ``R_J(omega)``.

    ``method`` is ``"closed"``, ``"numeric"`` (root finding on ``G``), or
    ``"auto"`` (closed form when the model has one).
    """
    if method not in ("auto", "closed", "numeric"):
        raise ValueError(f"unknown method {method!r}")
    if method != "numeric":
        val = model.r_closed(omega)
        if val is not None:
            return float(val)
        if method == "closed":
            raise ValueError(f"{model.kind} has no closed-form R-transform")
    return model.r_numeric(omega)


def r_transform_derivative(model: SpectralModel, omega: float, method: str = "auto") -> float:
    if method != "numeric":
        val = model.r_closed_derivative(omega)
        if val is not None:
            return float(val)
        if method == "closed":
            raise ValueError(f"{model.kind} has no closed-form R-transform")
    return model.r_numeric_derivative(omega)


def mp_numeric_r(model: MarchenkoPastur, omega: float) -> float:
    """R-transform of an MP law by inverting the *quadrature* Stieltjes transform.

    Shares nothing with the closed form, so it serves as an oracle for it.
    """
    target = -omega
    lo_edge, hi_edge = model.support
    if abs(omega) < _OMEGA_ZERO:
        return model.mean()
    if target <= 0:
        raise OutOfDomain("oracle only covers omega < 0")
    if target >= model.lower_edge_stieltjes():
        raise OutOfDomain(f"no real preimage of G = {target:g}")

    def f(s):
        return model.stieltjes_quadrature(s) - target

    gap = 1.0
    while f(lo_edge - gap) > 0:
        gap *= 2.0
    far = lo_edge - gap
    near_gap = gap
    while f(lo_edge - near_gap) < 0:
        near_gap *= 0.5
        if near_gap < 1e-300:
            raise OutOfDomain("preimage at the spectral edge")
    s = optimize.brentq(f, far, lo_edge - near_gap, xtol=1e-300, rtol=4 * _EPS, maxiter=500)
    return s - 1.0 / omega


def spectral_from_config(cfg: dict, rho: float | None = None) -> SpectralModel:
    """Build a model from ``{"kind": ..., ...}``. ``rho`` fills in a missing ratio."""
    kind = cfg.get("kind")
    if kind in ("marchenko_pastur", "iid_gauss"):
        r = cfg.get("rho", rho)
        if "scale" in cfg:
            return MarchenkoPastur(float(r), float(cfg["scale"]))
        return MarchenkoPastur.preset(float(r), cfg.get("variance", "var-1/M"))
    if kind == "row_orthogonal":
        return RowOrthogonal(float(cfg.get("rho", rho)))
    if kind == "identity":
        return Identity()
    if kind == "tabulated":
        return Tabulated(tuple(tuple(a) for a in cfg["atoms"]))
    raise ValueError(f"unknown spectral kind {kind!r}")
