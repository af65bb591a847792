"""Separable block-wise penalties and their proximal maps.

Throughout, ``prox(y; c) = argmin_{v in X} 0.5 (y - v)^2 + c u(v; w)``.
The shipped families all have the form ``u(v; w) = w (a |v| + b v^2 / 2)``,
so their proximal maps are piecewise linear in ``y``; :meth:`PenaltyFamily.pieces`
exposes that representation to the replica engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from ._optim import golden_section
from .errors import NonConvexUnsupported


@dataclass(frozen=True)
class Support:
    name: str
    lo: float
    hi: float

    def clip(self, v):
        return np.clip(v, self.lo, self.hi)

    def contains(self, v) -> bool:
        return bool(np.all((v >= self.lo) & (v <= self.hi)))


REALS = Support("reals", -math.inf, math.inf)
BOX = Support("box", -1.0, 1.0)
NONNEG = Support("nonneg", 0.0, math.inf)
SUPPORTS = {s.name: s for s in (REALS, BOX, NONNEG)}


def support_from_name(name: str) -> Support:
    try:
        return SUPPORTS[name]
    except KeyError:
        raise ValueError(f"unknown support {name!r}; expected one of {sorted(SUPPORTS)}") from None


class Piece(NamedTuple):
    """``prox(y) = slope * y + icpt`` for ``lo < y < hi``."""

    lo: float
    hi: float
    slope: float
    icpt: float


def _clip_pieces(pieces, lo, hi):
    if lo == -math.inf and hi == math.inf:
        return list(pieces)
    out = []
    for p in pieces:
        if p.slope == 0.0:
            out.append(Piece(p.lo, p.hi, 0.0, min(max(p.icpt, lo), hi)))
            continue
        y_lo = (lo - p.icpt) / p.slope if lo > -math.inf else -math.inf
        y_hi = (hi - p.icpt) / p.slope if hi < math.inf else math.inf
        cuts = [p.lo, max(p.lo, min(y_lo, p.hi)), max(p.lo, min(y_hi, p.hi)), p.hi]
        if cuts[1] > cuts[0]:
            out.append(Piece(cuts[0], cuts[1], 0.0, lo))
        if cuts[2] > cuts[1]:
            out.append(Piece(cuts[1], cuts[2], p.slope, p.icpt))
        if cuts[3] > cuts[2]:
            out.append(Piece(cuts[2], cuts[3], 0.0, hi))
    # merge neighbouring constant pieces with equal value
    merged = [out[0]]
    for p in out[1:]:
        q = merged[-1]
        if p.slope == q.slope == 0.0 and p.icpt == q.icpt:
            merged[-1] = Piece(q.lo, p.hi, 0.0, q.icpt)
        else:
            merged.append(p)
    return merged


@dataclass(frozen=True)
class PenaltyFamily:
    """``u(v; w) = w * (l1 |v| + l2 |v|^2 / 2)``."""

    name: str
    l1: float = 0.0
    l2: float = 0.0
    convex = True
    piecewise_linear = True

    def __post_init__(self):
        if self.l1 < 0 or self.l2 < 0:
            raise ValueError("penalty coefficients must be non-negative")

    def value(self, v, w=1.0):
        a = np.abs(v)
        return w * (self.l1 * a + 0.5 * self.l2 * a * a)

    def coefficients(self, w):
        return w * self.l1, w * self.l2

    def prox(self, y, c, w=1.0, support: Support = REALS):
        thr, shrink = self._threshold_shrink(c, w)
        if np.iscomplexobj(y):
            if support is not REALS:
                raise ValueError("complex prox only supports the unconstrained set")
            r = np.abs(y)
            with np.errstate(invalid="ignore", divide="ignore"):
                g = np.maximum(r - thr, 0.0) * shrink
                return np.where(r > 0, g * y / np.where(r > 0, r, 1.0), 0.0)
        y = np.asarray(y, dtype=float)
        v = np.sign(y) * np.maximum(np.abs(y) - thr, 0.0) * shrink
        v = support.clip(v)
        return v if v.ndim else float(v)

    def prox_derivative(self, y, c, w=1.0, support: Support = REALS):
        thr, shrink = self._threshold_shrink(c, w)
        y = np.asarray(y, dtype=float)
        v = np.sign(y) * np.maximum(np.abs(y) - thr, 0.0) * shrink
        active = (np.abs(y) > thr) & (v > support.lo) & (v < support.hi)
        d = np.where(active, shrink, 0.0)
        return d if d.ndim else float(d)

    def _threshold_shrink(self, c, w):
        a, b = self.coefficients(w)
        return c * a, 1.0 / (1.0 + c * b)

    def pieces(self, c, w=1.0, support: Support = REALS) -> list[Piece]:
        thr, k = self._threshold_shrink(c, w)
        if thr > 0:
            base = [Piece(-math.inf, -thr, k, k * thr), Piece(-thr, thr, 0.0, 0.0),
                    Piece(thr, math.inf, k, -k * thr)]
        else:
            base = [Piece(-math.inf, math.inf, k, 0.0)]
        return _clip_pieces(base, support.lo, support.hi)

    def radial_pieces(self, c, w=1.0) -> list[Piece]:
        """Pieces of ``r -> |prox|`` on ``r >= 0`` for the complex (radial) prox."""
        thr, k = self._threshold_shrink(c, w)
        if thr > 0:
            return [Piece(0.0, thr, 0.0, 0.0), Piece(thr, math.inf, k, -k * thr)]
        return [Piece(0.0, math.inf, k, 0.0)]

    def subdifferential(self, v, w=1.0):
        """Interval ``[lo, hi]`` of ``du(v; w)`` for real ``v`` (arrays allowed)."""
        a, b = self.coefficients(w)
        v = np.asarray(v, dtype=float)
        base = b * v + a * np.sign(v)
        zero = v == 0
        lo = np.where(zero, -a, base)
        hi = np.where(zero, a, base)
        return lo, hi


def L1(scale=1.0) -> PenaltyFamily:
    return PenaltyFamily("l1", l1=scale)


def L2Half(scale=1.0) -> PenaltyFamily:
    return PenaltyFamily("l2half", l2=scale)


def Elastic(l1, l2) -> PenaltyFamily:
    return PenaltyFamily("elastic", l1=l1, l2=l2)


FAMILY_BUILDERS = {"l1": L1, "l2half": L2Half}


@dataclass(frozen=True)
class GenericPenalty:
    """User-supplied scalar penalty ``u(v; w) = w * fn(v)`` minimized numerically."""

    fn: Callable
    name: str = "generic"
    convex: bool = True
    piecewise_linear = False

    def value(self, v, w=1.0):
        return w * np.asarray(self.fn(v))

    def prox(self, y, c, w=1.0, support: Support = REALS):
        if np.ndim(y):
            return np.array([self.prox(float(t), c, w, support) for t in np.ravel(y)]).reshape(np.shape(y))
        return prox_generic(lambda v: w * self.fn(v), float(y), c, (support.lo, support.hi))


def prox(family, y, c, support: Support = REALS, w=1.0):
    """Proximal map of ``c * u(.; w)`` restricted to ``support``."""
    if c <= 0:
        raise ValueError("prox multiplier c must be positive")
    if not getattr(family, "convex", False) and not isinstance(family, GenericPenalty):
        raise NonConvexUnsupported(f"{family.name} has no closed-form prox")
    return family.prox(y, c, w, support)


def _eval_vec(u, v):
    out = np.asarray(u(v), dtype=float)
    if out.shape != np.shape(v):
        out = np.array([float(u(t)) for t in v])
    return out


def prox_generic(u, y, c, support=(-math.inf, math.inf), grid=1024):
    """Minimize ``0.5 (y - v)^2 + c u(v)`` over an interval by grid search and
    golden-section refinement.

    The search interval is ``[y - r, y + r]`` intersected with the support,
    where ``r = sqrt(2 f(v0))`` for the feasible anchor ``v0 = clip(y)``; no
    minimizer can lie further from ``y`` because ``u >= 0``. For multimodal
    objectives this returns the best grid-seeded local optimum.
    """
    lo, hi = support
    v0 = min(max(y, lo), hi)

    def f(v):
        return 0.5 * (y - v) ** 2 + c * float(u(v))

    f0 = f(v0)
    r = math.sqrt(2.0 * f0)
    if r == 0.0:
        return v0
    a, b = max(lo, y - r), min(hi, y + r)
    if a == b:
        return a
    vs = np.linspace(a, b, grid)
    fs = 0.5 * (y - vs) ** 2 + c * _eval_vec(u, vs)
    best = np.flatnonzero(fs == fs.min())
    i = int(best[np.argmin(np.abs(vs[best]))])
    left, right = vs[max(i - 1, 0)], vs[min(i + 1, grid - 1)]
    x, fx = golden_section(f, left, right, tol=1e-14)
    x, fx = _snap(f, x, fx, (0.0, lo, hi))
    return _newton_polish(f, x, fx, lo, hi)


def _snap(f, x, fx, targets):
    for t in targets:
        # golden section stops about sqrt(eps) short of a minimum where f is flat on one side
        if math.isfinite(t) and abs(x - t) < 1e-6 * max(1.0, abs(t)):
            ft = f(t)
            if ft <= fx + 4 * np.finfo(float).eps * max(1.0, abs(fx)):
                return t, ft
    return x, fx


def _newton_polish(f, x, fx, lo, hi, steps=3):
    """Newton steps on finite-difference derivatives where ``f`` is smooth,
    clipped to ``[lo, hi]``.

    Golden section alone only locates smooth minima to about sqrt(eps).
    """
    for _ in range(steps):
        h = 1e-5 * max(1.0, abs(x))
        fm2, fm, fp, fp2 = f(x - 2 * h), f(x - h), f(x + h), f(x + 2 * h)
        d2_left = (fx - 2 * fm + fm2) / h**2
        d2_right = (fp2 - 2 * fp + fx) / h**2
        d2 = (fp - 2 * fx + fm) / h**2
        if d2 <= 0 or abs(d2_left - d2_right) > 1e-3 * d2 or abs(d2 - d2_left) > 1e-3 * d2:
            return x
        step = (fp - fm) / (2 * h) / d2
        if abs(step) > h:
            return x
        xn = min(max(x - step, lo), hi)
        fn = f(xn)
        if fn > fx + 4 * np.finfo(float).eps * max(1.0, abs(fx)):
            return x
        if xn == x:
            return x
        x, fx = xn, fn
    return x


@dataclass(frozen=True)
class PenaltySpec:
    """Per-block ``(family, weight)`` pairs, the global ``lam`` of the RLS
    objective ``(1/lam) ||y - A v||^2 + u(v)``, and the support set."""

    entries: tuple
    lam: float = 1.0
    support: Support = REALS

    def __post_init__(self):
        entries = tuple((fam, float(w)) for fam, w in self.entries)
        if not entries:
            raise ValueError("at least one penalty block is required")
        if any(w < 0 for _, w in entries):
            raise ValueError("penalty weights must be non-negative")
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        object.__setattr__(self, "entries", entries)

    @property
    def J(self) -> int:
        return len(self.entries)

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.entries])

    @property
    def families(self):
        return [f for f, _ in self.entries]

    def with_weights(self, weights) -> "PenaltySpec":
        if len(weights) != self.J:
            raise ValueError("one weight per block is required")
        return PenaltySpec(tuple((f, w) for (f, _), w in zip(self.entries, weights)),
                           self.lam, self.support)

    def with_lam(self, lam) -> "PenaltySpec":
        return PenaltySpec(self.entries, lam, self.support)

    def coordinate(self, model=None, N=None) -> "CoordinatePenalty":
        """Per-coordinate coefficient arrays for the vectorized solvers."""
        for fam, _ in self.entries:
            if not isinstance(fam, PenaltyFamily):
                raise NonConvexUnsupported("finite-N solvers need closed-form penalty families")
        a = np.array([fam.coefficients(w)[0] for fam, w in self.entries])
        b = np.array([fam.coefficients(w)[1] for fam, w in self.entries])
        if model is None:
            if self.J != 1 or N is None:
                raise ValueError("a block model is required for multi-block penalties")
            owner = np.zeros(N, dtype=int)
        else:
            if model.J != self.J:
                raise ValueError("penalty and signal model have different block counts")
            owner = model.block_of
        return CoordinatePenalty(a[owner], b[owner], self.support)


@dataclass(frozen=True)
class CoordinatePenalty:
    """``sum_n a_n |v_n| + b_n v_n^2 / 2`` with a common support set."""

    a: np.ndarray
    b: np.ndarray
    support: Support

    def value(self, v):
        av = np.abs(v)
        return float(np.sum(self.a * av + 0.5 * self.b * av * av))

    def prox(self, y, c):
        v = np.sign(y) * np.maximum(np.abs(y) - c * self.a, 0.0) / (1.0 + c * self.b)
        return self.support.clip(v)

    def prox_derivative(self, y, c):
        v = np.sign(y) * np.maximum(np.abs(y) - c * self.a, 0.0) / (1.0 + c * self.b)
        active = (np.abs(y) > c * self.a) & (v > self.support.lo) & (v < self.support.hi)
        return np.where(active, 1.0 / (1.0 + c * self.b), 0.0)

    def subdifferential(self, v):
        """``[lo, hi]`` of ``du(v) + N_X(v)`` per coordinate."""
        base = self.b * v + self.a * np.sign(v)
        zero = v == 0
        lo = np.where(zero, -self.a, base)
        hi = np.where(zero, self.a, base)
        lo = np.where(v <= self.support.lo, -np.inf, lo)
        hi = np.where(v >= self.support.hi, np.inf, hi)
        return lo, hi


def total_penalty(spec: PenaltySpec, v, model) -> float:
    """``sum_j sum_{n in block j} u_j(v_n; w_j)``."""
    v = np.asarray(v)
    if v.shape != (model.N,):
        raise ValueError(f"expected a vector of length {model.N}, got shape {v.shape}")
    if spec.J != model.J:
        raise ValueError("penalty and signal model have different block counts")
    total = 0.0
    for (fam, w), blk in zip(spec.entries, model.blocks):
        total += float(np.sum(fam.value(v[blk.indices], w)))
    return total
