"""Block-partitioned signal priors.

The index set ``[N]`` is split into disjoint blocks; every sample of block
``j`` is drawn independently from that block's scalar prior. Priors are
represented as mixtures of point masses and centred Gaussians, which is all
the replica engine needs to evaluate its expectations in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from dataclasses import field as dc_field

import numpy as np

from .errors import QuadratureBudgetExceeded

FAMILIES = ("bernoulli_gauss", "bpsk", "gauss")
FIELDS = ("real", "complex")


@dataclass(frozen=True)
class Component:
    """One mixture component: a point mass at ``loc`` or a centred Gaussian.

    For the complex field ``var`` is the total variance ``E|x|^2`` of a
    circularly symmetric Gaussian.
    """

    weight: float
    kind: str  # "atom" | "gauss"
    loc: complex = 0.0
    var: float = 0.0


@dataclass(frozen=True)
class ScalarPrior:
    family: str
    mu: float = 1.0
    var: float = 1.0
    field: str = "real"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown prior family {self.family!r}")
        if self.field not in FIELDS:
            raise ValueError(f"unknown field {self.field!r}")
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError("sparsity factor mu must lie in [0, 1]")
        if self.var <= 0:
            raise ValueError("variance must be positive")

    @classmethod
    def bernoulli_gauss(cls, mu, var=1.0, field="real"):
        return cls("bernoulli_gauss", mu, var, field)

    @classmethod
    def bpsk(cls, field="real"):
        return cls("bpsk", 1.0, 1.0, field)

    @classmethod
    def gauss(cls, var=1.0, field="real"):
        return cls("gauss", 1.0, var, field)

    @property
    def is_complex(self) -> bool:
        return self.field == "complex"

    def components(self) -> tuple[Component, ...]:
        if self.family == "bpsk":
            if self.is_complex:
                a = 1 / math.sqrt(2)
                return tuple(Component(0.25, "atom", complex(sr * a, si * a))
                             for sr in (-1, 1) for si in (-1, 1))
            return (Component(0.5, "atom", -1.0), Component(0.5, "atom", 1.0))
        if self.family == "gauss":
            return (Component(1.0, "gauss", 0.0, self.var),)
        comps = []
        if self.mu < 1.0:
            comps.append(Component(1.0 - self.mu, "atom", 0.0))
        if self.mu > 0.0:
            comps.append(Component(self.mu, "gauss", 0.0, self.var))
        return tuple(comps)

    def second_moment(self) -> float:
        total = 0.0
        for c in self.components():
            total += c.weight * (abs(c.loc) ** 2 if c.kind == "atom" else c.var)
        return total

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.family == "bpsk":
            if self.is_complex:
                a = 1 / math.sqrt(2)
                return a * (rng.choice([-1.0, 1.0], n) + 1j * rng.choice([-1.0, 1.0], n))
            return rng.choice([-1.0, 1.0], n)
        if self.is_complex:
            g = math.sqrt(self.var / 2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
        else:
            g = math.sqrt(self.var) * rng.standard_normal(n)
        if self.family == "gauss":
            return g
        mask = rng.random(n) < self.mu
        return np.where(mask, g, 0.0)

    def cdf(self, x):
        """CDF of a real prior (used for goodness-of-fit checks)."""
        from scipy.special import ndtr

        if self.is_complex:
            raise ValueError("cdf is defined for real priors only")
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for c in self.components():
            if c.kind == "atom":
                out += c.weight * (x >= np.real(c.loc))
            else:
                out += c.weight * ndtr(x / math.sqrt(c.var))
        return out


@dataclass(frozen=True)
class Block:
    indices: np.ndarray
    prior: ScalarPrior

    @property
    def mu(self) -> float:
        return self.prior.mu


@dataclass(frozen=True)
class BlockSignalModel:
    N: int
    blocks: tuple[Block, ...]
    field: str = "real"
    nominal_fractions: tuple | None = dc_field(default=None, compare=False)
    _owner: np.ndarray = dc_field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be positive")
        if not self.blocks:
            raise ValueError("at least one block is required")
        owner = np.full(self.N, -1, dtype=int)
        for j, b in enumerate(self.blocks):
            idx = np.asarray(b.indices)
            if idx.size and (idx.min() < 0 or idx.max() >= self.N):
                raise ValueError(f"block {j} has indices outside [0, N)")
            if np.any(owner[idx] >= 0) or len(np.unique(idx)) != idx.size:
                raise ValueError(f"block {j} overlaps another block")
            owner[idx] = j
            if b.prior.field != self.field:
                raise ValueError(f"block {j} prior field differs from the model field")
        if np.any(owner < 0):
            raise ValueError("blocks do not cover all indices")
        object.__setattr__(self, "_owner", owner)

    @classmethod
    def from_fractions(cls, N, fractions, priors, field="real"):
        """Contiguous blocks with sizes proportional to ``fractions``."""
        fractions = np.asarray(fractions, dtype=float)
        if abs(fractions.sum() - 1.0) > 1e-9:
            raise ValueError("block fractions must sum to 1")
        edges = np.rint(np.concatenate([[0.0], np.cumsum(fractions)]) * N).astype(int)
        edges[-1] = N
        blocks = tuple(Block(np.arange(edges[j], edges[j + 1]), p) for j, p in enumerate(priors))
        return cls(N, blocks, field, tuple(float(f) for f in fractions))

    @property
    def J(self) -> int:
        return len(self.blocks)

    @property
    def fractions(self) -> np.ndarray:
        """Realized block fractions ``|N_j| / N``."""
        return np.array([len(b.indices) / self.N for b in self.blocks])

    @property
    def limit_fractions(self) -> np.ndarray:
        """Requested fractions when built from them (the large-N limit), else realized ones."""
        if self.nominal_fractions is not None:
            return np.array(self.nominal_fractions)
        return self.fractions

    @property
    def block_of(self) -> np.ndarray:
        """``j(n)`` for every index."""
        return self._owner

    def expand(self, per_block) -> np.ndarray:
        """Broadcast one value per block to a length-``N`` array."""
        per_block = np.asarray(per_block, dtype=float)
        return per_block[self._owner]


def sample_signal(model: BlockSignalModel, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    x = np.zeros(model.N, dtype=complex if model.field == "complex" else float)
    for b in model.blocks:
        x[b.indices] = b.prior.sample(rng, len(b.indices))
    return x


def _eval(f, xs):
    vals = np.asarray(f(xs))
    if vals.shape != np.shape(xs):
        vals = np.array([f(x) for x in np.ravel(xs)]).reshape(np.shape(xs))
    return vals


def _gauss_part(f, var, n, complex_field):
    t, w = np.polynomial.hermite.hermgauss(n)
    w = w / math.sqrt(math.pi)
    if not complex_field:
        return np.sum(w * _eval(f, math.sqrt(2 * var) * t))
    # real and imaginary parts each carry half the variance
    sd = math.sqrt(var)
    xr, xi = np.meshgrid(sd * t, sd * t, indexing="ij")
    return np.sum(np.outer(w, w) * _eval(f, xr + 1j * xi))


def prior_expectation(prior: ScalarPrior, f, nodes: int = 61, tol: float = 1e-10,
                      max_nodes: int = 61 * 16):
    """``E f(x)`` under ``prior``.

    Point masses are summed exactly; Gaussian parts use Gauss-Hermite
    quadrature, doubling the node count until two successive values agree to
    ``tol`` (relative to ``max(1, |value|)``).
    """
    total = 0.0
    for c in prior.components():
        if c.kind == "atom":
            loc = c.loc if prior.is_complex else float(np.real(c.loc))
            total += c.weight * _eval(f, np.array([loc]))[0]
            continue
        n = nodes
        prev = _gauss_part(f, c.var, n, prior.is_complex)
        while True:
            n *= 2
            if n > max_nodes:
                raise QuadratureBudgetExceeded(
                    f"Gauss-Hermite quadrature did not settle within {max_nodes} nodes")
            cur = _gauss_part(f, c.var, n, prior.is_complex)
            if abs(cur - prev) <= tol * max(1.0, abs(cur)):
                break
            prev = cur
        total += c.weight * cur
    if np.iscomplexobj(total) and np.imag(total) == 0:
        return float(np.real(total))
    return total.item() if isinstance(total, np.generic) else total
