"""Instance generation, configuration parsing and Monte Carlo experiments.

A config is a JSON object::

    {"N": 512, "rho": 0.5, "sigma2": 0.01,
     "matrix": {"kind": "iid_gauss", "variance": "var-1/M"},
     "signal": {"field": "real",
                "blocks": [{"frac": 0.5, "prior": "bernoulli_gauss", "mu": 0.1}, ...]},
     "penalty": {"lambda": 0.1, "support": "reals",
                 "blocks": [{"family": "l1", "weight": 1.0}, ...]},
     "solver": {"kind": "gamp", "tol": 1e-8, "max_iter": 1000},
     "distortions": [{"kind": "squared_error"}],
     "prox_scale": 1.0}

``penalty.lambda`` is the lambda of the RLS objective ``(1/lambda) ||y - A v||^2 + u(v)``.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, RLSError
from .gamp import GampOptions, ReferenceOptions, gamp_solve, kkt_check, reference_solve
from .penalty import FAMILY_BUILDERS, SUPPORTS, PenaltySpec, support_from_name
from .replica import (DISTORTIONS, DistortionSpec, FixedPointOptions, ReplicaProblem,
                      asymptotic_distortion, solve_fixed_point)
from .signal_model import FAMILIES, FIELDS, BlockSignalModel, ScalarPrior, sample_signal
from .spectral import VARIANCE_CONVENTIONS, MarchenkoPastur, RowOrthogonal

MATRIX_KINDS = ("iid_gauss", "row_orthogonal")
SOLVER_KINDS = ("gamp", "reference")
CSV_COLUMNS = ("config_hash", "master_seed", "trial", "status", "iterations", "objective", "kkt",
               "distortion", "eps", "empirical", "predicted")


@dataclass(frozen=True)
class MatrixConfig:
    kind: str = "iid_gauss"
    variance: str = "var-1/M"


@dataclass(frozen=True)
class BlockConfig:
    frac: float
    prior: str = "bernoulli_gauss"
    mu: float = 1.0
    var: float = 1.0


@dataclass(frozen=True)
class PenaltyBlockConfig:
    family: str = "l1"
    weight: float = 1.0


@dataclass(frozen=True)
class SolverConfig:
    kind: str = "gamp"
    tol: float | None = None
    max_iter: int | None = None
    damping: float = 0.7


@dataclass(frozen=True)
class InstanceConfig:
    N: int
    rho: float
    sigma2: float
    matrix: MatrixConfig
    field: str
    blocks: tuple
    lam: float
    support: str
    penalty_blocks: tuple
    solver: SolverConfig = SolverConfig()
    distortions: tuple = (DistortionSpec("squared_error"),)
    prox_scale: float = 1.0
    seed: int = 0

    @property
    def M(self) -> int:
        return max(1, int(round(self.rho * self.N)))

    def to_dict(self) -> dict:
        return {
            "N": self.N, "rho": self.rho, "sigma2": self.sigma2,
            "matrix": asdict(self.matrix),
            "signal": {"field": self.field, "blocks": [asdict(b) for b in self.blocks]},
            "penalty": {"lambda": self.lam, "support": self.support,
                        "blocks": [asdict(b) for b in self.penalty_blocks]},
            "solver": asdict(self.solver),
            "distortions": [asdict(d) for d in self.distortions],
            "prox_scale": self.prox_scale, "seed": self.seed,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def signal_model(self) -> BlockSignalModel:
        priors = [ScalarPrior(b.prior, b.mu, b.var, self.field) for b in self.blocks]
        return BlockSignalModel.from_fractions(self.N, [b.frac for b in self.blocks], priors, self.field)

    def penalty_spec(self) -> PenaltySpec:
        entries = tuple((FAMILY_BUILDERS[b.family](), b.weight) for b in self.penalty_blocks)
        return PenaltySpec(entries, self.lam, support_from_name(self.support))

    def spectral_model(self):
        if self.matrix.kind == "row_orthogonal":
            return RowOrthogonal(self.rho)
        return MarchenkoPastur.preset(self.rho, self.matrix.variance)

    def replica_problem(self) -> ReplicaProblem:
        return ReplicaProblem(self.spectral_model(), self.signal_model(), self.penalty_spec(), self.sigma2,
                              FixedPointOptions(prox_scale=self.prox_scale))


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _get(d, key, path, kind, default=..., check=None, msg=None):
    if not isinstance(d, dict):
        raise ConfigError("expected an object", path)
    p = f"{path}.{key}" if path else key
    if key not in d:
        if default is ...:
            raise ConfigError("missing required field", p)
        return default
    v = d[key]
    try:
        if kind is int:
            if isinstance(v, bool) or not float(v).is_integer():
                raise TypeError
            v = int(v)
        elif kind is float:
            if isinstance(v, bool):
                raise TypeError
            v = float(v)
        elif kind in (str, list, dict) and not isinstance(v, kind):
            raise TypeError
    except (TypeError, ValueError):
        raise ConfigError(f"expected {kind.__name__}, got {v!r}", p) from None
    if check is not None and not check(v):
        raise ConfigError(msg or f"invalid value {v!r}", p)
    return v


def _choice(options):
    return lambda v: v in options, f"must be one of {list(options)}"


def parse_config(raw: dict) -> InstanceConfig:
    """Validate a config mapping; errors carry the dotted path of the bad field."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    N = _get(raw, "N", "", int, check=lambda v: v >= 1, msg="must be >= 1")
    rho = _get(raw, "rho", "", float, check=lambda v: v > 0 and math.isfinite(v), msg="must be positive")
    if int(round(rho * N)) < 1:
        raise ConfigError("round(rho * N) must be >= 1", "rho")
    sigma2 = _get(raw, "sigma2", "", float, check=lambda v: v >= 0, msg="must be non-negative")

    m = raw.get("matrix", {})
    mk = _get(m, "kind", "matrix", str, "iid_gauss", *_choice(MATRIX_KINDS))
    mv = _get(m, "variance", "matrix", str, "var-1/M", *_choice(VARIANCE_CONVENTIONS))
    matrix = MatrixConfig(mk, mv)

    s = _get(raw, "signal", "", dict)
    fld = _get(s, "field", "signal", str, "real", *_choice(FIELDS))
    blocks_raw = _get(s, "blocks", "signal", list, check=lambda v: len(v) >= 1, msg="needs at least one block")
    blocks = []
    for i, b in enumerate(blocks_raw):
        p = f"signal.blocks[{i}]"
        blocks.append(BlockConfig(
            _get(b, "frac", p, float, check=lambda v: 0 < v <= 1, msg="must lie in (0, 1]"),
            _get(b, "prior", p, str, "bernoulli_gauss", *_choice(FAMILIES)),
            _get(b, "mu", p, float, 1.0, lambda v: 0 <= v <= 1, "must lie in [0, 1]"),
            _get(b, "var", p, float, 1.0, lambda v: v > 0, "must be positive"),
        ))
    if abs(math.fsum(b.frac for b in blocks) - 1.0) > 1e-9:
        raise ConfigError("block fractions must sum to 1", "signal.blocks")

    pen = _get(raw, "penalty", "", dict)
    lam = _get(pen, "lambda", "penalty", float, check=lambda v: v > 0, msg="must be positive")
    support = _get(pen, "support", "penalty", str, "reals", *_choice(tuple(SUPPORTS)))
    pblocks_raw = _get(pen, "blocks", "penalty", list)
    if len(pblocks_raw) != len(blocks):
        raise ConfigError(f"expected {len(blocks)} entries, one per signal block", "penalty.blocks")
    pblocks = []
    for i, b in enumerate(pblocks_raw):
        p = f"penalty.blocks[{i}]"
        pblocks.append(PenaltyBlockConfig(
            _get(b, "family", p, str, "l1", *_choice(tuple(FAMILY_BUILDERS))),
            _get(b, "weight", p, float, 1.0, lambda v: v >= 0, "must be non-negative"),
        ))

    sol = raw.get("solver", {})
    solver = SolverConfig(
        _get(sol, "kind", "solver", str, "gamp", *_choice(SOLVER_KINDS)),
        _get(sol, "tol", "solver", float, None, lambda v: v > 0, "must be positive"),
        _get(sol, "max_iter", "solver", int, None, lambda v: v >= 1, "must be >= 1"),
        _get(sol, "damping", "solver", float, 0.7, lambda v: 0 < v <= 1, "must lie in (0, 1]"),
    )
    if solver.kind == "gamp" and matrix.kind != "iid_gauss":
        raise ConfigError("GAMP needs an iid_gauss matrix; use the reference solver", "solver.kind")
    if fld == "complex":
        raise ConfigError("finite-N simulation is real-valued only", "signal.field")

    dists = []
    for i, d in enumerate(raw.get("distortions", [{"kind": "squared_error"}])):
        p = f"distortions[{i}]"
        dists.append(DistortionSpec(_get(d, "kind", p, str, "squared_error", *_choice(DISTORTIONS)),
                                    _get(d, "eps", p, float, 0.0, lambda v: v >= 0, "must be non-negative")))
    prox_scale = _get(raw, "prox_scale", "", float, 1.0, lambda v: v > 0, "must be positive")
    seed = _get(raw, "seed", "", int, 0, lambda v: v >= 0, "must be non-negative")
    return InstanceConfig(N, rho, sigma2, matrix, fld, tuple(blocks), lam, support, tuple(pblocks),
                          solver, tuple(dists), prox_scale, seed)


def load_config(path) -> InstanceConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError("config file not found", str(path)) from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON ({e.msg} at line {e.lineno})", str(path)) from None
    return parse_config(raw)


# ---------------------------------------------------------------------------
# Instances
# ---------------------------------------------------------------------------

def trial_seed(master: int, trial: int) -> np.random.SeedSequence:
    """Counter-based split: trial ``t`` depends only on ``(master, t)``."""
    return np.random.SeedSequence(master, spawn_key=(trial,))


def generate_instance(cfg: InstanceConfig, seed=None):
    """Return ``(A, x, y)`` for one trial; ``seed`` is an int or a SeedSequence."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(
        cfg.seed if seed is None else seed)
    s_a, s_x, s_z = ss.spawn(3)
    M, N = cfg.M, cfg.N
    g = np.random.default_rng(s_a).standard_normal((M, N))
    if cfg.matrix.kind == "row_orthogonal":
        if M > N:
            raise ConfigError("row_orthogonal needs M <= N", "rho")
        # orthonormal rows from the QR factor of the transposed Gaussian matrix
        q, r = np.linalg.qr(g.T)
        A = (q * np.sign(np.diag(r))).T
    else:
        var = 1.0 / M if cfg.matrix.variance == "var-1/M" else 1.0 / N
        A = math.sqrt(var) * g
    x = sample_signal(cfg.signal_model(), s_x)
    y = A @ x
    if cfg.sigma2 > 0:
        y = y + math.sqrt(cfg.sigma2) * np.random.default_rng(s_z).standard_normal(M)
    return A, x, y


def empirical_distortion(x_hat, x, d: DistortionSpec) -> float:
    x_hat = np.asarray(x_hat)
    x = np.asarray(x)
    if d.kind == "squared_error":
        err = np.abs(x_hat - x) ** 2
    elif d.kind == "sign_error":
        err = (np.sign(x_hat) != np.sign(x)).astype(float)
    else:
        err = ((np.abs(x_hat) > d.eps) != (np.abs(x) > d.eps)).astype(float)
    return math.fsum(err) / x.size


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

@dataclass
class ExperimentRecord:
    config_hash: str
    master_seed: int
    trial: int
    status: str
    empirical: dict
    predicted: dict
    iterations: int = 0
    objective: float = math.nan
    kkt: float = math.nan
    error: str = ""


@dataclass
class Aggregate:
    trials: int
    failures: int
    mean: dict
    stderr: dict
    predicted: dict
    replica: dict = field(default_factory=dict)


def replica_prediction(cfg: InstanceConfig):
    """Replica state at the config's objective lambda plus one value per distortion."""
    prob = cfg.replica_problem()
    state = solve_fixed_point(prob.spectral, prob.signal, prob.penalty, None, cfg.sigma2, prob.options)
    preds = {_dkey(d): asymptotic_distortion(state, d=d) for d in cfg.distortions}
    return state, preds


def _dkey(d: DistortionSpec) -> str:
    return d.kind if d.kind != "support_error" else f"support_error@{d.eps:g}"


def solve_instance(cfg: InstanceConfig, A, y, x_true=None):
    model = cfg.signal_model()
    pen = cfg.penalty_spec()
    sol = cfg.solver
    if sol.kind == "gamp":
        opts = GampOptions(damping=sol.damping)
        if sol.tol is not None:
            opts.tol = sol.tol
        if sol.max_iter is not None:
            opts.max_iter = sol.max_iter
        state, report = gamp_solve(A, y, pen, model, opts, cfg.matrix.kind, x_true=x_true)
        return state.x, report
    opts = ReferenceOptions()
    if sol.tol is not None:
        opts.tol = sol.tol
    if sol.max_iter is not None:
        opts.max_iter = sol.max_iter
    return reference_solve(A, y, pen, model, opts)


def run_trial(cfg: InstanceConfig, master: int, trial: int, predicted=None) -> ExperimentRecord:
    A, x, y = generate_instance(cfg, trial_seed(master, trial))
    h = cfg.config_hash()
    predicted = predicted or {}
    try:
        x_hat, rep = solve_instance(cfg, A, y)
    except RLSError as e:
        return ExperimentRecord(h, master, trial, f"failed:{type(e).__name__}", {}, predicted, error=str(e))
    emp = {_dkey(d): empirical_distortion(x_hat, x, d) for d in cfg.distortions}
    kkt = rep.kkt if math.isfinite(rep.kkt) else kkt_check(A, y, cfg.penalty_spec(), x_hat, cfg.signal_model())
    return ExperimentRecord(h, master, trial, "ok", emp, predicted, rep.iterations, rep.objective, kkt)


def run_experiment(cfg: InstanceConfig, trials: int, master: int | None = None, threads: int = 1,
                   predict: bool = True):
    """Run ``trials`` independent solves; return ``(records, aggregate)``.

    Records come back in trial order whatever the thread count, and the
    aggregate uses compensated sums, so outputs do not depend on scheduling.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    master = cfg.seed if master is None else master
    predicted, replica = {}, {}
    if predict:
        try:
            state, predicted = replica_prediction(cfg)
            replica = {"tau": state.tau, "theta2": state.theta2, "chi": state.chi, "p": state.p}
        except RLSError as e:
            replica = {"error": str(e)}
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            records = list(ex.map(lambda t: run_trial(cfg, master, t, predicted), range(trials)))
    else:
        records = [run_trial(cfg, master, t, predicted) for t in range(trials)]
    ok = [r for r in records if r.status == "ok"]
    mean, se = {}, {}
    for d in cfg.distortions:
        k = _dkey(d)
        vals = [r.empirical[k] for r in ok]
        if not vals:
            mean[k] = se[k] = math.nan
            continue
        mu = math.fsum(vals) / len(vals)
        mean[k] = mu
        se[k] = (math.sqrt(math.fsum((v - mu) ** 2 for v in vals) / (len(vals) - 1) / len(vals))
                 if len(vals) > 1 else math.nan)
    return records, Aggregate(trials, trials - len(ok), mean, se, predicted, replica)


def records_to_rows(records, cfg: InstanceConfig):
    """Flatten records to one row per (trial, distortion) with the frozen CSV columns."""
    rows = []
    for r in records:
        for d in cfg.distortions:
            k = _dkey(d)
            rows.append({
                "config_hash": r.config_hash, "master_seed": r.master_seed, "trial": r.trial,
                "status": r.status, "iterations": r.iterations, "objective": r.objective, "kkt": r.kkt,
                "distortion": d.kind, "eps": d.eps, "empirical": r.empirical.get(k, math.nan),
                "predicted": r.predicted.get(k, math.nan),
            })
    return rows
