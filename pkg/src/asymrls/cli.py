"""Command-line entry point: ``asymrls {predict,tune,simulate,bpsk-curve}``.

Exit codes: 0 on success, 1 on a configuration error, 2 when a numerical
routine fails to converge.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import replace

from .bpsk import CURVE_COLUMNS, VARIANTS, RELAXATIONS, bpsk_curve
from .errors import ConfigError, RLSError
from .harness import (CSV_COLUMNS, load_config, records_to_rows, replica_prediction,
                      run_experiment)
from .replica import objective_lambda
from .tuner import tune_lambda, tune_weights

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def _json_default(o):
    if isinstance(o, float) and not math.isfinite(o):
        return None
    return str(o)


def _clean(obj):
    # JSON has no inf/nan; emit null instead
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _emit(text: str, out):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _csv_text(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def _json_text(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=False, default=_json_default) + "\n"


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def cmd_predict(args) -> int:
    cfg = _load(args)
    state, preds = replica_prediction(cfg)
    out = {
        "config_hash": cfg.config_hash(),
        "lambda_objective": cfg.lam,
        "lambda_engine": state.lam,
        "prox_scale": state.prox_scale,
        "tau": state.tau, "theta2": state.theta2, "chi": state.chi, "p": state.p,
        "residual": state.residual, "iterations": state.iterations,
        "distortions": preds,
    }
    _emit(_json_text(out), args.out)
    return EXIT_OK


def cmd_tune(args) -> int:
    cfg = _load(args)
    prob = cfg.replica_problem()
    d = cfg.distortions[0]
    if prob.penalty.J > 1:
        res = tune_weights(prob, d, workers=args.threads)
    else:
        res = tune_lambda(prob, d, workers=args.threads)
    out = {
        "config_hash": cfg.config_hash(),
        "distortion": d.kind,
        "lambda_star": res.lambda_star,
        "lambda_star_objective": objective_lambda(res.lambda_star, cfg.prox_scale),
        "weights_star": list(res.weights_star),
        "distortion_star": res.distortion_star,
        "gradient": res.gradient,
        "stationary": res.stationary,
        "boundary": res.boundary,
        "failures": res.failures,
        "evaluations": len(res.trace),
    }
    _emit(_json_text(out), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args)
    records, agg = run_experiment(cfg, args.trials, cfg.seed, threads=args.threads)
    rows = records_to_rows(records, cfg)
    if args.format == "csv":
        text = _csv_text(rows, CSV_COLUMNS)
    else:
        text = _json_text({"rows": rows, "aggregate": {
            "trials": agg.trials, "failures": agg.failures, "mean": agg.mean,
            "stderr": agg.stderr, "predicted": agg.predicted, "replica": agg.replica}})
    _emit(text, args.out)
    return EXIT_OK


def cmd_bpsk_curve(args) -> int:
    rhos = args.rho or [0.7, 1.0]
    if any(r <= 0 for r in rhos):
        raise ConfigError("must be positive", "--rho")
    if args.db_step <= 0 or args.db_max < args.db_min:
        raise ConfigError("need db-step > 0 and db-max >= db-min", "--db-step")
    n = int(math.floor((args.db_max - args.db_min) / args.db_step + 1e-9)) + 1
    grid = [args.db_min + k * args.db_step for k in range(n)]
    rows = bpsk_curve(rhos, grid, args.relaxation or RELAXATIONS, args.variant, workers=args.threads)
    text = _csv_text(rows, CURVE_COLUMNS) if args.format == "csv" else _json_text(rows)
    _emit(text, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="asymrls", description="Replica predictions, tuning and "
                                "simulation for block-weighted regularized least squares.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="JSON config file")
            sp.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
        sp.add_argument("--out", default=None, help="output file (default: stdout)")
        sp.add_argument("--threads", type=int, default=1, help="cap on parallel workers")

    sp = sub.add_parser("predict", help="solve the replica fixed point for a config")
    common(sp)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("tune", help="tune lambda and block weights on the replica prediction")
    common(sp)
    sp.set_defaults(func=cmd_tune)

    sp = sub.add_parser("simulate", help="Monte Carlo trials with the configured solver")
    common(sp)
    sp.add_argument("--trials", type=int, default=1)
    sp.add_argument("--format", choices=("csv", "json"), default="csv")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("bpsk-curve", help="tuned error probability of BPSK ridge recovery versus SNR")
    common(sp, config=False)
    sp.add_argument("--rho", type=float, action="append", help="measurement ratio (repeatable)")
    sp.add_argument("--relaxation", choices=RELAXATIONS, action="append")
    sp.add_argument("--variant", choices=VARIANTS, default="rederived")
    sp.add_argument("--db-min", type=float, default=-5.0)
    sp.add_argument("--db-max", type=float, default=10.0)
    sp.add_argument("--db-step", type=float, default=1.0)
    sp.add_argument("--format", choices=("csv", "json"), default="csv")
    sp.set_defaults(func=cmd_bpsk_curve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "trials", 1) < 1:
        print("error: --trials: must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads < 1:
        print("error: --threads: must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except RLSError as e:
        print(f"numerical error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
