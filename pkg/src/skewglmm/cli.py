"""Command-line front end.

Exit codes: 0 success, 2 unwritable output, 64 bad usage, 65 bad data,
66 missing input file.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import fields

import numpy as np

from . import harness, io
from .data import ModelParams
from .marginals import FAMILIES, MarginalSpec
from .mcem import McemConfig, fit
from .simgen import DesignSpec, generate
from .skewnormal import DomainError

EX_OK, EX_CANTCREAT, EX_USAGE, EX_DATAERR, EX_NOINPUT = 0, 2, 64, 65, 66


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(f"{self.prog}: error: {message}", EX_USAGE)


def _marginal(args) -> MarginalSpec:
    try:
        return MarginalSpec(args.marginal, args.shape)
    except DomainError as exc:
        raise CliError(str(exc), EX_USAGE) from None


def _check_writable(path):
    d = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(d) or not os.access(d, os.W_OK) or os.path.isdir(path):
        raise CliError(f"cannot write {path}", EX_CANTCREAT)


def _write(fn, *a):
    try:
        fn(*a)
    except OSError as exc:
        raise CliError(f"cannot write {a[-1]}: {exc.strerror}", EX_CANTCREAT) from None


def _read(fn, path, *a):
    if not os.path.isfile(path):
        raise CliError(f"no such file: {path}", EX_NOINPUT)
    try:
        return fn(path, *a)
    except io.DataFileError as exc:
        raise CliError(f"{path}: {exc}", EX_DATAERR) from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CliError(f"{path}: {exc}", EX_DATAERR) from None


def _load_config(path) -> McemConfig | None:
    if path is None:
        return None
    raw = _read(io.read_json, path)
    known = {f.name for f in fields(McemConfig)}
    if not isinstance(raw, dict) or set(raw) - known:
        bad = sorted(set(raw) - known) if isinstance(raw, dict) else raw
        raise CliError(f"{path}: unknown config keys {bad}", EX_USAGE)
    if "lambda_bounds" in raw:
        raw["lambda_bounds"] = tuple(raw["lambda_bounds"])
    try:
        return McemConfig(**raw)
    except (DomainError, TypeError) as exc:
        raise CliError(f"{path}: {exc}", EX_USAGE) from None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    marginal = _marginal(args)
    try:
        spec = DesignSpec(
            args.design, m=args.m, n_per_unit=args.n_per_unit, marginal=marginal,
            seed=args.seed, xi=args.xi, lambda_star=args.lambda_star,
        )  # fmt: skip
        ds, truth = generate(spec)
    except DomainError as exc:
        raise CliError(str(exc), EX_USAGE) from None
    _check_writable(args.out)
    _write(io.write_dataset, ds, args.out)
    side = io.sidecar_path(args.out)
    meta = truth.to_dict()
    meta.update(seed=args.seed, m=spec.m, n_per_unit=spec.n_per_unit, covariates=ds.covariate_names)
    _write(io.write_json, meta, side)
    print(f"wrote {ds.n_obs} rows to {args.out} and truth to {side}")
    return EX_OK


def cmd_fit(args) -> int:
    marginal = _marginal(args)
    config = _load_config(args.config)
    if args.copula == "normal":
        config = harness.config_for("normal", config)
    _check_writable(args.out)
    try:
        ds = _read(io.read_dataset, args.data, args.formula, args.time_transform)
    except DomainError as exc:
        raise CliError(str(exc), EX_USAGE) from None
    res = fit(ds, None, config, rng=args.seed, marginal=marginal)
    extra = {
        "data": os.path.abspath(args.data),
        "formula": args.formula,
        "time_transform": args.time_transform,
        "seed": args.seed,
    }
    report = harness.fit_report(res, ds, extra)
    _write(io.write_json, report, args.out)
    print(harness.format_table(report))
    return EX_OK


def _fmt(v):
    return "" if v is None else f"{v:.6g}"


def cmd_replicate(args) -> int:
    config = _load_config(args.config)
    copulas = harness.COPULAS if args.copula == "both" else (args.copula,)
    if args.replicates < 1 or args.workers < 1:
        raise CliError("--replicates and --workers must be >= 1", EX_USAGE)
    _check_writable(args.out)
    records = harness.replicate_table(args.table, args.replicates, args.seed, copulas, config, args.workers)
    rows = harness.summarize(records, args.table)
    cols = ["copula", "parameter", "truth", "mc_mean", "mc_sd", "mse", "ec", "converged", "replicates"]

    def write_summary(path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in rows:
                w.writerow([r[c] if isinstance(r[c], (str, int)) else _fmt(r[c]) for c in cols])

    def write_records(path):
        names = [n for n, _ in harness.TABLES[args.table].rows]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replicate", "copula", *names, "converged", "iterations"])
            for r in records:
                w.writerow([r.index, r.copula, *(_fmt(r.estimates[n]) for n in names), int(r.converged), r.iterations])

    _write(write_summary, args.out)
    stem = args.out[:-4] if args.out.lower().endswith(".csv") else args.out
    _write(write_records, stem + ".replicates.csv")
    print(f"{'copula':<12}{'parameter':<14}{'truth':>8}{'mean':>10}{'sd':>10}{'mse':>10}{'ec':>7}")
    for r in rows:
        print(
            f"{r['copula']:<12}{r['parameter']:<14}{r['truth']:>8.3f}{r['mc_mean']:>10.4f}"
            f"{_fmt(r['mc_sd']):>10}{r['mse']:>10.4f}{_fmt(r['ec']):>7}"
        )
    return EX_OK


def cmd_density(args) -> int:
    report = _read(io.read_json, args.fit)
    try:
        params = ModelParams.from_dict(report["params"])
    except (KeyError, TypeError, DomainError) as exc:
        raise CliError(f"{args.fit}: not a fit report ({exc})", EX_DATAERR) from None
    try:
        grid = harness.parse_grid(args.grid)
        ds = _read(io.read_dataset, args.data, report.get("formula"), report.get("time_transform"))
    except DomainError as exc:
        raise CliError(str(exc), EX_USAGE) from None
    if ds.p != params.beta.size:
        raise CliError(f"{args.data}: {ds.p} covariate columns, fit has {params.beta.size}", EX_DATAERR)
    _check_writable(args.out)
    draws = harness.posterior_b_draws(ds, params, args.draws, args.seed)
    fitted = harness.fitted_logy_density(grid, ds, params, draws)
    truth_path = args.truth or io.sidecar_path(args.data)
    true = None
    if os.path.isfile(truth_path):
        tp = ModelParams.from_dict(_read(io.read_json, truth_path)["params"])
        true = harness.true_logy_density(grid, ds, tp)

    def write(path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["log_y", *(["true_density"] if true is not None else []), "fitted_density"])
            for k, u in enumerate(grid):
                w.writerow([repr(float(u)), *([repr(float(true[k]))] if true is not None else []), repr(float(fitted[k]))])

    _write(write, args.out)
    msg = f"fitted density integrates to {harness.trapezoid(fitted, grid):.6f} on the grid"
    if true is not None:
        msg += f"; sup |fitted - true| = {np.max(np.abs(fitted - true)):.4f}"
    print(msg)
    return EX_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_marginal(p):
    p.add_argument("--marginal", choices=FAMILIES, default="exponential")
    p.add_argument("--shape", type=float, default=1.0, help="gamma shape k (1 for exponential)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="skewglmm", description="Skew-normal copula GLMM for positive longitudinal responses.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate a synthetic dataset")
    p.add_argument("--design", choices=("univariate", "bivariate"), default="univariate")
    _add_marginal(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--m", type=int, default=200, help="number of units")
    p.add_argument("--n-per-unit", type=int, default=5)
    p.add_argument("--xi", type=float, default=0.2)
    p.add_argument("--lambda-star", type=float, default=1.0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit the model by Monte Carlo EM")
    p.add_argument("--data", required=True)
    _add_marginal(p)
    p.add_argument("--formula", default=None, help='e.g. "y ~ x1 + time"; the intercept is implicit')
    p.add_argument("--time-transform", default=None, help='affine map of t, e.g. "(t-5)/10"')
    p.add_argument("--config", default=None, help="JSON file of McemConfig fields")
    p.add_argument("--copula", choices=harness.COPULAS, default="skewnormal")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("replicate", help="Monte Carlo replication of a simulation table")
    p.add_argument("--table", type=int, choices=sorted(harness.TABLES), required=True)
    p.add_argument("--replicates", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--copula", choices=(*harness.COPULAS, "both"), default="skewnormal")
    p.add_argument("--config", default=None)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_replicate)

    p = sub.add_parser("density", help="density grid of log y for plotting")
    p.add_argument("--fit", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--grid", default="-12:12:961", help="lo:hi:steps on the log-y scale")
    p.add_argument("--out", required=True)
    p.add_argument("--truth", default=None, help="truth JSON (default: the data file's sidecar)")
    p.add_argument("--draws", type=int, default=200, help="posterior draws of b per unit")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_density)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(exc, file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
