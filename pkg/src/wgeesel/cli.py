"""Command-line interface: ``wgeesel fit | select | simulate``.

Exit codes
----------
0   success
1   model fitting failed (WGEE, dropout model or selection)
2   input data failed validation (including a missing data file)
64  command-line usage error
65  malformed scenario file
73  output path cannot be written

Results go to stdout (or ``--out``); diagnostics and timings go to stderr.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from .data import MeanModelSpec, Schema, load_long_csv, read_schema
from .dropout import DropoutSpec
from .exceptions import ConvergenceError, DataValidationError, ScenarioError, WgeeselError
from .selection import CRITERIA, MAX_SUBSETS, enumerate_candidates, select
from .simlab import load_scenarios, run_monte_carlo, with_overrides
from .wgee import wgee_fit

EXIT_OK, EXIT_FIT, EXIT_DATA, EXIT_USAGE, EXIT_SCENARIO, EXIT_CANTCREAT = 0, 1, 2, 64, 65, 73


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _default_jobs() -> int:
    env = os.environ.get("WGEESEL_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise _UsageError(f"WGEESEL_JOBS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wgeesel", description="Joint mean/correlation selection for WGEE under dropout.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def data_args(p):
        p.add_argument("--data", required=True, help="long-format CSV (id, time, y, x.*, h.*)")
        p.add_argument("--schema", help="key = value file mapping CSV columns")
        p.add_argument("--family", choices=("binary", "gaussian"), help="override the schema family")
        p.add_argument("--dropout-lags", type=int, help="lagged outcomes in the hazard (default T-1)")
        p.add_argument("--dropout-covariates", default="all",
                       help="comma list of h columns, 'all' or 'none' (default all)")
        p.add_argument("--out", help="write results here instead of stdout")

    p = sub.add_parser("fit", help="fit one WGEE model")
    data_args(p)
    p.add_argument("--covariates", help="comma list of mean covariates (default all)")
    p.add_argument("--structure", default="EXC", help="IND, EXC, AR1, STATIONARY or UNSTRUCTURED")

    p = sub.add_parser("select", help="score candidate models with JEAIC, JEBIC, MLIC and QICWr")
    data_args(p)
    p.add_argument("--candidates", default="all-subsets",
                   help="'all-subsets' or ';'-separated mean models such as 'x1,x2;x1' ('1' = intercept only)")
    p.add_argument("--structures", default="IND,EXC,AR1", help="comma list of working correlations")
    p.add_argument("--jobs", type=int, help="parallel workers (default: WGEESEL_JOBS or all cores)")
    p.add_argument("--format", choices=("text", "tsv"), default="text", help="stdout format")

    p = sub.add_parser("simulate", help="Monte Carlo selection rates for scenario file sections")
    p.add_argument("--scenario", required=True, help="INI scenario file")
    p.add_argument("--only", action="append", help="run only this section (repeatable)")
    p.add_argument("--seed", type=int, help="override every scenario's seed")
    p.add_argument("--reps", type=int, help="override every scenario's replicate count")
    p.add_argument("--dropout-lags", type=int, help="override the fitted hazard's outcome lags")
    p.add_argument("--jobs", type=int, help="parallel workers (default: WGEESEL_JOBS or all cores)")
    p.add_argument("--out", help="write the rate table here instead of stdout")
    return parser


def _log(msg):
    print(msg, file=sys.stderr)


def _check_writable(path):
    if path is None:
        return
    parent = os.path.dirname(os.path.abspath(path)) or "."
    if os.path.isdir(path) or not os.path.isdir(parent) or not os.access(parent, os.W_OK):
        raise OSError(f"cannot write output file {path!r}")
    if os.path.exists(path) and not os.access(path, os.W_OK):
        raise OSError(f"cannot write output file {path!r}")


def _emit(text, path):
    if path is None:
        sys.stdout.write(text)
        return
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _load(args):
    if not os.path.isfile(args.data):
        raise DataValidationError(f"data file not found: {args.data}")
    schema = Schema()
    if args.schema:
        try:
            with open(args.schema) as fh:
                schema = read_schema(fh.read())
        except OSError as err:
            raise DataValidationError(f"cannot read schema: {err}") from None
    if args.family:
        schema.family = args.family
    return load_long_csv(args.data, schema)


def _dropout_spec(args, dataset):
    lags = dataset.T - 1 if args.dropout_lags is None else args.dropout_lags
    if lags < 0:
        raise _UsageError("--dropout-lags must be non-negative")
    cov = args.dropout_covariates.strip()
    if cov == "all":
        covariates = True
    elif cov == "none":
        covariates = False
    else:
        covariates = tuple(c.strip() for c in cov.split(",") if c.strip())
        unknown = [c for c in covariates if c not in dataset.dropout_names]
        if unknown:
            raise _UsageError(f"unknown dropout covariate(s): {', '.join(unknown)}")
    return DropoutSpec(lags=lags, intercept=True, covariates=covariates)


def _names(text, known, what):
    names = [c.strip() for c in text.split(",") if c.strip() and c.strip() != "1"]
    unknown = [c for c in names if c not in known]
    if unknown:
        raise _UsageError(f"unknown {what}: {', '.join(unknown)}")
    return names


def fit_report(dataset, fit, dfit) -> str:
    names = ["(Intercept)"] if fit.spec.intercept else []
    names += [dataset.covariate_names[c] for c in fit.spec.covariates]
    width = max(12, *(len(s) for s in names))
    lines = [f"family {fit.family}  structure {fit.corr.kind}  n {dataset.n}  T {dataset.T}",
             f"{'term':<{width}}  {'estimate':>12}  {'std.err':>10}"]
    for nm, b, se in zip(names, fit.beta, fit.std_errors):
        lines.append(f"{nm:<{width}}  {b:12.6f}  ({se:.6f})")
    if fit.corr.rho.size:
        lines.append("rho  " + "  ".join(f"{v:.6f}" for v in fit.corr.rho))
    lines.append(f"phi  {fit.phi:.6f}")
    lines.append(f"converged {'yes' if fit.converged else 'no'}  iterations {fit.iterations}"
                 f"  score norm {fit.score_norm:.3e}")
    lines.append("dropout model")
    lines.append(dfit.summary())
    return "\n".join(lines) + "\n"


def cmd_fit(args) -> int:
    _check_writable(args.out)
    ds = _load(args)
    cov = ds.covariate_names if args.covariates is None else _names(args.covariates, ds.covariate_names, "covariate")
    spec = MeanModelSpec.from_names(cov, ds.covariate_names)
    dfit = _dropout_spec(args, ds).fit(ds)
    fit = wgee_fit(ds, spec, args.structure, dfit)
    _emit(fit_report(ds, fit, dfit), args.out)
    return EXIT_OK


def _parse_candidates(text, names):
    text = text.strip()
    if text == "all-subsets":
        if len(names) > 6:  # 2^6 = 64 subsets
            raise _UsageError(f"all-subsets over {len(names)} covariates exceeds {MAX_SUBSETS} mean models; "
                              "pass --candidates explicitly")
        return "all-subsets"
    return [_names(part, names, "covariate") for part in text.split(";") if part.strip()]


def cmd_select(args) -> int:
    _check_writable(args.out)
    jobs = args.jobs or _default_jobs()
    ds = _load(args)
    policy = _parse_candidates(args.candidates, ds.covariate_names)
    structures = [s for s in args.structures.split(",") if s.strip()]
    try:
        cands = enumerate_candidates(ds.covariate_names, policy, structures, max_subsets=MAX_SUBSETS)
    except ValueError as err:
        raise _UsageError(str(err)) from None
    t0 = time.perf_counter()
    table = select(ds, cands, _dropout_spec(args, ds), n_jobs=jobs)
    _log(f"scored {len(cands)} candidates in {time.perf_counter() - t0:.2f}s")
    for row in table.rows:
        if row.message:
            _log(f"{row.candidate.label}: {row.message}")
    if args.out:
        _emit(table.to_tsv(), args.out)
        sys.stdout.write(table.to_text())
    else:
        sys.stdout.write(table.to_text() if args.format == "text" else table.to_tsv())
    if all(table.best[c] is None for c in CRITERIA):
        _log("no candidate could be scored")
        return EXIT_FIT
    return EXIT_OK


def cmd_simulate(args) -> int:
    _check_writable(args.out)
    jobs = args.jobs or _default_jobs()
    try:
        scenarios = load_scenarios(args.scenario)
    except OSError as err:
        raise ScenarioError(f"cannot read scenario file: {err}") from None
    if args.only:
        missing = sorted(set(args.only) - {s.name for s in scenarios})
        if missing:
            raise ScenarioError(f"no section named {', '.join(missing)}")
        scenarios = [s for s in scenarios if s.name in args.only]
    if args.reps is not None and args.reps < 1:
        raise _UsageError("--reps must be positive")
    chunks = []
    for k, sc in enumerate(scenarios):
        sc = with_overrides(sc, seed=args.seed, reps=args.reps, dropout_lags=args.dropout_lags)
        table = run_monte_carlo(sc, n_jobs=jobs)
        fails = ", ".join(f"{c} {int(f)}" for c, f in zip(table.criteria, table.failures))
        _log(f"[{sc.name}] {sc.reps} replicates in {table.elapsed:.1f}s; failed replicates: {fails}")
        chunks.append(table.to_tsv(header=k == 0))
    _emit("".join(chunks), args.out)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {"fit": cmd_fit, "select": cmd_select, "simulate": cmd_simulate}[args.command]
    try:
        with np.errstate(all="ignore"):
            return handler(args)
    except _UsageError as err:
        parser.print_usage(sys.stderr)
        _log(f"wgeesel: error: {err}")
        return EXIT_USAGE
    except ScenarioError as err:
        _log(f"wgeesel: scenario error: {err}")
        return EXIT_SCENARIO
    except DataValidationError as err:
        _log(f"wgeesel: invalid data: {err}")
        return EXIT_DATA
    except OSError as err:
        _log(f"wgeesel: {err}")
        return EXIT_CANTCREAT
    except (ConvergenceError, WgeeselError, ArithmeticError, np.linalg.LinAlgError, ValueError) as err:
        _log(f"wgeesel: fit failed: {type(err).__name__}: {err}")
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())
