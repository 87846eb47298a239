"""Command-line front end: ``netsurv {fit,test,simulate,bootstrap,sample-copula}``.

Exit codes: 0 success, 2 input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from pathlib import Path
from typing import IO, Sequence

import numpy as np

from netsurv.cohort import CohortError, load_cohort
from netsurv.copula import CopulaDomainError, CopulaSpec, Family, sample_pairs
from netsurv.estimator import (Z975, BootstrapError, NetSurvivalFit, SolverError,
                               bootstrap_se, build_mesh, fit_generalized, fit_pohar_perme)
from netsurv.inference import TestError, logrank_observable
from netsurv.lifetable import RateTableError, load_rate_table, synthetic_rate_table
from netsurv.simulation import (MetricGridResult, ScenarioError, curves_csv, load_scenario,
                                metrics_csv, pvalues_csv, rejections_csv, summary_table,
                                write_rows)

log = logging.getLogger("netsurv")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

BUILTIN_TABLE = "builtin"

_INPUT_ERRORS = (CohortError, RateTableError, CopulaDomainError, ScenarioError, TestError,
                 OSError, ValueError)


class InputError(ValueError):
    pass


# -- shared helpers --------------------------------------------------------


def _table(args):
    if args.ratetable == BUILTIN_TABLE:
        return synthetic_rate_table()
    return load_rate_table(args.ratetable, unit=args.table_unit)


def _copula(text: str) -> CopulaSpec:
    return CopulaSpec.parse(text)


@contextlib.contextmanager
def _output(path: str | None):
    if path in (None, "-"):
        yield sys.stdout
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        yield fh


def fit_rows(fit: NetSurvivalFit, z: float = Z975):
    """Rows ``(t, cum_hazard, survival, std_error, lower, upper)`` of a fit."""
    lam = fit.cum_hazard
    se = fit.std_error
    lower = np.exp(-lam - z * se)
    upper = np.exp(-lam + z * se)
    for row in zip(fit.mesh.points, lam, fit.survival, se, lower, upper):
        yield tuple(float(x) for x in row)


FIT_HEADER = ("t", "cum_hazard", "survival", "std_error", "lower", "upper")


def write_fit(fit: NetSurvivalFit, stream: IO[str], fmt: str = "csv") -> None:
    if fmt == "csv":
        write_rows(stream, FIT_HEADER, fit_rows(fit))
        return
    cols = list(zip(*fit_rows(fit)))
    doc = {name: list(col) for name, col in zip(FIT_HEADER, cols)}
    doc["copula"] = fit.copula.label
    doc["diagnostics"] = fit.diagnostics
    json.dump(doc, stream)
    stream.write("\n")


def _add_common(p: argparse.ArgumentParser, cohort: bool = True) -> None:
    if cohort:
        p.add_argument("--cohort", required=True, help="cohort CSV (time,status,sex,age,diag_date[,group])")
        p.add_argument("--time-unit", choices=("days", "years"), default="days")
        p.add_argument("--age-unit", choices=("days", "years"), default="years")
    p.add_argument("--ratetable", default=BUILTIN_TABLE,
                   help=f"rate table CSV (sex,age,year,hazard) or '{BUILTIN_TABLE}'")
    p.add_argument("--table-unit", choices=("hazard", "prob"), default="hazard")
    p.add_argument("--out", "-o", default=None, help="output path (default: standard output)")
    p.add_argument("--threads", type=int, default=1)


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="netsurv", description="Net survival under a dependence copula.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="estimate net survival")
    _add_common(p)
    p.add_argument("--copula", required=True, help="e.g. indep, clayton(tau=0.3), frank(theta=2)")
    p.add_argument("--horizon", type=float, default=None, help="mesh horizon in years")
    p.add_argument("--step-days", type=float, default=1.0)
    p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("test", help="compare net survival between groups")
    _add_common(p)
    p.add_argument("--copula", required=True)
    p.add_argument("--group-copula", action="append", default=[], metavar="LABEL=SPEC",
                   help="per-group copula override (repeatable)")
    p.add_argument("--horizon", type=float, nargs="+", required=True, help="test horizon(s) in years")
    p.add_argument("--step-days", type=float, default=1.0)

    p = sub.add_parser("simulate", help="run a scenario file")
    p.add_argument("scenario", help="scenario file path or shipped scenario name")
    p.add_argument("--ratetable", default=BUILTIN_TABLE)
    p.add_argument("--table-unit", choices=("hazard", "prob"), default="hazard")
    p.add_argument("--out", "-o", required=True, help="output directory")
    p.add_argument("--reps", type=_positive_int, default=None, help="override replicate count")
    p.add_argument("--seed", type=int, default=None, help="override seed")
    p.add_argument("--curves", action="store_true", help="also write per-replicate ratio curves")
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("bootstrap", help="bootstrap standard error of a fit")
    _add_common(p)
    p.add_argument("--copula", required=True)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--step-days", type=float, default=1.0)

    p = sub.add_parser("sample-copula", help="draw pairs from a copula")
    p.add_argument("--copula", required=True)
    p.add_argument("--n", type=_positive_int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", "-o", default=None)
    return parser


# -- subcommands -----------------------------------------------------------


def cmd_fit(args) -> int:
    copula = _copula(args.copula)
    table = _table(args)
    cohort = load_cohort(args.cohort, args.time_unit, args.age_unit)
    mesh = build_mesh(cohort, args.horizon, args.step_days)
    if copula.family is Family.INDEPENDENCE:
        # closed form, no per-step solve
        fit = fit_pohar_perme(cohort, table, mesh)
    else:
        fit = fit_generalized(cohort, table, copula, mesh)
    with _output(args.out) as fh:
        write_fit(fit, fh, args.format)
    return EXIT_OK


def _group_copulas(items: Sequence[str]) -> dict:
    out = {}
    for item in items:
        label, sep, spec = item.partition("=")
        if not sep or not label.strip():
            raise InputError(f"--group-copula expects LABEL=SPEC, got {item!r}")
        out[label.strip()] = _copula(spec.strip())
    return out


def cmd_test(args) -> int:
    copula = _copula(args.copula)
    overrides = _group_copulas(args.group_copula)
    if overrides:
        log.warning("groups use different hypothesized copulas: %s",
                    ", ".join(f"{g}={c.label}" for g, c in sorted(overrides.items())))
    table = _table(args)
    cohort = load_cohort(args.cohort, args.time_unit, args.age_unit, require_group=True)
    unknown = set(overrides) - set(cohort.group_labels())
    if unknown:
        raise InputError(f"--group-copula names unknown groups {sorted(unknown)}")
    mesh = build_mesh(cohort, max(args.horizon), args.step_days)
    results = logrank_observable(cohort, table, copula, mesh, args.horizon, copulas=overrides,
                                 threads=args.threads)
    docs = [r.to_dict() for r in results]
    with _output(args.out) as fh:
        json.dump(docs[0] if len(docs) == 1 else docs, fh, indent=2)
        fh.write("\n")
    return EXIT_OK


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario).with_overrides(args.reps, args.seed)
    table = _table(args)
    result = scenario.run(table, threads=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if isinstance(result, MetricGridResult):
        with open(out / "metrics.csv", "w", encoding="utf-8", newline="") as fh:
            metrics_csv(result, fh)
        if args.curves:
            with open(out / "curves.csv", "w", encoding="utf-8", newline="") as fh:
                curves_csv(result, fh)
    else:
        with open(out / "rejections.csv", "w", encoding="utf-8", newline="") as fh:
            rejections_csv(result, fh)
        with open(out / "pvalues.csv", "w", encoding="utf-8", newline="") as fh:
            pvalues_csv(result, fh)
    sys.stdout.write(f"scenario {scenario.name}\n")
    sys.stdout.write(summary_table(result))
    return EXIT_OK


def cmd_bootstrap(args) -> int:
    copula = _copula(args.copula)
    if args.reps < 2:
        raise InputError("--reps must be >= 2")
    table = _table(args)
    cohort = load_cohort(args.cohort, args.time_unit, args.age_unit)
    mesh = build_mesh(cohort, args.horizon, args.step_days)
    fit = fit_generalized(cohort, table, copula, mesh)
    se = bootstrap_se(cohort, table, copula, mesh, reps=args.reps, seed=args.seed)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(se > 0, fit.std_error / se, np.nan)
    rows = zip(mesh.points, fit.cum_hazard, fit.std_error, se, ratio)
    with _output(args.out) as fh:
        write_rows(fh, ("t", "cum_hazard", "plugin_se", "bootstrap_se", "ratio"),
                   (tuple(float(x) for x in r) for r in rows))
    return EXIT_OK


def cmd_sample_copula(args) -> int:
    pairs = sample_pairs(_copula(args.copula), args.n, args.seed)
    with _output(args.out) as fh:
        write_rows(fh, ("u", "v"), ((float(u), float(v)) for u, v in pairs))
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "test": cmd_test,
    "simulate": cmd_simulate,
    "bootstrap": cmd_bootstrap,
    "sample-copula": cmd_sample_copula,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    try:
        return COMMANDS[args.command](args)
    except (SolverError, BootstrapError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except _INPUT_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
