"""Simulation harness: cohorts with known truth, estimator metrics and test
rejection rates.

Every patient owns a counter-based random stream addressed by
``(seed, replicate, patient)``, so a cohort depends only on those three
numbers and not on how replicates are scheduled.  Cohorts that differ only
in the true copula or the excess means reuse the same uniforms.
"""

from __future__ import annotations

import configparser
import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from netsurv.cohort import Cohort, LatentTruth
from netsurv.copula import CopulaSpec, conditional_inverse
from netsurv.estimator import (Z975, Mesh, SolverConfig, SolverError, _fit_prepared,
                               build_mesh, prepare)
from netsurv.inference import TestError, logrank_observable, logrank_oracle
from netsurv.lifetable import (Demographics, RateTable, hazard_path,
                               sample_population_time)

log = logging.getLogger(__name__)

GRID_COPULAS = ("frank(tau=-0.3)", "clayton(tau=-0.3)", "indep", "frank(tau=0.3)",
                 "clayton(tau=0.3)")
FLAG_FAILURE_RATE = 0.05

# order of the uniforms drawn from each patient's stream
_DRAWS = ("sex", "diagnosis", "age", "excess", "dependence", "censoring")


class ScenarioError(ValueError):
    """Invalid scenario definition."""


@dataclass(frozen=True)
class GroupLaw:
    """Covariate and excess-time law of one group of patients."""

    label: str
    size: int
    excess_mean: float
    age_range: tuple = (35.0, 75.0)

    def __post_init__(self):
        if self.size < 1:
            raise ScenarioError(f"group {self.label!r}: size must be >= 1")
        if not self.excess_mean > 0:
            raise ScenarioError(f"group {self.label!r}: excess mean must be > 0")
        lo, hi = self.age_range
        if not 0 <= lo <= hi:
            raise ScenarioError(f"group {self.label!r}: bad age range")


@dataclass(frozen=True)
class ScenarioConfig:
    """One data-generating process plus the copulas hypothesized on it.

    ``mesh_step`` is in days; every other time is in years.
    """

    groups: tuple
    reps: int
    true_copula: CopulaSpec
    hyp_copulas: tuple
    seed: int = 0
    censor_mean: float = 20.0
    censor_cut: float = 15.0
    diagnosis_range: tuple = (1990.0, 2010.0)
    mesh_step: float = 1.0

    def __post_init__(self):
        if self.reps < 1:
            raise ScenarioError("reps must be >= 1")
        if not self.groups:
            raise ScenarioError("at least one group is required")
        if len({g.label for g in self.groups}) != len(self.groups):
            raise ScenarioError("group labels must be distinct")
        if not (self.censor_mean > 0 and self.censor_cut > 0):
            raise ScenarioError("censoring parameters must be > 0")

    @property
    def n(self) -> int:
        return sum(g.size for g in self.groups)

    def excess_survival(self, t) -> np.ndarray:
        """Marginal net survival of the whole cohort (a mixture over groups)."""
        t = np.asarray(t, dtype=float)
        return sum(g.size * np.exp(-t / g.excess_mean) for g in self.groups) / self.n


def metric_config(true_copula, hyp_copulas, reps: int = 200, n: int = 500,
                  excess_mean: float = 10.0, seed: int = 0, **kw) -> ScenarioConfig:
    """Single-group estimation experiment."""
    return ScenarioConfig((GroupLaw("all", n, excess_mean),), reps, _spec(true_copula),
                          tuple(_spec(c) for c in hyp_copulas), seed, **kw)


HYPOTHESES = {"H0": (5.0, 5.0), "H1": (5.0, 6.0), "H2": (5.0, 10.0)}
LAYOUT_AGES = {1: ((35.0, 75.0), (35.0, 75.0)), 2: ((35.0, 65.0), (65.0, 75.0))}


def test_config(layout: int, hypothesis: str, true_copula, hyp_copulas, reps: int = 200,
                per_group: int = 250, seed: int = 0, **kw) -> ScenarioConfig:
    """Two-group testing experiment.

    ``layout`` 1 shares the covariate law between groups; layout 2 splits
    ages at 65.  ``hypothesis`` picks the excess means (H0, H1 or H2).
    """
    if layout not in LAYOUT_AGES:
        raise ScenarioError(f"unknown layout {layout!r}")
    if hypothesis not in HYPOTHESES:
        raise ScenarioError(f"unknown hypothesis {hypothesis!r}")
    mus = HYPOTHESES[hypothesis]
    ages = LAYOUT_AGES[layout]
    groups = tuple(GroupLaw(f"g{j + 1}", per_group, mus[j], ages[j]) for j in range(2))
    return ScenarioConfig(groups, reps, _spec(true_copula), tuple(_spec(c) for c in hyp_copulas),
                          seed, **kw)


test_config.__test__ = False


def _spec(c) -> CopulaSpec:
    return c if isinstance(c, CopulaSpec) else CopulaSpec.parse(c)


# -- data generation -------------------------------------------------------


def _stream_key(seed: int) -> np.ndarray:
    return np.random.SeedSequence(seed).generate_state(2, np.uint64)


def patient_uniforms(seed: int, rep_index: int, n: int) -> np.ndarray:
    """``(n, 6)`` uniforms, row ``i`` from patient ``i``'s own stream."""
    key = _stream_key(seed)
    out = np.empty((n, len(_DRAWS)))
    for i in range(n):
        bitgen = np.random.Philox(key=key, counter=np.array([0, i, rep_index, 0], dtype=np.uint64))
        out[i] = np.random.Generator(bitgen).random(len(_DRAWS))
    return out


def generate_cohort(config: ScenarioConfig, table: RateTable, rep_index: int) -> Cohort:
    """Draw replicate ``rep_index`` of the scenario, with its latent truth.

    ``(S_E(E), S_P(P))`` follows the true copula: the excess rank is drawn
    first and the population rank from the conditional law given it.
    """
    n = config.n
    uni = patient_uniforms(config.seed, rep_index, n)
    tiny = np.nextafter(0.0, 1.0)
    # 1 - u lies in (0, 1]; keep it off 1 so that E > 0
    u_e = np.clip(1.0 - uni[:, 3], tiny, 1.0 - 2.0**-53)
    u_p = conditional_inverse(config.true_copula, u_e, uni[:, 4])
    u_p = np.clip(u_p, tiny, 1.0 - 2.0**-53)

    sex = np.where(uni[:, 0] < 0.5, "male", "female").astype(object)
    d_lo, d_hi = config.diagnosis_range
    diag = d_lo + (d_hi - d_lo) * uni[:, 1]
    ages = np.empty(n)
    mu = np.empty(n)
    labels = np.empty(n, dtype=object)
    start = 0
    for g in config.groups:
        sl = slice(start, start + g.size)
        lo, hi = g.age_range
        ages[sl] = lo + (hi - lo) * uni[sl, 2]
        mu[sl] = g.excess_mean
        labels[sl] = g.label
        start += g.size

    excess = -mu * np.log(u_e)
    censor = np.minimum(-config.censor_mean * np.log1p(-uni[:, 5]), config.censor_cut)
    censor = np.maximum(censor, tiny)
    horizon = config.censor_cut
    paths = [hazard_path(table, Demographics(sex[i], float(ages[i]), float(diag[i])), horizon)
             for i in range(n)]
    pop = np.array([sample_population_time(paths[i], u_p[i]) for i in range(n)])
    death = np.minimum(excess, pop)
    time = np.minimum(death, censor)
    status = (death <= censor).astype(np.int64)
    latent = LatentTruth(excess, pop, censor, mu, config.true_copula, paths)
    return Cohort(time, status, sex, ages, diag,
                  labels if len(config.groups) > 1 else None, latent)


def replicate_mesh(cohort: Cohort, config: ScenarioConfig, horizon: float | None = None) -> Mesh:
    return build_mesh(cohort, horizon=horizon or config.censor_cut, step=config.mesh_step)


# -- metric grid -----------------------------------------------------------


@dataclass(frozen=True)
class MetricsRow:
    true_copula: str
    hyp_copula: str
    t: float
    bias: float
    rmse: float
    ecr: float
    N: int
    n: int
    failures: int = 0
    flagged: bool = False


@dataclass
class MetricGridResult:
    rows: list
    times: np.ndarray
    curve_grid: np.ndarray
    # (true label, hyp label) -> (N, len(curve_grid)) array of S_hat / S_E
    curves: dict = field(default_factory=dict)

    def row(self, true_copula, hyp_copula, t: float) -> MetricsRow:
        tl, hl = _spec(true_copula).label, _spec(hyp_copula).label
        for r in self.rows:
            if r.true_copula == tl and r.hyp_copula == hl and abs(r.t - t) < 1e-12:
                return r
        raise KeyError((tl, hl, t))


def _map(fn, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _metric_replicate(config, table, rep, times, curve_grid, solver):
    cohort = generate_cohort(config, table, rep)
    mesh = replicate_mesh(cohort, config, max(max(times), curve_grid[-1]))
    prep = prepare(cohort, table, mesh)
    out = {}
    for hyp in config.hyp_copulas:
        try:
            fit = _fit_prepared(prep, hyp, solver)
        except SolverError as err:
            log.debug("replicate %d under %s failed: %s", rep, hyp.label, err)
            out[hyp.label] = None
            continue
        idx = [mesh.index_at(t) for t in times]
        cidx = [mesh.index_at(t) for t in curve_grid]
        out[hyp.label] = (fit.cum_hazard[idx], np.sqrt(fit.variance[idx]),
                          np.exp(-fit.cum_hazard[cidx]))
    return out


def metrics_from_replicates(lam_hat: np.ndarray, sigma_hat: np.ndarray, surv_true: np.ndarray,
                            z: float = Z975) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bias, rmse and coverage of the survival estimates.

    ``lam_hat`` and ``sigma_hat`` are ``(N, T)`` cumulative hazards and their
    standard errors; coverage uses the log-survival scale.
    """
    err = np.exp(-lam_hat) - surv_true
    bias = err.mean(axis=0)
    rmse = np.sqrt((err**2).mean(axis=0))
    covered = np.abs(-np.log(surv_true) - lam_hat) <= z * sigma_hat
    return bias, rmse, covered.mean(axis=0)


def run_metric_grid(configs: Sequence[ScenarioConfig], table: RateTable,
                    times: Sequence[float] = (5.0, 10.0, 15.0), *,
                    curve_step: float = 0.25, solver: SolverConfig | None = None,
                    threads: int = 1) -> MetricGridResult:
    """Fit every hypothesized copula on ``reps`` cohorts of each config.

    Each config carries one true copula; its cohorts are shared by all its
    hypothesized copulas.
    """
    solver = solver or SolverConfig()
    times = np.asarray(times, dtype=float)
    top = max(float(times.max()), min(c.censor_cut for c in configs))
    curve_grid = np.round(np.arange(0.0, top + 1e-9, curve_step), 12)
    rows, curves = [], {}
    for config in configs:
        reps = _map(lambda r: _metric_replicate(config, table, r, times, curve_grid, solver),
                    range(config.reps), threads)
        s_true = config.excess_survival(times)
        s_curve = config.excess_survival(curve_grid)
        for hyp in config.hyp_copulas:
            got = [r[hyp.label] for r in reps if r[hyp.label] is not None]
            failures = config.reps - len(got)
            flagged = failures > FLAG_FAILURE_RATE * config.reps
            key = (config.true_copula.label, hyp.label)
            if not got:
                bias = rmse = ecr = np.full(times.size, np.nan)
                curves[key] = np.empty((0, curve_grid.size))
            else:
                lam = np.vstack([g[0] for g in got])
                sig = np.vstack([g[1] for g in got])
                bias, rmse, ecr = metrics_from_replicates(lam, sig, s_true)
                curves[key] = np.vstack([g[2] for g in got]) / s_curve
            for j, t in enumerate(times):
                rows.append(MetricsRow(key[0], key[1], float(t), float(bias[j]), float(rmse[j]),
                                       float(ecr[j]), len(got), config.n, failures, flagged))
    return MetricGridResult(rows, times, curve_grid, curves)


# -- test grid -------------------------------------------------------------


@dataclass(frozen=True)
class RejectionRow:
    layout: int | None
    hypothesis: str | None
    true_copula: str
    hyp_copula: str
    T: float
    N: int
    rejections: int
    rate: float
    ci_low: float
    ci_high: float
    failures: int = 0
    flagged: bool = False


@dataclass
class TestGridResult:
    __test__ = False

    rows: list
    # (layout, hypothesis, true, hyp, T) -> array of p-values (NaN on failure)
    p_values: dict = field(default_factory=dict)
    oracle_p_values: dict = field(default_factory=dict)

    def row(self, true_copula, hyp_copula, T: float, hypothesis: str | None = None,
            layout: int | None = None) -> RejectionRow:
        tl, hl = _spec(true_copula).label, _spec(hyp_copula).label
        for r in self.rows:
            if (r.true_copula == tl and r.hyp_copula == hl and abs(r.T - T) < 1e-12
                    and (hypothesis is None or r.hypothesis == hypothesis)
                    and (layout is None or r.layout == layout)):
                return r
        raise KeyError((tl, hl, T, hypothesis, layout))


def rejection_interval(rate: float, N: int, z: float = Z975) -> tuple[float, float]:
    half = z * math.sqrt(rate * (1.0 - rate) / N)
    return rate - half, rate + half


def _test_replicate(config, table, rep, horizons, solver, oracle):
    cohort = generate_cohort(config, table, rep)
    mesh = replicate_mesh(cohort, config, max(horizons))
    out = {}
    for hyp in config.hyp_copulas:
        try:
            res = logrank_observable(cohort, table, hyp, mesh, list(horizons), solver=solver)
            out[hyp.label] = np.array([r.p_value for r in res])
        except (SolverError, TestError) as err:
            log.debug("replicate %d under %s failed: %s", rep, hyp.label, err)
            out[hyp.label] = np.full(len(horizons), np.nan)
    if oracle:
        try:
            out[None] = np.array([r.p_value for r in logrank_oracle(cohort, mesh, list(horizons))])
        except TestError:
            out[None] = np.full(len(horizons), np.nan)
    return out


def run_test_grid(configs: Sequence[ScenarioConfig], table: RateTable,
                  horizons: Sequence[float] = (5.0, 10.0, 15.0), *, alpha: float = 0.05,
                  labels: Sequence[tuple] | None = None, solver: SolverConfig | None = None,
                  oracle: bool = False, threads: int = 1) -> TestGridResult:
    """Rejection rates of the observable test at level ``alpha``.

    ``labels`` optionally gives a ``(layout, hypothesis)`` tag per config.
    With ``oracle=True`` the latent-coefficient statistic is computed too.
    """
    solver = solver or SolverConfig()
    horizons = [float(t) for t in horizons]
    labels = list(labels) if labels is not None else [(None, None)] * len(configs)
    rows, pvals, opvals = [], {}, {}
    for config, (layout, hypothesis) in zip(configs, labels):
        reps = _map(lambda r: _test_replicate(config, table, r, horizons, solver, oracle),
                    range(config.reps), threads)
        tl = config.true_copula.label
        if oracle:
            ps = np.vstack([r[None] for r in reps])
            for j, T in enumerate(horizons):
                opvals[(layout, hypothesis, tl, T)] = ps[:, j]
        for hyp in config.hyp_copulas:
            ps = np.vstack([r[hyp.label] for r in reps])
            for j, T in enumerate(horizons):
                p = ps[:, j]
                pvals[(layout, hypothesis, tl, hyp.label, T)] = p
                ok = ~np.isnan(p)
                N = int(ok.sum())
                failures = config.reps - N
                rej = int((p[ok] < alpha).sum())
                rate = rej / N if N else float("nan")
                lo, hi = rejection_interval(rate, N) if N else (float("nan"),) * 2
                rows.append(RejectionRow(layout, hypothesis, tl, hyp.label, T, N, rej, rate,
                                         lo, hi, failures, failures > FLAG_FAILURE_RATE * config.reps))
    return TestGridResult(rows, pvals, opvals)


# -- scenario files --------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    """A parsed scenario file: a list of configs plus output settings."""

    name: str
    kind: str  # "metrics" or "test"
    configs: tuple
    times: tuple
    labels: tuple = ()
    alpha: float = 0.05
    curve_step: float = 0.25

    def with_overrides(self, reps: int | None = None, seed: int | None = None) -> "Scenario":
        configs = tuple(replace(c, reps=reps if reps is not None else c.reps,
                                seed=seed if seed is not None else c.seed)
                        for c in self.configs)
        return replace(self, configs=configs)

    def run(self, table: RateTable, threads: int = 1, solver: SolverConfig | None = None):
        if self.kind == "metrics":
            return run_metric_grid(self.configs, table, self.times, curve_step=self.curve_step,
                                   solver=solver, threads=threads)
        return run_test_grid(self.configs, table, self.times, alpha=self.alpha,
                             labels=self.labels, solver=solver, threads=threads)


_KEYS = {
    "name", "kind", "reps", "seed", "times", "true_copulas", "hyp_copulas", "pairs",
    "n", "excess_mean", "layout", "hypotheses", "per_group", "censor_mean", "censor_cut",
    "diagnosis_min", "diagnosis_max", "mesh_step_days", "alpha", "curve_step",
}


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _copulas(text: str) -> tuple:
    return tuple(_spec(x.strip()) for x in text.split(";") if x.strip())


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    """Parse the INI text of a scenario file (section ``[scenario]``).

    Keys: ``kind`` (metrics|test), ``reps``, ``seed``, ``times``,
    ``true_copulas`` and ``hyp_copulas`` (``;``-separated specs),
    ``pairs`` (cross|diagonal), ``n`` and ``excess_mean`` (metrics),
    ``layout`` and ``hypotheses`` and ``per_group`` (test), plus the optional
    ``censor_mean``, ``censor_cut``, ``diagnosis_min``, ``diagnosis_max``,
    ``mesh_step_days``, ``alpha`` and ``curve_step``.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as err:
        raise ScenarioError(f"{source}: {err}") from None
    if not cp.has_section("scenario") or len(cp.sections()) != 1:
        raise ScenarioError(f"{source}: expected exactly one [scenario] section")
    sec = cp["scenario"]
    unknown = set(sec) - _KEYS
    if unknown:
        raise ScenarioError(f"{source}: unknown keys {sorted(unknown)}")

    def need(key):
        if key not in sec:
            raise ScenarioError(f"{source}: missing key {key!r}")
        return sec[key]

    try:
        kind = need("kind").strip()
        if kind not in ("metrics", "test"):
            raise ScenarioError(f"{source}: kind must be 'metrics' or 'test'")
        reps = int(need("reps"))
        seed = int(sec.get("seed", "0"))
        times = _floats(need("times"))
        trues = _copulas(need("true_copulas"))
        hyps = _copulas(sec.get("hyp_copulas", need("true_copulas")))
        pairs = sec.get("pairs", "cross").strip()
        if pairs not in ("cross", "diagonal"):
            raise ScenarioError(f"{source}: pairs must be 'cross' or 'diagonal'")
        if pairs == "diagonal" and trues != hyps:
            raise ScenarioError(f"{source}: diagonal pairs need identical copula lists")
        common = {
            "censor_mean": float(sec.get("censor_mean", "20")),
            "censor_cut": float(sec.get("censor_cut", "15")),
            "diagnosis_range": (float(sec.get("diagnosis_min", "1990")),
                                float(sec.get("diagnosis_max", "2010"))),
            "mesh_step": float(sec.get("mesh_step_days", "1")),
        }
        if not times or min(times) <= 0 or max(times) > common["censor_cut"]:
            raise ScenarioError(f"{source}: times must lie in (0, censor_cut]")

        def hyps_for(c0):
            return (c0,) if pairs == "diagonal" else hyps

        configs, labels = [], []
        if kind == "metrics":
            n = int(sec.get("n", "500"))
            mu = float(sec.get("excess_mean", "10"))
            for c0 in trues:
                configs.append(metric_config(c0, hyps_for(c0), reps, n, mu, seed, **common))
        else:
            layout = int(need("layout"))
            per_group = int(sec.get("per_group", "250"))
            for h in need("hypotheses").replace(",", " ").split():
                for c0 in trues:
                    configs.append(test_config(layout, h, c0, hyps_for(c0), reps, per_group,
                                               seed, **common))
                    labels.append((layout, h))
        return Scenario(sec.get("name", source), kind, tuple(configs), times, tuple(labels),
                        float(sec.get("alpha", "0.05")), float(sec.get("curve_step", "0.25")))
    except ScenarioError:
        raise
    except (ValueError, KeyError) as err:
        raise ScenarioError(f"{source}: {err}") from None


def shipped_scenarios() -> list[str]:
    root = resources.files("netsurv") / "scenarios"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def load_scenario(source: str | Path) -> Scenario:
    """Load a scenario from a path, or by name from the shipped set."""
    path = Path(source)
    if path.is_file():
        return parse_scenario(path.read_text(encoding="utf-8"), str(path))
    name = str(source)
    res = resources.files("netsurv") / "scenarios" / f"{name}.ini"
    if res.is_file():
        return parse_scenario(res.read_text(encoding="utf-8"), name)
    raise ScenarioError(f"no scenario file or shipped scenario named {name!r}")


# -- CSV output ------------------------------------------------------------


def _g(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float) or isinstance(x, np.floating):
        return "%.17g" % x
    return "" if x is None else str(x)


def write_rows(stream: IO[str], header: Sequence[str], rows: Iterable[Sequence]) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_g(x) for x in r])


def metrics_csv(result: MetricGridResult, stream: IO[str]) -> None:
    write_rows(stream, ["true_copula", "hyp_copula", "t", "bias", "rmse", "ecr", "N", "n",
                        "failures", "flagged"],
               ((r.true_copula, r.hyp_copula, r.t, r.bias, r.rmse, r.ecr, r.N, r.n,
                 r.failures, r.flagged) for r in result.rows))


def curves_csv(result: MetricGridResult, stream: IO[str]) -> None:
    def rows():
        for (tl, hl), arr in result.curves.items():
            for k, curve in enumerate(arr):
                for t, ratio in zip(result.curve_grid, curve):
                    yield tl, hl, k, float(t), float(ratio)
    write_rows(stream, ["true_copula", "hyp_copula", "rep", "t", "ratio"], rows())


def rejections_csv(result: TestGridResult, stream: IO[str]) -> None:
    write_rows(stream, ["layout", "hypothesis", "true_copula", "hyp_copula", "T", "N",
                        "rejections", "rate", "ci_low", "ci_high", "failures", "flagged"],
               ((r.layout, r.hypothesis, r.true_copula, r.hyp_copula, r.T, r.N, r.rejections,
                 r.rate, r.ci_low, r.ci_high, r.failures, r.flagged) for r in result.rows))


def pvalues_csv(result: TestGridResult, stream: IO[str]) -> None:
    def rows():
        for (layout, h, tl, hl, T), ps in result.p_values.items():
            for k, p in enumerate(ps):
                yield layout, h, tl, hl, T, k, float(p)
    write_rows(stream, ["layout", "hypothesis", "true_copula", "hyp_copula", "T", "rep",
                        "p_value"], rows())


def summary_table(result) -> str:
    """Short fixed-width summary for terminals."""
    buf = io.StringIO()
    if isinstance(result, MetricGridResult):
        buf.write(f"{'true':<20} {'hypothesized':<20} {'t':>5} {'bias':>9} {'rmse':>8} {'ecr':>7}\n")
        for r in result.rows:
            buf.write(f"{r.true_copula:<20} {r.hyp_copula:<20} {r.t:>5g} {r.bias:>9.4f} "
                      f"{r.rmse:>8.4f} {r.ecr:>7.4f}{'  *' if r.flagged else ''}\n")
    else:
        buf.write(f"{'H':<3} {'true':<20} {'hypothesized':<20} {'T':>5} {'rate %':>14}\n")
        for r in result.rows:
            half = 100 * (r.ci_high - r.rate)
            buf.write(f"{r.hypothesis or '':<3} {r.true_copula:<20} {r.hyp_copula:<20} {r.T:>5g} "
                      f"{100 * r.rate:>7.1f} ± {half:<4.1f}{'  *' if r.flagged else ''}\n")
    return buf.getvalue()
