import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netsurv.copula import UnitPair, copula_cdf
from netsurv.lifetable import constant_rate_table, population_survival
from netsurv.simulation import (ScenarioError, generate_cohort, load_scenario, metric_config,
                                metrics_csv, metrics_from_replicates, parse_scenario,
                                patient_uniforms, rejection_interval, run_metric_grid,
                                run_test_grid, shipped_scenarios, test_config)

ZERO = constant_rate_table(0.0)


# -- generation ------------------------------------------------------------


def test_generation_is_deterministic(table):
    cfg = metric_config("clayton(tau=0.3)", ["indep"], reps=2, n=50, seed=5)
    a = generate_cohort(cfg, table, 1)
    b = generate_cohort(cfg, table, 1)
    np.testing.assert_array_equal(a.time, b.time)
    np.testing.assert_array_equal(a.status, b.status)
    c = generate_cohort(cfg, table, 0)
    assert not np.array_equal(a.time, c.time)


def test_patient_streams_do_not_depend_on_cohort_size():
    np.testing.assert_array_equal(patient_uniforms(3, 2, 10), patient_uniforms(3, 2, 40)[:10])


def test_common_random_numbers_across_copulas(table):
    # the excess rank does not depend on the copula
    a = generate_cohort(metric_config("frank(tau=0.3)", ["indep"], n=40, seed=2), table, 0)
    b = generate_cohort(metric_config("clayton(tau=-0.3)", ["indep"], n=40, seed=2), table, 0)
    np.testing.assert_array_equal(a.latent.excess, b.latent.excess)
    np.testing.assert_array_equal(a.age, b.age)


def test_independent_zero_hazard_uncensored_excess_law():
    cfg = metric_config("indep", ["indep"], n=10_000, seed=6, censor_mean=1e9, censor_cut=40.0)
    c = generate_cohort(cfg, ZERO, 0)
    # no population deaths or censoring before t=5: T = E there
    surv = (c.time > 5.0).mean()
    p = math.exp(-0.5)
    assert abs(surv - p) <= 3 * math.sqrt(p * (1 - p) / 10_000)
    assert np.all(c.latent.population > 40.0)


def test_censoring_fraction(table):
    cfg = metric_config("indep", ["indep"], n=10_000, seed=7)
    c = generate_cohort(cfg, table, 0)
    assert abs((1 - c.status.mean()) - 1 / 3) <= 0.05


@pytest.mark.parametrize("true", ["frank(tau=0.3)", "clayton(tau=-0.3)"])
def test_joint_law_follows_copula(table, true):
    cfg = metric_config(true, ["indep"], n=10_000, seed=8)
    c = generate_cohort(cfg, table, 0)
    lat = c.latent
    frac = np.mean((lat.excess > 5.0) & (lat.population > 5.0))
    s_e = np.full(c.time.size, math.exp(-0.5))
    s_p = np.array([population_survival(p, 5.0) for p in lat.paths])
    expect = copula_cdf(cfg.true_copula, UnitPair(s_e, s_p)).mean()
    se = math.sqrt(expect * (1 - expect) / c.time.size)
    assert abs(frac - expect) <= 3 * se


def test_two_group_layout(table):
    cfg = test_config(2, "H1", "indep", ["indep"], reps=1, per_group=100, seed=1)
    c = generate_cohort(cfg, table, 0)
    young = c.group == "g1"
    assert young.sum() == 100
    assert c.age[young].max() <= 65 and c.age[~young].min() >= 65
    np.testing.assert_array_equal(c.latent.excess_mean[young], 5.0)
    np.testing.assert_array_equal(c.latent.excess_mean[~young], 6.0)


def test_config_validation():
    with pytest.raises(ScenarioError):
        metric_config("indep", ["indep"], reps=0)
    with pytest.raises(ScenarioError):
        metric_config("indep", ["indep"], excess_mean=-1)
    with pytest.raises(ScenarioError):
        test_config(3, "H0", "indep", ["indep"])
    with pytest.raises(ScenarioError):
        test_config(1, "H9", "indep", ["indep"])


# -- metrics ---------------------------------------------------------------


def test_metrics_from_replicates_by_hand():
    lam = np.array([[0.5], [0.7]])
    sig = np.array([[0.1], [0.05]])
    s = np.array([math.exp(-0.6)])
    bias, rmse, ecr = metrics_from_replicates(lam, sig, s)
    errs = np.exp(-lam[:, 0]) - s[0]
    assert bias[0] == pytest.approx(errs.mean())
    assert rmse[0] == pytest.approx(math.sqrt((errs**2).mean()))
    # |0.6 - 0.5| <= 0.196 covers, |0.6 - 0.7| > 0.098 does not
    assert ecr[0] == 0.5


@settings(max_examples=100, deadline=None)
@given(n=st.integers(1, 30), seed=st.integers(0, 10_000))
def test_metric_invariants(n, seed):
    rng = np.random.default_rng(seed)
    lam = rng.uniform(0.1, 2.0, (n, 3))
    sig = rng.uniform(0.0, 0.5, (n, 3))
    s = np.exp(-rng.uniform(0.1, 2.0, 3))
    bias, rmse, ecr = metrics_from_replicates(lam, sig, s)
    assert np.all(rmse >= np.abs(bias) - 1e-15)
    assert np.all((ecr >= 0) & (ecr <= 1))
    if n == 1:
        assert set(ecr.tolist()) <= {0.0, 1.0}
    assert not np.any(np.isnan(bias) | np.isnan(rmse) | np.isnan(ecr))


def test_rejection_interval():
    lo, hi = rejection_interval(0.05, 400)
    half = 1.959964 * math.sqrt(0.05 * 0.95 / 400)
    assert (lo, hi) == pytest.approx((0.05 - half, 0.05 + half))
    assert rejection_interval(1.0, 200) == (1.0, 1.0)


def test_metric_grid_is_deterministic_and_thread_independent(table):
    cfg = metric_config("frank(tau=0.3)", ["frank(tau=0.3)", "indep"], reps=3, n=120, seed=4)
    a = run_metric_grid([cfg], table, (5.0, 10.0))
    b = run_metric_grid([cfg], table, (5.0, 10.0), threads=2)
    buf_a, buf_b = io.StringIO(), io.StringIO()
    metrics_csv(a, buf_a)
    metrics_csv(b, buf_b)
    assert buf_a.getvalue() == buf_b.getvalue()
    assert len(a.rows) == 4
    row = a.row("frank(tau=0.3)", "indep", 10.0)
    assert row.N == 3 and row.failures == 0 and not row.flagged
    assert a.curves[("frank(tau=0.3)", "indep")].shape == (3, a.curve_grid.size)


def test_failures_are_counted_and_flagged(table):
    cfg = metric_config("indep", ["gumbel(tau=0.3)"], reps=2, n=500, seed=1)
    res = run_metric_grid([cfg], table, (15.0,))
    row = res.rows[0]
    assert row.failures == 2 and row.flagged and row.N == 0
    assert math.isnan(row.bias)


def test_latent_and_observable_decisions_agree(table):
    true = "frank(tau=-0.3)"
    cfg = test_config(1, "H1", true, [true], reps=10, per_group=250, seed=21)
    res = run_test_grid([cfg], table, (15.0,), oracle=True)
    obs = res.p_values[(None, None, cfg.true_copula.label, cfg.true_copula.label, 15.0)]
    ora = res.oracle_p_values[(None, None, cfg.true_copula.label, 15.0)]
    assert np.mean((obs < 0.05) == (ora < 0.05)) >= 0.9


# -- scenario files --------------------------------------------------------


MINIMAL = """[scenario]
kind = metrics
reps = 3
times = 5, 10
true_copulas = indep; frank(tau=0.3)
"""


def test_parse_minimal_metrics():
    sc = parse_scenario(MINIMAL)
    assert sc.kind == "metrics"
    assert len(sc.configs) == 2
    assert sc.times == (5.0, 10.0)
    assert [h.label for h in sc.configs[1].hyp_copulas] == ["indep", "frank(tau=0.3)"]


def test_parse_diagonal_test_scenario():
    text = """[scenario]
kind = test
reps = 2
times = 15
layout = 2
hypotheses = H0 H2
true_copulas = clayton(tau=0.3); frank(tau=-0.3)
pairs = diagonal
"""
    sc = parse_scenario(text)
    assert len(sc.configs) == 4
    assert sc.labels[0] == (2, "H0") and sc.labels[-1] == (2, "H2")
    assert all(len(c.hyp_copulas) == 1 for c in sc.configs)


@pytest.mark.parametrize("patch,match", [
    (("kind = metrics", "kind = plots"), "kind"),
    (("reps = 3", "reps = 3\ncolour = blue"), "unknown keys"),
    (("reps = 3\n", ""), "reps"),
    (("times = 5, 10", "times = 20"), "times"),
    (("indep; frank(tau=0.3)", "indep; frank(tau=0)"), "indep"),
    (("[scenario]", "[other]"), "section"),
    (("reps = 3", "reps = three"), "three"),
])
def test_scenario_errors(patch, match):
    with pytest.raises(ScenarioError, match=match):
        parse_scenario(MINIMAL.replace(*patch))


def test_shipped_scenarios_load():
    names = shipped_scenarios()
    assert "paper-table-rez15-desk" in names
    for name in names:
        sc = load_scenario(name)
        assert sc.configs
    rez = load_scenario("paper-table-rez15-desk")
    assert sum(len(c.hyp_copulas) for c in rez.configs) == 25
    assert rez.configs[0].reps == 200
    with pytest.raises(ScenarioError):
        load_scenario("no-such-scenario")


def test_scenario_overrides():
    sc = parse_scenario(MINIMAL).with_overrides(reps=1, seed=9)
    assert all(c.reps == 1 and c.seed == 9 for c in sc.configs)
