import numpy as np
import pytest

from netsurv.cohort import Cohort, CohortError
from netsurv.copula import CopulaSpec
from netsurv.estimator import (BootstrapError, Mesh, SolverConfig, SolverError, bootstrap_se,
                               build_mesh, fit, fit_generalized, fit_pohar_perme, prepare)
from netsurv.lifetable import DAYS_PER_YEAR, constant_rate_table

from conftest import random_cohort
from oracles import nelson_aalen

ZERO = constant_rate_table(0.0)
COPULAS = [CopulaSpec.parse(s) for s in ("clayton(tau=0.3)", "clayton(tau=-0.3)",
                                         "frank(tau=0.3)", "frank(tau=-0.3)")]


def one_patient(time, status=1):
    return Cohort([time], [status], ["male"], [60.0], [2000.0])


# -- mesh ------------------------------------------------------------------


def test_mesh_size_for_daily_grid():
    c = Cohort([1.23456, 7.5, 20.0], [1, 1, 0], ["male"] * 3, [60] * 3, [2000] * 3)
    mesh = build_mesh(c, horizon=15.0, step=1.0)
    # 5479 daily points k/365.241 < 15, the horizon itself, and two event times
    assert len(mesh) == 5479 + 1 + 2
    assert mesh.horizon == 15.0
    assert np.diff(mesh.points).max() <= (1 + 1e-9) / DAYS_PER_YEAR


def test_event_on_grid_not_duplicated():
    t = 365 / DAYS_PER_YEAR
    mesh = build_mesh(one_patient(t), horizon=2.0)
    assert len(mesh) == len(build_mesh(one_patient(1.5, 0), horizon=2.0))
    assert np.any(np.abs(mesh.points - t) <= 1e-12)


def test_mesh_errors():
    with pytest.raises(ValueError):
        build_mesh(one_patient(1.0), horizon=0.0)
    with pytest.raises(ValueError):
        build_mesh(one_patient(1.0), step=0.0)
    with pytest.raises(CohortError):
        build_mesh(Cohort([], [], [], [], []))
    with pytest.raises(ValueError):
        Mesh(np.array([0.0, 1.0, 0.5]))


# -- small exact cases -----------------------------------------------------


def test_single_death_zero_hazard():
    c = one_patient(1.0)
    mesh = build_mesh(c, horizon=2.0)
    f = fit_pohar_perme(c, ZERO, mesh)
    assert f.at(1.0) == (1.0, 1.0)
    assert f.at(0.999)[0] == 0.0


def test_single_death_constant_hazard():
    # dN/Y - lambda dt: the weights cancel in the jump, the drift integrates to -0.2
    c = one_patient(1.0)
    table = constant_rate_table(0.2)
    mesh = build_mesh(c, horizon=1.0)
    f = fit_pohar_perme(c, table, mesh)
    assert f.at(1.0)[0] == pytest.approx(0.8, rel=1e-12)
    g = fit_generalized(c, table, CopulaSpec.independence(), mesh)
    assert g.at(1.0)[0] == pytest.approx(f.at(1.0)[0], abs=1e-12)


def test_ties_jump_together():
    c = Cohort([1.0, 1.0, 2.0], [1, 1, 0], ["male"] * 3, [60] * 3, [2000] * 3)
    f = fit_pohar_perme(c, ZERO, build_mesh(c, horizon=2.0))
    assert f.at(1.0)[0] == pytest.approx(2 / 3)
    assert f.at(1.0)[1] == pytest.approx(2 / 9)


# -- Nelson-Aalen oracle ---------------------------------------------------


@pytest.mark.parametrize("copula", [CopulaSpec.independence()] + COPULAS, ids=lambda s: s.label)
def test_zero_hazard_equals_nelson_aalen(copula):
    c = random_cohort(150, seed=3)
    mesh = build_mesh(c, horizon=15.0)
    ref = nelson_aalen(c.time, c.status, mesh.points[::50])
    f = fit_generalized(c, ZERO, copula, mesh)
    np.testing.assert_allclose(f.cum_hazard[::50], ref, atol=1e-12)
    pp = fit_pohar_perme(c, ZERO, mesh)
    np.testing.assert_allclose(pp.cum_hazard[::50], ref, atol=1e-12)


# -- independence reduction ------------------------------------------------


def test_independence_matches_pohar_perme(table, cohort500):
    mesh = build_mesh(cohort500, horizon=15.0)
    prep = prepare(cohort500, table, mesh)
    pp = fit_pohar_perme(cohort500, table, mesh, prepared=prep)
    g = fit_generalized(cohort500, table, CopulaSpec.independence(), mesh, prepared=prep)
    assert np.abs(g.cum_hazard - pp.cum_hazard).max() < 1e-8
    assert np.abs(g.variance - pp.variance).max() < 1e-10


# -- structural invariants -------------------------------------------------


@pytest.mark.parametrize("copula", COPULAS, ids=lambda s: s.label)
def test_fit_invariants(table, cohort500, copula):
    mesh = build_mesh(cohort500, horizon=15.0)
    f = fit(cohort500, table, copula, mesh)
    assert f.cum_hazard[0] == 0.0
    dvar = np.diff(f.variance)
    assert np.all(dvar >= 0)
    pts = mesh.points[1:]
    event_times = cohort500.time[cohort500.status == 1]
    is_event = np.isin(np.round(pts, 12), np.round(event_times, 12))
    # variance moves only at events, the hazard only decreases between events
    assert np.all(dvar[~is_event] == 0)
    assert np.all(np.diff(f.cum_hazard)[~is_event] <= 0)
    np.testing.assert_array_equal(f.survival, np.exp(-f.cum_hazard))
    assert f.diagnostics["floor_hits"] == 0
    lo, hi = f.confidence_band()
    assert np.all(lo <= f.survival) and np.all(f.survival <= hi)


def test_explicit_mode_close_to_implicit(table, cohort500):
    mesh = build_mesh(cohort500, horizon=15.0)
    cop = CopulaSpec.parse("clayton(tau=0.3)")
    a = fit_generalized(cohort500, table, cop, mesh)
    b = fit_generalized(cohort500, table, cop, mesh, SolverConfig(implicit=False))
    assert b.diagnostics["method"] == "explicit"
    assert np.abs(a.cum_hazard - b.cum_hazard).max() < 5e-3


def test_bias_direction_follows_tau_order(table, cohort500):
    # on the same data, assuming more concordance gives a larger hazard
    mesh = build_mesh(cohort500, horizon=15.0)
    lam = [fit(cohort500, table, CopulaSpec.parse(s), mesh).at(15.0)[0]
           for s in ("frank(tau=-0.3)", "indep", "frank(tau=0.3)")]
    assert lam[0] < lam[1] < lam[2]


def test_truncation_when_risk_set_empties(table):
    c = Cohort([1.0, 2.0], [1, 1], ["male"] * 2, [60] * 2, [2000] * 2)
    mesh = build_mesh(c, horizon=3.0)
    for f in (fit_pohar_perme(c, table, mesh),
              fit_generalized(c, table, CopulaSpec.parse("frank(tau=0.3)"), mesh)):
        assert f.truncated_at == pytest.approx(2.0)
        assert f.at(3.0) == f.at(2.0)


def test_events_must_be_on_mesh(table):
    c = one_patient(1.0)
    with pytest.raises(ValueError, match="event time"):
        prepare(c, table, Mesh(np.array([0.0, 0.5, 2.0])))


def test_events_beyond_horizon_are_censored(table):
    c = Cohort([1.0, 5.0], [1, 1], ["male"] * 2, [60] * 2, [2000] * 2)
    f = fit_pohar_perme(c, ZERO, build_mesh(c, horizon=2.0))
    assert f.at(2.0)[0] == pytest.approx(0.5)


def test_gumbel_divergence_reported(table, cohort500):
    mesh = build_mesh(cohort500, horizon=15.0)
    with pytest.raises(SolverError) as info:
        fit_generalized(cohort500, table, CopulaSpec.parse("gumbel(tau=0.3)"), mesh)
    assert info.value.time > 0


# -- bootstrap -------------------------------------------------------------


def test_bootstrap_degenerate_resampler_gives_zero(table, cohort500):
    mesh = build_mesh(cohort500, horizon=5.0)
    se = bootstrap_se(cohort500, table, CopulaSpec.independence(), mesh, reps=2,
                      resampler=lambda rng, n: np.arange(n))
    assert np.all(se == 0)


def test_bootstrap_is_seeded(table):
    c = random_cohort(120, seed=4)
    mesh = build_mesh(c, horizon=5.0)
    a = bootstrap_se(c, table, CopulaSpec.independence(), mesh, reps=5, seed=9)
    b = bootstrap_se(c, table, CopulaSpec.independence(), mesh, reps=5, seed=9)
    np.testing.assert_array_equal(a, b)
    assert a[-1] > 0


def test_bootstrap_failure_budget(table, cohort500, monkeypatch):
    import netsurv.estimator as est

    calls = {"n": 0}
    real = est._fit_prepared

    def flaky(prep, copula, solver):
        calls["n"] += 1
        if calls["n"] % 3 == 0:
            raise SolverError(1.0, 1.0)
        return real(prep, copula, solver)

    monkeypatch.setattr(est, "_fit_prepared", flaky)
    mesh = build_mesh(cohort500, horizon=2.0)
    with pytest.raises(BootstrapError):
        bootstrap_se(cohort500, table, CopulaSpec.independence(), mesh, reps=6)
    with pytest.raises(ValueError):
        bootstrap_se(cohort500, table, CopulaSpec.independence(), mesh, reps=1)


def test_plugin_variance_ordering_against_bootstrap(table, cohort500):
    # concordant hypotheses shrink the plug-in variance relative to the bootstrap
    mesh = build_mesh(cohort500, horizon=10.0)
    ratios = {}
    for s in ("clayton(tau=0.3)", "clayton(tau=-0.3)"):
        cop = CopulaSpec.parse(s)
        f = fit_generalized(cohort500, table, cop, mesh)
        se = bootstrap_se(cohort500, table, cop, mesh, reps=40, seed=2)
        ratios[s] = f.std_error[-1] / se[-1]
    assert ratios["clayton(tau=0.3)"] < ratios["clayton(tau=-0.3)"]
