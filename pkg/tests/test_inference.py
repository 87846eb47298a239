import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netsurv.cohort import Cohort
from netsurv.copula import CopulaSpec
from netsurv.estimator import build_mesh
from netsurv.inference import (TestError, chi2_sf, group_fits, logrank_observable,
                               logrank_oracle, oracle_processes)
from netsurv.lifetable import constant_rate_table
from netsurv.simulation import generate_cohort, replicate_mesh, test_config

from conftest import random_cohort
from oracles import chi2_sf_mp, logrank_textbook

ZERO = constant_rate_table(0.0)
INDEP = CopulaSpec.independence()


# -- chi-square tail -------------------------------------------------------


@pytest.mark.parametrize("x,df", [(3.841459, 1), (5.991465, 2), (18.307, 10), (0.5, 1),
                                  (40.0, 3), (1e-6, 4), (250.0, 7)])
def test_chi2_against_mpmath(x, df):
    assert abs(chi2_sf(x, df) - chi2_sf_mp(x, df)) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(x=st.floats(0, 200, allow_nan=False), df=st.integers(1, 30))
def test_chi2_property(x, df):
    assert abs(chi2_sf(x, df) - chi2_sf_mp(x, df)) <= 1e-12


def test_chi2_edges():
    assert chi2_sf(0.0, 3) == 1.0
    assert chi2_sf(float("inf"), 2) == 0.0
    for bad in ((1.0, 0), (1.0, -2), (-0.1, 1), (1.0, 1.5), (1.0, True)):
        with pytest.raises((ValueError, TypeError)):
            chi2_sf(*bad)


# -- observable statistic --------------------------------------------------


def duplicated(cohort):
    n = len(cohort.time)
    return Cohort(np.tile(cohort.time, 2), np.tile(cohort.status, 2),
                  np.tile(cohort.sex, 2), np.tile(cohort.age, 2),
                  np.tile(cohort.diagnosis_date, 2), np.array(["a"] * n + ["b"] * n, dtype=object))


@pytest.mark.parametrize("spec", ["indep", "frank(tau=0.3)", "clayton(tau=-0.3)"])
def test_duplicated_groups_give_zero(table, spec):
    c = duplicated(random_cohort(150, seed=5))
    mesh = build_mesh(c, horizon=15.0)
    res = logrank_observable(c, table, CopulaSpec.parse(spec), mesh, 15.0)
    assert np.allclose(res.Z, 0.0, atol=1e-12)
    assert res.statistic == pytest.approx(0.0, abs=1e-20)
    assert res.p_value == 1.0
    assert res.df == 1


def test_permutation_invariance(table):
    c = random_cohort(300, seed=8, groups=["x", "y", "z"])
    mesh = build_mesh(c, horizon=10.0)
    cop = CopulaSpec.parse("frank(tau=0.3)")
    base = logrank_observable(c, table, cop, mesh, 10.0)
    relabel = {"x": "z", "y": "x", "z": "y"}
    c2 = Cohort(c.time, c.status, c.sex, c.age, c.diagnosis_date,
                np.array([relabel[g] for g in c.group], dtype=object))
    other = logrank_observable(c2, table, cop, mesh, 10.0)
    assert other.statistic == pytest.approx(base.statistic, rel=1e-10)
    assert base.df == 2


def test_gamma_structure(table):
    c = random_cohort(300, seed=9, groups=["x", "y", "z"])
    mesh = build_mesh(c, horizon=15.0)
    res = logrank_observable(c, table, CopulaSpec.parse("clayton(tau=0.3)"), mesh, 15.0)
    g = res.Gamma
    np.testing.assert_allclose(g, g.T, atol=1e-14)
    w = np.linalg.eigvalsh(g)
    assert w.min() >= -1e-10 * w.max()
    # ones vector is in the kernel
    assert np.abs(g @ np.ones(3)).max() <= 1e-10 * np.abs(g).max()


def test_zero_hazard_reduces_to_textbook_logrank():
    c = random_cohort(400, seed=11, groups=["a", "b"])
    c = Cohort(c.time, c.status, c.sex, c.age, c.diagnosis_date, c.group)
    for T in (5.0, 15.0):
        mesh = build_mesh(c, horizon=15.0)
        res = logrank_observable(c, ZERO, INDEP, mesh, T)
        o_e, var_obs, var_hyp = logrank_textbook(c.time, c.status, c.group, T)
        assert res.Z[0] == pytest.approx(o_e, abs=1e-10)
        assert res.Z[1] == pytest.approx(-o_e, abs=1e-10)
        assert res.Gamma[0, 0] == pytest.approx(var_obs, rel=1e-10)
        assert res.statistic == pytest.approx(o_e**2 / var_obs, rel=1e-9)
        # the observed-information variance tracks the hypergeometric one
        assert var_obs == pytest.approx(var_hyp, rel=0.05)


def test_multiple_horizons_share_fits(table):
    c = random_cohort(200, seed=12, groups=["a", "b"])
    mesh = build_mesh(c, horizon=15.0)
    many = logrank_observable(c, table, INDEP, mesh, [5.0, 15.0])
    single = logrank_observable(c, table, INDEP, mesh, 5.0)
    assert many[0].statistic == single.statistic
    assert many[1].horizon == 15.0


def test_group_copula_override(table):
    c = random_cohort(200, seed=13, groups=["a", "b"])
    mesh = build_mesh(c, horizon=15.0)
    fr = CopulaSpec.parse("frank(tau=0.3)")
    fits = group_fits(c, table, INDEP, mesh, copulas={"b": fr})
    assert fits.fits["a"].copula.label == "indep"
    assert fits.fits["b"].copula.label == fr.label


# -- errors ----------------------------------------------------------------


def test_group_without_events_is_named(table):
    c = Cohort([1.0, 2.0, 3.0, 4.0], [1, 1, 0, 0], ["male"] * 4, [60] * 4, [2000] * 4,
               ["a", "a", "lonely", "lonely"])
    with pytest.raises(TestError, match="lonely"):
        logrank_observable(c, table, INDEP, build_mesh(c, horizon=4.0), 4.0)


def test_single_group_rejected(table):
    c = random_cohort(50, seed=2, groups=["only"])
    with pytest.raises(TestError, match="two groups"):
        logrank_observable(c, table, INDEP, build_mesh(c, horizon=5.0), 5.0)


def test_horizon_outside_mesh(table):
    c = random_cohort(100, seed=2, groups=["a", "b"])
    with pytest.raises(TestError, match="horizon"):
        logrank_observable(c, table, INDEP, build_mesh(c, horizon=5.0), 6.0)


def test_oracle_requires_latent_truth():
    c = random_cohort(100, seed=2, groups=["a", "b"])
    with pytest.raises(TestError, match="latent"):
        logrank_oracle(c, build_mesh(c, horizon=5.0), 5.0)


# -- oracle statistic ------------------------------------------------------


def test_oracle_zero_hazard_independence_is_textbook():
    cfg = test_config(1, "H1", "indep", ["indep"], reps=1, per_group=150, seed=3)
    c = generate_cohort(cfg, ZERO, 0)
    mesh = replicate_mesh(c, cfg)
    res = logrank_oracle(c, mesh, 15.0)
    o_e, var_obs, _ = logrank_textbook(c.time, c.status, c.group, 15.0)
    assert res.Z[0] == pytest.approx(o_e, abs=1e-10)
    assert res.Gamma[0, 0] == pytest.approx(var_obs, rel=1e-10)
    obs = logrank_observable(c, ZERO, INDEP, mesh, 15.0)
    assert obs.statistic == pytest.approx(res.statistic, rel=1e-10)


@pytest.mark.parametrize("true", ["frank(tau=0.3)", "clayton(tau=-0.3)"])
def test_oracle_z_sums_to_zero(table, true):
    cfg = test_config(2, "H0", true, [true], reps=1, per_group=100, seed=4)
    c = generate_cohort(cfg, table, 0)
    mesh = replicate_mesh(c, cfg)
    res = logrank_oracle(c, mesh, 15.0)
    assert abs(res.Z.sum()) <= 1e-9 * np.abs(res.Z).max()
    labels, Y, dN, W, events = oracle_processes(c, mesh)
    assert np.all(Y >= 0) and np.all(W >= 0)
    assert events.sum() == c.status[c.time <= 15.0].sum()
