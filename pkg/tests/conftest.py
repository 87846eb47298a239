import numpy as np
import pytest

from netsurv.cohort import Cohort
from netsurv.lifetable import synthetic_rate_table


@pytest.fixture(scope="session")
def table():
    return synthetic_rate_table()


def random_cohort(n=500, seed=1, groups=None, events_only_on_days=False):
    """Cohort with Exp(10) excess times and Exp(20) ^ 15 censoring (no P)."""
    rng = np.random.default_rng(seed)
    e = rng.exponential(10.0, n)
    c = np.minimum(rng.exponential(20.0, n), 15.0)
    t = np.minimum(e, c)
    if events_only_on_days:
        t = np.maximum(np.round(t * 365.241), 1) / 365.241
    status = (e <= c).astype(int)
    sex = rng.choice(["male", "female"], n)
    age = rng.uniform(35, 75, n)
    diag = rng.uniform(1990, 2010, n)
    grp = None
    if groups is not None:
        grp = np.array([groups[i % len(groups)] for i in range(n)], dtype=object)
    return Cohort(t, status, sex, age, diag, grp)


@pytest.fixture
def cohort500():
    return random_cohort(500, seed=7)


# acceptance verdicts, echoed once more at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
