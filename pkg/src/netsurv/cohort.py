"""Observed follow-up records and their CSV ingestion."""

from __future__ import annotations

import csv
import datetime as _dt
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from netsurv.lifetable import DAYS_PER_YEAR, SEXES, Demographics, HazardPath, RateTable, hazard_path


class CohortError(ValueError):
    """Malformed cohort input."""


@dataclass(frozen=True)
class PatientRecord:
    time: float  # years of follow-up
    status: int  # 1 death, 0 censored
    demo: Demographics
    group: str | None = None

    def __post_init__(self):
        if not self.time > 0:
            raise CohortError("follow-up time must be > 0")
        if self.status not in (0, 1):
            raise CohortError("status must be 0 or 1")


@dataclass
class LatentTruth:
    """Simulation-only ground truth attached to a generated cohort.

    ``excess_mean`` is the per-patient mean of the exponential excess time;
    ``paths`` the population hazard paths used to draw ``P``.
    """

    excess: np.ndarray
    population: np.ndarray
    censoring: np.ndarray
    excess_mean: np.ndarray
    copula: object
    paths: list

    def true_coefficients(self, mesh: np.ndarray):
        """True ``a_i, b_i, c_i`` on ``mesh`` as ``(n, K)`` arrays."""
        from netsurv.copula import copula_cdf, copula_partial, UnitPair
        from netsurv.lifetable import population_on_mesh

        S_P, L_P = population_on_mesh(self.paths, mesh)
        S_E = np.exp(-np.outer(1.0 / self.excess_mean, mesh))
        pair = UnitPair(S_E, S_P)
        a = copula_partial(self.copula, pair, 1)
        c = copula_cdf(self.copula, pair) / S_E
        b = copula_partial(self.copula, pair, 2) * L_P * S_P / S_E
        return a, b, c


@dataclass
class Cohort:
    """Column-oriented cohort: one entry per patient in each array."""

    time: np.ndarray
    status: np.ndarray
    sex: np.ndarray
    age: np.ndarray
    diagnosis_date: np.ndarray
    group: np.ndarray | None = None
    latent: LatentTruth | None = None
    _paths: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=float)
        self.status = np.asarray(self.status, dtype=np.int64)
        self.sex = np.asarray(self.sex, dtype=object)
        self.age = np.asarray(self.age, dtype=float)
        self.diagnosis_date = np.asarray(self.diagnosis_date, dtype=float)
        n = self.time.size
        for name in ("status", "sex", "age", "diagnosis_date"):
            if getattr(self, name).shape != (n,):
                raise CohortError(f"column {name} has the wrong length")
        if self.group is not None:
            self.group = np.asarray(self.group, dtype=object)
            if self.group.shape != (n,):
                raise CohortError("column group has the wrong length")
        if n and not np.all(self.time > 0):
            raise CohortError("follow-up times must be > 0")
        if not np.all(np.isin(self.status, (0, 1))):
            raise CohortError("status must be 0 or 1")

    def __len__(self) -> int:
        return self.time.size

    @classmethod
    def from_records(cls, records: Sequence[PatientRecord]) -> "Cohort":
        groups = [r.group for r in records]
        return cls(
            time=[r.time for r in records],
            status=[r.status for r in records],
            sex=[r.demo.sex for r in records],
            age=[r.demo.age for r in records],
            diagnosis_date=[r.demo.diagnosis_date for r in records],
            group=None if all(g is None for g in groups) else groups,
        )

    def records(self) -> list[PatientRecord]:
        return [
            PatientRecord(float(self.time[i]), int(self.status[i]),
                          Demographics(self.sex[i], float(self.age[i]), float(self.diagnosis_date[i])),
                          None if self.group is None else self.group[i])
            for i in range(len(self))
        ]

    def demographics(self, i: int) -> Demographics:
        return Demographics(str(self.sex[i]), float(self.age[i]), float(self.diagnosis_date[i]))

    def hazard_paths(self, table: RateTable, horizon: float) -> list[HazardPath]:
        """Population hazard paths up to ``horizon``, cached per (table, horizon)."""
        key = (id(table), float(horizon))
        if key not in self._paths:
            if self.latent is not None and self.latent.paths and self.latent.paths[0].horizon >= horizon:
                paths = self.latent.paths
            else:
                paths = [hazard_path(table, self.demographics(i), horizon) for i in range(len(self))]
            self._paths = {key: paths}
        return self._paths[key]

    def subset(self, idx) -> "Cohort":
        idx = np.asarray(idx)
        sub = Cohort(self.time[idx], self.status[idx], self.sex[idx], self.age[idx],
                     self.diagnosis_date[idx], None if self.group is None else self.group[idx])
        return sub

    def group_labels(self) -> list:
        if self.group is None:
            raise CohortError("cohort has no group column")
        return sorted(set(self.group.tolist()), key=str)


def _decimal_year(text: str) -> float:
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    d = _dt.date.fromisoformat(text)
    start = _dt.date(d.year, 1, 1)
    length = (_dt.date(d.year + 1, 1, 1) - start).days
    return d.year + (d - start).days / length


def load_cohort(source, time_unit: str = "days", age_unit: str = "years",
                require_group: bool = False) -> Cohort:
    """Read ``time,status,sex,age,diag_date[,group]`` CSV.

    ``time_unit``/``age_unit`` are ``"days"`` or ``"years"``; days are
    converted at 365.241 per year.  ``diag_date`` is an ISO date or a
    decimal year.
    """
    for unit in (time_unit, age_unit):
        if unit not in ("days", "years"):
            raise CohortError(f"unknown unit {unit!r}")
    if hasattr(source, "read"):
        data = source.read()
        text = data.decode("utf-8") if isinstance(data, bytes) else data
    else:
        with open(source, encoding="utf-8", newline="") as fh:
            text = fh.read()
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip().lower() for h in next(reader)]
    except StopIteration:
        raise CohortError("empty cohort file") from None
    expected = ["time", "status", "sex", "age", "diag_date"]
    if header[:5] != expected or len(header) not in (5, 6) or (len(header) == 6 and header[5] != "group"):
        raise CohortError("cohort header must be 'time,status,sex,age,diag_date[,group]' (line 1)")
    has_group = len(header) == 6
    if require_group and not has_group:
        raise CohortError("cohort file has no group column")
    tscale = 1.0 / DAYS_PER_YEAR if time_unit == "days" else 1.0
    ascale = 1.0 / DAYS_PER_YEAR if age_unit == "days" else 1.0
    cols = {k: [] for k in ("time", "status", "sex", "age", "diag", "group")}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise CohortError(f"malformed row at line {lineno}: expected {len(header)} fields")
        try:
            t = float(row[0]) * tscale
            status = int(row[1])
            age = float(row[3]) * ascale
            diag = _decimal_year(row[4])
        except ValueError:
            raise CohortError(f"malformed row at line {lineno}") from None
        sex = row[2].strip().lower()
        if sex not in SEXES:
            raise CohortError(f"unknown sex {row[2]!r} at line {lineno}")
        if not (math.isfinite(t) and t > 0):
            raise CohortError(f"non-positive follow-up time at line {lineno}")
        if status not in (0, 1):
            raise CohortError(f"status must be 0 or 1 at line {lineno}")
        if not (math.isfinite(age) and age >= 0):
            raise CohortError(f"negative age at line {lineno}")
        cols["time"].append(t)
        cols["status"].append(status)
        cols["sex"].append(sex)
        cols["age"].append(age)
        cols["diag"].append(diag)
        if has_group:
            cols["group"].append(row[5].strip())
    if not cols["time"]:
        raise CohortError("cohort file has no data rows")
    return Cohort(cols["time"], cols["status"], cols["sex"], cols["age"], cols["diag"],
                  cols["group"] if has_group else None)
