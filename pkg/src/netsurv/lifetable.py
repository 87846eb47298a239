"""Population mortality: rate tables and per-individual hazard paths.

Hazards are annual rates (events per person-year), piecewise constant within
each (sex, integer age, calendar year) cell.  An individual's hazard path
follows attained age and calendar time together, changing cell at every
birthday and every New Year.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import IO, Iterable

import numpy as np

DAYS_PER_YEAR = 365.241
SEXES = ("male", "female")

_MERGE_TOL = 1e-12


class RateTableError(ValueError):
    """Malformed or inconsistent rate table input."""


@dataclass(frozen=True)
class RateTable:
    """Annual hazard grid indexed by sex, integer age and calendar year."""

    age_axis: np.ndarray
    year_axis: np.ndarray
    hazard: dict  # sex -> array of shape (len(age_axis), len(year_axis))

    def __post_init__(self):
        for axis, name in ((self.age_axis, "age"), (self.year_axis, "year")):
            if axis.ndim != 1 or axis.size == 0 or np.any(np.diff(axis) != 1):
                raise RateTableError(f"{name} axis must be non-empty and gap-free")
        if not self.hazard:
            raise RateTableError("rate table has no sex strata")
        for sex, grid in self.hazard.items():
            if sex not in SEXES:
                raise RateTableError(f"unknown sex {sex!r}")
            if grid.shape != (self.age_axis.size, self.year_axis.size):
                raise RateTableError(f"grid for {sex} has wrong shape {grid.shape}")
            if not np.all(np.isfinite(grid)) or np.any(grid < 0):
                raise RateTableError(f"grid for {sex} has negative or non-finite hazards")

    @property
    def sexes(self) -> frozenset:
        return frozenset(self.hazard)

    @property
    def n_cells(self) -> int:
        return sum(g.size for g in self.hazard.values())

    def lookup(self, sex: str, age: int, year: int) -> tuple[float, bool]:
        """Hazard of one cell, clamping out-of-range age/year to the edge.

        Returns ``(hazard, clamped)``.
        """
        grid = self._grid(sex)
        ai = age - int(self.age_axis[0])
        yi = year - int(self.year_axis[0])
        clamped = False
        if ai < 0 or ai >= self.age_axis.size:
            ai = min(max(ai, 0), self.age_axis.size - 1)
            clamped = True
        if yi < 0 or yi >= self.year_axis.size:
            yi = min(max(yi, 0), self.year_axis.size - 1)
            clamped = True
        return float(grid[ai, yi]), clamped

    def _grid(self, sex: str) -> np.ndarray:
        try:
            return self.hazard[sex]
        except KeyError:
            raise RateTableError(f"rate table has no stratum for sex {sex!r}") from None

    def to_csv(self, stream: IO[str]) -> None:
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["sex", "age", "year", "hazard"])
        for sex in SEXES:
            if sex not in self.hazard:
                continue
            grid = self.hazard[sex]
            for i, age in enumerate(self.age_axis):
                for j, year in enumerate(self.year_axis):
                    w.writerow([sex, int(age), int(year), repr(float(grid[i, j]))])


def load_rate_table(source, unit: str = "hazard") -> RateTable:
    """Read a long-format CSV with header ``sex,age,year,hazard``.

    ``source`` is a path, a text stream or a byte stream.  With
    ``unit="prob"`` the last column holds annual death probabilities ``q``,
    converted to hazards by ``-ln(1 - q)``.
    """
    if unit not in ("hazard", "prob"):
        raise RateTableError(f"unknown table unit {unit!r}")
    stream = _open_text(source)
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise RateTableError("empty rate table") from None
    header = [h.strip().lower() for h in header]
    if header[:3] != ["sex", "age", "year"] or len(header) != 4 or header[3] not in ("hazard", "prob"):
        raise RateTableError("rate table header must be 'sex,age,year,hazard' (line 1)")

    cells: dict[tuple[str, int, int], float] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise RateTableError(f"malformed row at line {lineno}: expected 4 fields")
        sex = row[0].strip().lower()
        if sex not in SEXES:
            raise RateTableError(f"unknown sex {row[0]!r} at line {lineno}")
        try:
            age = int(row[1])
            year = int(row[2])
            value = float(row[3])
        except ValueError:
            raise RateTableError(f"malformed row at line {lineno}") from None
        if not math.isfinite(value):
            raise RateTableError(f"non-finite hazard at line {lineno}")
        if value < 0:
            raise RateTableError(f"negative hazard at line {lineno}")
        if unit == "prob":
            if value >= 1.0:
                raise RateTableError(f"death probability >= 1 at line {lineno}")
            value = -math.log1p(-value)
        key = (sex, age, year)
        if key in cells:
            raise RateTableError(f"duplicate cell {key} at line {lineno}")
        cells[key] = value

    if not cells:
        raise RateTableError("rate table has no data rows")
    ages = sorted({k[1] for k in cells})
    years = sorted({k[2] for k in cells})
    age_axis = np.arange(ages[0], ages[-1] + 1)
    year_axis = np.arange(years[0], years[-1] + 1)
    hazard = {}
    for sex in sorted({k[0] for k in cells}):
        grid = np.empty((age_axis.size, year_axis.size))
        for i, age in enumerate(age_axis):
            for j, year in enumerate(year_axis):
                try:
                    grid[i, j] = cells[(sex, int(age), int(year))]
                except KeyError:
                    raise RateTableError(
                        f"missing cell sex={sex} age={age} year={year}") from None
        hazard[sex] = grid
    return RateTable(age_axis, year_axis, hazard)


def _open_text(source) -> IO[str]:
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        if isinstance(source, bytes):
            return io.StringIO(source.decode("utf-8"))
        with open(source, encoding="utf-8", newline="") as fh:
            return io.StringIO(fh.read())
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return io.StringIO(data)


def synthetic_rate_table(age_max: int = 110, years: tuple[int, int] = (1970, 2040)) -> RateTable:
    """Gompertz-Makeham table with a secular decline, shaped like a European
    registry population of the 1990s-2000s.

    ``hazard = makeham + alpha * exp(beta * age) * exp(-0.015 * (year - 1990))``,
    with sex-specific ``(makeham, alpha, beta)``.
    """
    age_axis = np.arange(0, age_max + 1)
    year_axis = np.arange(years[0], years[1] + 1)
    params = {"male": (5e-4, 8.0e-5, 0.092), "female": (3e-4, 2.5e-5, 0.098)}
    trend = np.exp(-0.015 * (year_axis - 1990))
    hazard = {}
    for sex, (mk, alpha, beta) in params.items():
        base = alpha * np.exp(beta * age_axis)
        hazard[sex] = np.minimum(mk + np.outer(base, trend), 3.0)
    return RateTable(age_axis, year_axis, hazard)


def constant_rate_table(rate: float, ages=(0, 110), years=(1900, 2100)) -> RateTable:
    age_axis = np.arange(ages[0], ages[1] + 1)
    year_axis = np.arange(years[0], years[1] + 1)
    grid = np.full((age_axis.size, year_axis.size), float(rate))
    return RateTable(age_axis, year_axis, {s: grid.copy() for s in SEXES})


# -- individual paths --------------------------------------------------------


@dataclass(frozen=True)
class Demographics:
    sex: str
    age: float  # years at diagnosis
    diagnosis_date: float  # fractional calendar year

    def __post_init__(self):
        if self.sex not in SEXES:
            raise ValueError(f"unknown sex {self.sex!r}")
        if not self.age >= 0:
            raise ValueError("age at diagnosis must be >= 0")


@dataclass(frozen=True)
class HazardPath:
    """Piecewise-constant population hazard along time since diagnosis.

    ``breakpoints`` includes 0 and the horizon; ``rates[j]`` applies on
    ``[breakpoints[j], breakpoints[j+1])``.
    """

    breakpoints: np.ndarray
    rates: np.ndarray
    clamped: bool = False
    cumulative: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "cumulative",
                           np.concatenate([[0.0], np.cumsum(self.rates * np.diff(self.breakpoints))]))

    @property
    def horizon(self) -> float:
        return float(self.breakpoints[-1])

    def cumulative_hazard(self, t) -> np.ndarray:
        return np.interp(t, self.breakpoints, self.cumulative)

    def rate_at(self, t, side: str = "right") -> np.ndarray:
        """Hazard at ``t``; ``side="left"`` gives the left limit."""
        if side == "right":
            idx = np.searchsorted(self.breakpoints, t, side="right") - 1
        else:
            idx = np.searchsorted(self.breakpoints, t, side="left") - 1
        return self.rates[np.clip(idx, 0, self.rates.size - 1)]


def hazard_path(table: RateTable, demo: Demographics, horizon: float) -> HazardPath:
    """Walk the Lexis diagonal from diagnosis up to ``horizon`` years."""
    if not horizon > 0:
        raise ValueError("horizon must be > 0")
    table._grid(demo.sex)
    age_int = math.floor(demo.age)
    year_int = math.floor(demo.diagnosis_date)
    next_bday = age_int + 1 - demo.age
    next_ny = year_int + 1 - demo.diagnosis_date
    t = 0.0
    breaks = [0.0]
    rates = []
    clamped = False
    while t < horizon - _MERGE_TOL:
        rate, c = table.lookup(demo.sex, age_int, year_int)
        clamped |= c
        end = min(next_bday, next_ny, horizon)
        rates.append(rate)
        breaks.append(end)
        if next_bday - end <= _MERGE_TOL:
            age_int += 1
            next_bday += 1.0
        if next_ny - end <= _MERGE_TOL:
            year_int += 1
            next_ny += 1.0
        t = end
    breaks[-1] = float(horizon)
    return HazardPath(np.asarray(breaks), np.asarray(rates), clamped)


def population_survival(path: HazardPath, t) -> float | np.ndarray:
    """``S_P(t) = exp(-int_0^t lambda_P)``, exact for the piecewise path."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(t_arr > path.horizon + _MERGE_TOL):
        raise ValueError(f"t outside [0, {path.horizon}]")
    out = np.exp(-path.cumulative_hazard(t_arr))
    return float(out) if out.ndim == 0 else out


def population_density_increment(path: HazardPath, t) -> float | np.ndarray:
    """``lambda_P(t) * S_P(t)``, i.e. ``-dS_P/dt``."""
    s = population_survival(path, t)
    out = path.rate_at(np.asarray(t, dtype=float)) * s
    return float(out) if np.ndim(out) == 0 else out


def sample_population_time(path: HazardPath, u) -> float | np.ndarray:
    """Invert ``S_P``: the time ``t`` with ``S_P(t) = u``.

    When the whole path does not accumulate ``-ln u`` of hazard, the sentinel
    ``horizon + 1`` is returned.
    """
    u_arr = np.asarray(u, dtype=float)
    if np.any(~((u_arr > 0) & (u_arr < 1))):
        raise ValueError("u must lie in (0, 1)")
    target = -np.log(u_arr)
    cum = path.cumulative
    j = np.searchsorted(cum, target, side="left")
    beyond = j >= cum.size
    jj = np.clip(j - 1, 0, path.rates.size - 1)
    rate = path.rates[jj]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(rate > 0, path.breakpoints[jj] + (target - cum[jj]) / rate, path.breakpoints[jj])
    t = np.where(j == 0, 0.0, t)
    t = np.where(beyond, path.horizon + 1.0, t)
    return float(t) if t.ndim == 0 else t


def population_on_mesh(paths: Iterable[HazardPath], mesh: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Population survival and left-limit hazard of every path on ``mesh``.

    Mesh points past a path's horizon get the path's last value (they are
    never used: the individual has left the risk set).
    """
    paths = list(paths)
    S = np.empty((len(paths), mesh.size))
    L = np.empty((len(paths), mesh.size))
    for i, p in enumerate(paths):
        tm = np.minimum(mesh, p.horizon)
        S[i] = np.exp(-np.interp(tm, p.breakpoints, p.cumulative))
        L[i] = p.rate_at(tm, side="left")
    return S, L
