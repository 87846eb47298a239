"""Net survival estimation under a hypothesized (E, P) survival copula.

Two fitters share one discretisation:

* :func:`fit_pohar_perme` - the independence estimator, closed form per
  step (no plug-in), computed with plain array arithmetic.
* :func:`fit_generalized` - any copula; at each mesh point the coefficients
  depend on the current survival estimate, so the implicit-Euler update is a
  scalar fixed-point problem solved by the compiled kernel.

Counting-process conventions: ``Y_i(t_k) = 1{T_i >= t_k}`` and
``dN_i(t_k) = 1{T_i = t_k, status_i = 1}``.  The population hazard used on
the step ``(t_{k-1}, t_k]`` is its left limit at ``t_k``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from netsurv import _kernels
from netsurv.cohort import Cohort, CohortError
from netsurv.copula import CopulaSpec
from netsurv.lifetable import DAYS_PER_YEAR, RateTable, population_on_mesh

log = logging.getLogger(__name__)

Z975 = 1.959963984540054
_MESH_TOL = 1e-12


class BootstrapError(RuntimeError):
    """Too many bootstrap refits failed."""


class SolverError(RuntimeError):
    """The per-step nonlinear solve failed."""

    def __init__(self, time: float, residual: float):
        super().__init__(f"implicit step did not converge at t={time:.10g} (residual {residual:.3g})")
        self.time = time
        self.residual = residual


@dataclass(frozen=True)
class Mesh:
    points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        if p.ndim != 1 or p.size < 2 or p[0] != 0.0 or np.any(np.diff(p) <= 0):
            raise ValueError("mesh must be strictly increasing from 0 with >= 2 points")
        object.__setattr__(self, "points", p)

    def __len__(self) -> int:
        return self.points.size

    @property
    def horizon(self) -> float:
        return float(self.points[-1])

    def index_at(self, t: float) -> int:
        """Index of the last mesh point ``<= t`` (with a 1e-12 tolerance)."""
        return int(np.searchsorted(self.points, t + _MESH_TOL, side="right") - 1)


def build_mesh(cohort: Cohort, horizon: float | None = None, step: float = 1.0) -> Mesh:
    """Regular grid of ``step`` days on ``[0, horizon]`` merged with event times.

    Grid points are ``k * step`` below the horizon, plus the horizon itself.
    Event times within 1e-12 years of an existing point are merged into it.
    """
    if len(cohort) == 0:
        raise CohortError("empty cohort")
    if not step > 0:
        raise ValueError("step must be > 0")
    if horizon is None:
        horizon = float(cohort.time.max())
    if not horizon > 0:
        raise ValueError("horizon must be > 0")
    h = step / DAYS_PER_YEAR
    n_grid = int(np.floor(horizon / h - 1e-9)) + 1
    grid = np.arange(n_grid) * h
    events = np.unique(cohort.time[(cohort.status == 1) & (cohort.time <= horizon + _MESH_TOL)])
    pts = np.concatenate([grid, events, [horizon]])
    pts.sort()
    keep = np.concatenate([[True], np.diff(pts) > _MESH_TOL])
    pts = pts[keep]
    return Mesh(pts)


@dataclass(frozen=True)
class SolverConfig:
    eps: float = 1e-10
    tol: float = 1e-12
    max_iter: int = 100
    implicit: bool = True


@dataclass
class NetSurvivalFit:
    """Estimated excess cumulative hazard, survival and variance on a mesh.

    ``coeffs`` holds per-point aggregates: ``dn_over_a`` (sum dN_i/a_i),
    ``dn_over_a2`` (sum dN_i/a_i^2), ``y_over_c`` (sum Y_i/c_i) and
    ``b_term`` (sum b_i Y_i/(a_i c_i)).
    """

    mesh: Mesh
    cum_hazard: np.ndarray
    variance: np.ndarray
    coeffs: dict
    copula: CopulaSpec
    diagnostics: dict = field(default_factory=dict)

    @property
    def survival(self) -> np.ndarray:
        return np.exp(-self.cum_hazard)

    @property
    def std_error(self) -> np.ndarray:
        return np.sqrt(self.variance)

    @property
    def truncated_at(self) -> float | None:
        return self.diagnostics.get("truncated_at")

    def confidence_band(self, z: float = Z975) -> tuple[np.ndarray, np.ndarray]:
        """Log-scale pointwise band ``exp(-Lambda -/+ z sigma)``."""
        se = self.std_error
        return np.exp(-self.cum_hazard - z * se), np.exp(-self.cum_hazard + z * se)

    def at(self, t: float) -> tuple[float, float]:
        """``(Lambda, sigma^2)`` at time ``t`` (step-function lookup)."""
        k = self.mesh.index_at(t)
        if k < 0:
            raise ValueError("t < 0")
        return float(self.cum_hazard[k]), float(self.variance[k])

    def survival_at(self, t: float) -> float:
        return float(np.exp(-self.at(t)[0]))

    def excess_increments(self) -> np.ndarray:
        """``sum_i d N_E,i`` per mesh point (jump minus drift part)."""
        h = np.diff(self.mesh.points, prepend=0.0)
        return self.coeffs["dn_over_a"] - h * self.coeffs["b_term"]


@dataclass
class PreparedCohort:
    """Cohort arrays mapped onto a mesh, rows sorted by exit index."""

    mesh: Mesh
    last_idx: np.ndarray
    status: np.ndarray
    S: np.ndarray
    L: np.ndarray
    order: np.ndarray

    def subset(self, idx) -> "PreparedCohort":
        """Rows ``idx`` given in original cohort order (repeats allowed)."""
        pos = np.empty_like(self.order)
        pos[self.order] = np.arange(self.order.size)
        rows = pos[np.asarray(idx)]
        rows = rows[np.argsort(self.last_idx[rows], kind="stable")]
        return PreparedCohort(self.mesh, self.last_idx[rows], self.status[rows],
                              self.S[rows], self.L[rows], self.order[rows])


def mesh_exit(cohort: Cohort, mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Mesh index at which each patient leaves the risk set, and the status
    used there (events past the mesh horizon count as censored)."""
    if len(cohort) == 0:
        raise CohortError("empty cohort")
    pts = mesh.points
    last_idx = np.searchsorted(pts, cohort.time + _MESH_TOL, side="right") - 1
    events = cohort.status == 1
    on_mesh = np.abs(pts[np.clip(last_idx, 0, pts.size - 1)] - cohort.time) <= 1e-9
    inside = cohort.time <= mesh.horizon + _MESH_TOL
    if np.any(events & inside & ~on_mesh):
        raise ValueError("mesh does not contain every event time")
    status = np.where(inside, cohort.status, 0).astype(np.int64)
    return last_idx.astype(np.int64), status


def prepare(cohort: Cohort, table: RateTable, mesh: Mesh) -> PreparedCohort:
    last_idx, status = mesh_exit(cohort, mesh)
    pts = mesh.points
    paths = cohort.hazard_paths(table, max(mesh.horizon, float(cohort.time.max())))
    S, L = population_on_mesh(paths, pts)
    order = np.argsort(last_idx, kind="stable")
    return PreparedCohort(mesh, last_idx[order], status[order],
                          np.ascontiguousarray(S[order]), np.ascontiguousarray(L[order]), order)


# -- independence (no plug-in) ---------------------------------------------


def fit_pohar_perme(cohort: Cohort, table: RateTable, mesh: Mesh, *, prepared: PreparedCohort | None = None) -> NetSurvivalFit:
    """Independence estimator with its unbiased variance.

    ``dL = [sum dN_i/S_Pi - h sum lambda_Pi Y_i/S_Pi] / sum Y_i/S_Pi`` and
    ``dsigma^2 = sum dN_i/S_Pi^2 / (sum Y_i/S_Pi)^2``.
    """
    prep = prepared if prepared is not None else prepare(cohort, table, mesh)
    pts = mesh.points
    K = pts.size
    k = np.arange(K)
    at_risk = prep.last_idx[:, None] >= k[None, :]
    dies = (prep.last_idx[:, None] == k[None, :]) & (prep.status[:, None] == 1)
    inv_s = 1.0 / prep.S
    y_c = np.where(at_risk, inv_s, 0.0).sum(axis=0)
    dn_a = np.where(dies, inv_s, 0.0).sum(axis=0)
    dn_a2 = np.where(dies, inv_s**2, 0.0).sum(axis=0)
    b_term = np.where(at_risk, prep.L * inv_s, 0.0).sum(axis=0)
    h = np.diff(pts, prepend=0.0)
    dn_a[0] = dn_a2[0] = b_term[0] = 0.0
    y_c[0] = 0.0 if K == 0 else y_c[0]
    alive = y_c > 0
    alive[0] = True
    with np.errstate(divide="ignore", invalid="ignore"):
        dlam = np.where(alive, (dn_a - h * b_term) / y_c, 0.0)
        dvar = np.where(alive, dn_a2 / y_c**2, 0.0)
    dlam[0] = dvar[0] = 0.0
    trunc = None
    dead = np.flatnonzero(~alive)
    if dead.size:
        trunc = float(pts[dead[0] - 1])
        dlam[dead[0]:] = 0.0
        dvar[dead[0]:] = 0.0
    cum = np.cumsum(dlam)
    var = np.cumsum(dvar)
    return NetSurvivalFit(
        mesh, cum, var,
        {"dn_over_a": dn_a, "dn_over_a2": dn_a2, "y_over_c": y_c, "b_term": b_term},
        CopulaSpec.independence(),
        {"truncated_at": trunc, "floor_hits": 0, "method": "pohar-perme"},
    )


# -- generalized (plug-in, implicit Euler) ---------------------------------


def fit_generalized(cohort: Cohort, table: RateTable, copula: CopulaSpec, mesh: Mesh,
                    solver: SolverConfig | None = None, *,
                    prepared: PreparedCohort | None = None) -> NetSurvivalFit:
    """Generalized estimator with the plug-in variance.

    At mesh point ``t_k`` with step ``h`` the kernel solves
    ``L = L_{k-1} + [sum dN_i/a_i(L) - h sum b_i(L) Y_i/(a_i(L) c_i(L))] / sum Y_i/c_i(L)``
    where the coefficients are evaluated at ``S_E = exp(-L)``:
    ``a_i = C1(S_E, S_Pi)``, ``c_i = C(S_E, S_Pi)/S_E`` and
    ``b_i = C2(S_E, S_Pi) lambda_Pi S_Pi / S_E``.  ``a_i`` and ``c_i`` are
    floored at ``solver.eps``.
    """
    solver = solver or SolverConfig()
    prep = prepared if prepared is not None else prepare(cohort, table, mesh)
    return _fit_prepared(prep, copula, solver)


def _fit_prepared(prep: PreparedCohort, copula: CopulaSpec, solver: SolverConfig) -> NetSurvivalFit:
    pts = prep.mesh.points
    K = pts.size
    cum = np.zeros(K)
    var = np.zeros(K)
    dn_a = np.zeros(K)
    dn_a2 = np.zeros(K)
    y_c = np.zeros(K)
    b_ac = np.zeros(K)
    info = np.zeros(7, dtype=np.int64)
    resid = _kernels.generalized_kernel(
        copula.family.code, float(copula.theta), pts, prep.last_idx, prep.status,
        prep.S, prep.L, solver.eps, solver.tol, solver.max_iter, solver.implicit,
        cum, var, dn_a, dn_a2, y_c, b_ac, info)
    if info[6] >= 0:
        raise SolverError(float(pts[info[6]]), float(resid))
    trunc = None if info[5] < 0 else float(pts[info[5] - 1])
    diagnostics = {
        "truncated_at": trunc,
        "floor_hits": int(info[0]),
        "map_evaluations": int(info[1]),
        "max_evaluations_per_step": int(info[2]),
        "bisection_fallbacks": int(info[3]),
        "survival_above_one": int(info[4]),
        "method": "implicit" if solver.implicit else "explicit",
    }
    if info[4]:
        log.debug("estimated survival exceeded 1 at %d mesh points", info[4])
    return NetSurvivalFit(
        prep.mesh, cum, var,
        {"dn_over_a": dn_a, "dn_over_a2": dn_a2, "y_over_c": y_c, "b_term": b_ac},
        copula, diagnostics,
    )


def fit(cohort: Cohort, table: RateTable, copula: CopulaSpec, mesh: Mesh,
        solver: SolverConfig | None = None, **kw) -> NetSurvivalFit:
    """Dispatch to the generalized fitter (independence included)."""
    return fit_generalized(cohort, table, copula, mesh, solver, **kw)


# -- bootstrap -------------------------------------------------------------


def bootstrap_se(cohort: Cohort, table: RateTable, copula: CopulaSpec, mesh: Mesh,
                 reps: int = 200, seed: int = 0, *,
                 solver: SolverConfig | None = None,
                 resampler: Callable[[np.random.Generator, int], np.ndarray] | None = None,
                 return_fits: bool = False):
    """Pointwise bootstrap standard error of the cumulative excess hazard.

    Patients are resampled with replacement; the standard error is the
    population standard deviation of the refitted curves.  Resamples whose
    fit fails are skipped; more than 10% failures raises.
    """
    if reps < 2:
        raise ValueError("reps must be >= 2")
    solver = solver or SolverConfig()
    prep = prepare(cohort, table, mesh)
    n = len(cohort)
    rng = np.random.Generator(np.random.Philox(seed))
    draw = resampler or (lambda g, m: g.integers(0, m, size=m))
    curves = []
    failures = 0
    for _ in range(reps):
        idx = draw(rng, n)
        try:
            curves.append(_fit_prepared(prep.subset(idx), copula, solver).cum_hazard)
        except SolverError:
            failures += 1
    if failures > 0.1 * reps:
        raise BootstrapError(f"{failures} of {reps} bootstrap fits failed")
    curves = np.asarray(curves)
    se = curves.std(axis=0)
    if return_fits:
        return se, curves, failures
    return se
