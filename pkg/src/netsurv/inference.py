"""Log-rank-type comparison of net survival between groups.

For groups ``g`` the weighted processes ``Y_g`` (risk set) and ``N_g``
(excess counting process) are combined as

    R_g = Y_g / sum_l Y_l,
    Z_g(T) = N_g(T) - int_0^T R_g dN_.,
    Gamma_gh(T) = sum_l int_0^T (d_lg - R_g)(d_lh - R_h) W_l,

with ``W_l`` the summed squared event weights of group ``l``.  The
statistic ``Z' Gamma^+ Z`` is referred to a chi-square law with ``|G| - 1``
degrees of freedom.

Two flavours are provided: :func:`logrank_observable` builds the processes
from group-wise fits of the generalized estimator, and
:func:`logrank_oracle` uses the true coefficients carried by a simulated
cohort.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from netsurv import _kernels
from netsurv.cohort import Cohort
from netsurv.copula import CopulaSpec
from netsurv.estimator import Mesh, SolverConfig, fit_generalized, mesh_exit, prepare
from netsurv.lifetable import RateTable, population_on_mesh

_EIG_RTOL = 1e-10


class TestError(ValueError):
    """The test cannot be computed on the supplied data."""

    __test__ = False  # keep pytest from collecting this class


# -- chi-square tail -------------------------------------------------------


def _gamma_series(a: float, x: float) -> float:
    # lower regularized gamma P(a, x), convergent for x < a + 1
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(10_000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-17:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cf(a: float, x: float) -> float:
    # upper regularized gamma Q(a, x) by modified Lentz, for x >= a + 1
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def chi2_sf(x: float, df: int) -> float:
    """Upper tail ``P(X > x)`` of a chi-square law with ``df`` degrees of freedom.

    Parameters
    ----------
    x : float
        Non-negative quantile.
    df : int
        Positive number of degrees of freedom.

    Returns
    -------
    float
        Regularized upper incomplete gamma ``Q(df/2, x/2)``.
    """
    if isinstance(df, bool) or int(df) != df or df <= 0:
        raise ValueError("df must be a positive integer")
    if not x >= 0:
        raise ValueError("x must be >= 0")
    if math.isinf(x):
        return 0.0
    a = 0.5 * df
    h = 0.5 * x
    if h == 0:
        # also catches subnormal x that underflows when halved
        return 1.0
    if h < a + 1.0:
        return min(1.0, max(0.0, 1.0 - _gamma_series(a, h)))
    return min(1.0, max(0.0, _gamma_cf(a, h)))


# -- results ---------------------------------------------------------------


@dataclass(frozen=True)
class LogRankResult:
    """Outcome of one test at horizon ``horizon`` (years)."""

    groups: tuple
    Z: np.ndarray
    Gamma: np.ndarray
    statistic: float
    df: int
    p_value: float
    horizon: float
    events: dict = field(default_factory=dict)

    def rejects(self, alpha: float = 0.05) -> bool:
        return self.p_value < alpha

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "df": self.df,
            "p_value": self.p_value,
            "T": self.horizon,
            "per_group": {
                str(g): {"events": int(self.events.get(g, 0)), "Z": float(self.Z[i])}
                for i, g in enumerate(self.groups)
            },
        }


@dataclass
class GroupFits:
    """Group-wise fits of the estimator on one shared mesh."""

    mesh: Mesh
    labels: tuple
    fits: dict
    events: np.ndarray  # (G, K) observed death counts per mesh point

    def processes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(Y, dN, W)`` as ``(G, K)`` arrays.

        ``dN`` is the increment of the weighted counting process, including
        its population drift, and ``W`` the squared-weight event sum (the
        group's variance increment times ``Y**2``).
        """
        h = np.diff(self.mesh.points, prepend=0.0)
        Y = np.vstack([self.fits[g].coeffs["y_over_c"] for g in self.labels])
        dN = np.vstack([self.fits[g].coeffs["dn_over_a"] - h * self.fits[g].coeffs["b_term"]
                        for g in self.labels])
        W = np.vstack([self.fits[g].coeffs["dn_over_a2"] for g in self.labels])
        dN[:, 0] = 0.0
        W[:, 0] = 0.0
        return Y, dN, W


def _group_index(cohort: Cohort) -> tuple[tuple, dict]:
    labels = tuple(cohort.group_labels())
    if len(labels) < 2:
        raise TestError("at least two groups are required")
    members = {g: np.flatnonzero(cohort.group == g) for g in labels}
    return labels, members


def _event_counts(cohort: Cohort, mesh: Mesh, labels, members) -> np.ndarray:
    last_idx, status = mesh_exit(cohort, mesh)
    out = np.zeros((len(labels), len(mesh)))
    for j, g in enumerate(labels):
        idx = members[g]
        np.add.at(out[j], last_idx[idx], status[idx])
    return out


def group_fits(cohort: Cohort, table: RateTable, copula: CopulaSpec, mesh: Mesh, *,
               copulas: Mapping | None = None, solver: SolverConfig | None = None,
               threads: int = 1) -> GroupFits:
    """Fit every group separately on ``mesh``.

    ``copulas`` optionally maps a group label to its own hypothesized copula;
    groups not listed use ``copula``.
    """
    labels, members = _group_index(cohort)
    prep = prepare(cohort, table, mesh)
    specs = {g: (copulas or {}).get(g, copula) for g in labels}

    def one(g):
        sub = prep.subset(members[g])
        return g, fit_generalized(None, table, specs[g], mesh, solver, prepared=sub)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fits = dict(pool.map(one, labels))
    else:
        fits = dict(map(one, labels))
    return GroupFits(mesh, labels, fits, _event_counts(cohort, mesh, labels, members))


def _pinv_projected(gamma: np.ndarray) -> np.ndarray:
    G = gamma.shape[0]
    proj = np.eye(G) - np.full((G, G), 1.0 / G)
    sym = proj @ (0.5 * (gamma + gamma.T)) @ proj
    w, V = np.linalg.eigh(sym)
    top = w.max(initial=0.0)
    if not top > 0:
        raise TestError("covariance matrix vanishes")
    keep = w > _EIG_RTOL * top
    if keep.sum() < G - 1:
        raise TestError("covariance matrix is singular beyond the expected rank deficiency")
    return (V[:, keep] / w[keep]) @ V[:, keep].T


def statistic_from_processes(labels: Sequence, mesh: Mesh, Y: np.ndarray, dN: np.ndarray,
                             W: np.ndarray, events: np.ndarray, horizon: float) -> LogRankResult:
    """Assemble ``Z``, ``Gamma`` and the chi-square statistic up to ``horizon``.

    Parameters
    ----------
    labels : sequence
        Group labels, one per row of the ``(G, K)`` arrays.
    Y, dN, W : ndarray
        Weighted risk set, counting-process increments and squared-weight
        event sums on ``mesh``.
    events : ndarray
        Observed event counts per group and mesh point.
    horizon : float
        Test horizon ``T`` in years; must lie within the mesh.
    """
    if horizon > mesh.horizon + 1e-9 or horizon <= 0:
        raise TestError(f"horizon {horizon:g} outside (0, {mesh.horizon:g}]")
    stop = mesh.index_at(horizon) + 1
    Y, dN, W = Y[:, 1:stop], dN[:, 1:stop], W[:, 1:stop]
    n_events = events[:, 1:stop].sum(axis=1)
    for g, e in zip(labels, n_events):
        if e == 0:
            raise TestError(f"group {g!r} has no events before T={horizon:g}")
    total = Y.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        R = np.where(total > 0, Y / total, 0.0)
    Z = dN.sum(axis=1) - (R * dN.sum(axis=0)).sum(axis=1)
    G = len(labels)
    # H[k, g, l] = delta_gl - R_g(t_k)
    H = np.eye(G)[None, :, :] - R.T[:, :, None]
    live = W.sum(axis=0) > 0
    gamma = np.einsum("kgl,kl,khl->gh", H[live], W[:, live].T, H[live])
    pinv = _pinv_projected(gamma)
    stat = float(Z @ pinv @ Z)
    stat = max(stat, 0.0)
    df = G - 1
    return LogRankResult(tuple(labels), Z, gamma, stat, df, chi2_sf(stat, df), float(horizon),
                         {g: int(e) for g, e in zip(labels, n_events)})


def _per_horizon(fn, T):
    if np.ndim(T) == 0:
        return fn(float(T))
    return [fn(float(t)) for t in T]


def logrank_observable(cohort: Cohort, table: RateTable, copula: CopulaSpec, mesh: Mesh,
                       T: float | Sequence[float], *, copulas: Mapping | None = None,
                       solver: SolverConfig | None = None, fits: GroupFits | None = None,
                       threads: int = 1):
    """Observable test statistic from group-wise plug-in fits.

    Returns one :class:`LogRankResult`, or a list when ``T`` is a sequence
    (all horizons share one set of fits).
    """
    if fits is None:
        fits = group_fits(cohort, table, copula, mesh, copulas=copulas, solver=solver,
                          threads=threads)
    Y, dN, W = fits.processes()
    return _per_horizon(
        lambda t: statistic_from_processes(fits.labels, fits.mesh, Y, dN, W, fits.events, t), T)


def oracle_processes(cohort: Cohort, mesh: Mesh):
    """``(labels, Y, dN, W, events)`` built from the latent true coefficients."""
    if cohort.latent is None:
        raise TestError("cohort carries no latent truth (simulation only)")
    labels, members = _group_index(cohort)
    pts = mesh.points
    latent = cohort.latent
    last_idx, status = mesh_exit(cohort, mesh)
    S, L = population_on_mesh(latent.paths, pts)
    code = {g: j for j, g in enumerate(labels)}
    group = np.array([code[g] for g in cohort.group], dtype=np.int64)
    shape = (len(labels), pts.size)
    Y, dN, W, events = (np.zeros(shape) for _ in range(4))
    _kernels.oracle_kernel(latent.copula.family.code, float(latent.copula.theta), pts,
                           last_idx, status, group, 1.0 / np.asarray(latent.excess_mean, float),
                           S, L, Y, dN, W, events)
    return labels, Y, dN, W, events


def logrank_oracle(cohort: Cohort, mesh: Mesh, T: float | Sequence[float]):
    """Test statistic with the true coefficients of a simulated cohort."""
    labels, Y, dN, W, events = oracle_processes(cohort, mesh)
    return _per_horizon(lambda t: statistic_from_processes(labels, mesh, Y, dN, W, events, t), T)
