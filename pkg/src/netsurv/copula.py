"""Bivariate Archimedean copulas: evaluation, partials, Kendall's tau, sampling.

Closed forms used by the compiled kernels (``theta`` is the generator
parameter):

* Independence: ``C = u v``, ``C1 = v``.
* Clayton: ``C = max(u^-t + v^-t - 1, 0)^(-1/t)``,
  ``C1 = u^(-t-1) (u^-t + v^-t - 1)^(-1/t - 1)`` (zero outside the support
  when ``t < 0``).
* Frank (``t > 0``): with ``a = expm1(-t u)``, ``b = expm1(-t v)``,
  ``d = expm1(-t)``: ``C = -log1p(a b / d) / t``, ``C1 = (a + 1) b / (d + a b)``.
  Negative parameters use the reflection ``C_{-t}(u, v) = u - C_t(u, 1 - v)``.
* Gumbel: with ``x = -ln u``, ``y = -ln v``, ``A = x^t + y^t``:
  ``C = exp(-A^(1/t))``, ``C1 = C A^(1/t - 1) x^(t - 1) / u``.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq

from netsurv import _kernels


class CopulaDomainError(ValueError):
    """Raised for parameters outside a family's domain."""


class Family(str, enum.Enum):
    INDEPENDENCE = "indep"
    CLAYTON = "clayton"
    FRANK = "frank"
    GUMBEL = "gumbel"

    @property
    def code(self) -> int:
        return _CODES[self]


_CODES = {
    Family.INDEPENDENCE: _kernels.INDEPENDENCE,
    Family.CLAYTON: _kernels.CLAYTON,
    Family.FRANK: _kernels.FRANK,
    Family.GUMBEL: _kernels.GUMBEL,
}

_ALIASES = {
    "indep": Family.INDEPENDENCE,
    "independence": Family.INDEPENDENCE,
    "pi": Family.INDEPENDENCE,
    "clayton": Family.CLAYTON,
    "frank": Family.FRANK,
    "gumbel": Family.GUMBEL,
}


def _as_family(family) -> Family:
    if isinstance(family, Family):
        return family
    try:
        return _ALIASES[str(family).strip().lower()]
    except KeyError:
        raise CopulaDomainError(f"unknown copula family {family!r}") from None


class UnitPair(NamedTuple):
    """Arguments ``(u, v)`` of a copula; scalars or broadcastable arrays."""

    u: float | np.ndarray
    v: float | np.ndarray


# -- Kendall's tau <-> theta ------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)
_GL_NODES_LO, _GL_WEIGHTS_LO = np.polynomial.legendre.leggauss(10)


def _debye_integrand(t: np.ndarray) -> np.ndarray:
    out = np.ones_like(t)
    nz = t != 0.0
    out[nz] = t[nz] / np.expm1(t[nz])
    return out


def _gauss_legendre(f, a: float, b: float, nodes, weights) -> float:
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    return half * float(np.dot(weights, f(mid + half * nodes)))


def _adaptive_gl(f, a: float, b: float, tol: float, depth: int = 0) -> float:
    fine = _gauss_legendre(f, a, b, _GL_NODES, _GL_WEIGHTS)
    coarse = _gauss_legendre(f, a, b, _GL_NODES_LO, _GL_WEIGHTS_LO)
    if abs(fine - coarse) <= tol or depth >= 30:
        return fine
    m = 0.5 * (a + b)
    return (_adaptive_gl(f, a, m, 0.5 * tol, depth + 1)
            + _adaptive_gl(f, m, b, 0.5 * tol, depth + 1))


def debye1(x: float) -> float:
    """First Debye function ``D1(x) = x^-1 * int_0^x t / (e^t - 1) dt``."""
    if x == 0.0:
        return 1.0
    return _adaptive_gl(_debye_integrand, 0.0, x, 1e-12) / x


def _frank_tau(theta: float) -> float:
    if theta == 0.0:
        return 0.0
    if theta < 0.0:
        return -_frank_tau(-theta)
    if theta < 1e-4:
        # series of the Debye form; the direct form cancels catastrophically here
        return theta / 9.0 - theta**3 / 900.0
    return 1.0 + 4.0 * (debye1(theta) - 1.0) / theta


def theta_to_tau(family, theta: float) -> float:
    """Kendall's tau of the family at generator parameter ``theta``."""
    family = _as_family(family)
    _check_theta(family, theta)
    if family is Family.INDEPENDENCE:
        return 0.0
    if family is Family.CLAYTON:
        return theta / (theta + 2.0)
    if family is Family.GUMBEL:
        return 1.0 - 1.0 / theta
    return _frank_tau(theta)


def tau_to_theta(family, tau: float) -> float:
    """Generator parameter giving Kendall's tau ``tau``.

    Frank has no closed form; the Debye relation is inverted by Brent's
    method to ``|tau(theta) - tau| <= 1e-10``.
    """
    family = _as_family(family)
    tau = float(tau)
    if family is Family.INDEPENDENCE:
        if tau != 0.0:
            raise CopulaDomainError("independence copula has tau = 0")
        return 0.0
    if tau == 0.0:
        raise CopulaDomainError(f"tau = 0 is degenerate for {family.value}; use indep for tau=0")
    if not -1.0 < tau < 1.0:
        raise CopulaDomainError(f"tau must lie in (-1, 1), got {tau}")
    if family is Family.CLAYTON:
        return 2.0 * tau / (1.0 - tau)
    if family is Family.GUMBEL:
        if tau < 0.0:
            raise CopulaDomainError("Gumbel copula only reaches tau >= 0")
        return 1.0 / (1.0 - tau)
    target = abs(tau)
    hi = 1.0
    while _frank_tau(hi) < target:
        hi *= 2.0
        if hi > 1e6:
            raise CopulaDomainError(f"tau = {tau} is out of numerical reach for Frank")
    theta = brentq(lambda t: _frank_tau(t) - target, 1e-12, hi, xtol=1e-14, rtol=1e-15)
    return math.copysign(theta, tau)


def _check_theta(family: Family, theta: float) -> None:
    if family is Family.INDEPENDENCE:
        return
    if not math.isfinite(theta):
        raise CopulaDomainError(f"non-finite theta for {family.value}")
    if family is Family.CLAYTON and (theta <= -1.0 or theta == 0.0):
        raise CopulaDomainError(f"Clayton theta must be in (-1, 0) U (0, inf), got {theta}")
    if family is Family.FRANK and theta == 0.0:
        raise CopulaDomainError("Frank theta must be non-zero")
    if family is Family.GUMBEL and theta < 1.0:
        raise CopulaDomainError(f"Gumbel theta must be >= 1, got {theta}")


# -- spec ------------------------------------------------------------------


@dataclass(frozen=True)
class CopulaSpec:
    """An Archimedean family together with its strength parameter.

    Build instances with :meth:`from_tau`, :meth:`from_theta` or
    :meth:`parse`; the constructor checks that ``theta`` and ``tau`` agree.
    """

    family: Family
    theta: float = 0.0
    tau: float = 0.0

    def __post_init__(self):
        family = _as_family(self.family)
        object.__setattr__(self, "family", family)
        if family is Family.INDEPENDENCE:
            if self.tau != 0.0:
                raise CopulaDomainError("independence copula has tau = 0")
            object.__setattr__(self, "theta", 0.0)
            return
        _check_theta(family, self.theta)
        if abs(theta_to_tau(family, self.theta) - self.tau) > 1e-10:
            raise CopulaDomainError(
                f"theta={self.theta} and tau={self.tau} disagree for {family.value}")

    @classmethod
    def independence(cls) -> "CopulaSpec":
        return cls(Family.INDEPENDENCE)

    @classmethod
    def from_tau(cls, family, tau: float) -> "CopulaSpec":
        family = _as_family(family)
        if family is Family.INDEPENDENCE:
            return cls(family, 0.0, float(tau))
        theta = tau_to_theta(family, tau)
        return cls(family, theta, theta_to_tau(family, theta))

    @classmethod
    def from_theta(cls, family, theta: float) -> "CopulaSpec":
        family = _as_family(family)
        if family is Family.INDEPENDENCE:
            return cls(family)
        return cls(family, float(theta), theta_to_tau(family, float(theta)))

    @classmethod
    def parse(cls, text: str) -> "CopulaSpec":
        """Parse ``"indep"``, ``"clayton(tau=-0.3)"``, ``"frank(theta=5)"``."""
        m = re.fullmatch(r"\s*([A-Za-z]+)\s*(?:\(\s*(tau|theta)\s*=\s*([^)]+?)\s*\))?\s*", text)
        if m is None:
            raise CopulaDomainError(f"cannot parse copula spec {text!r}")
        family = _as_family(m.group(1))
        if m.group(2) is None:
            if family is not Family.INDEPENDENCE:
                raise CopulaDomainError(f"{family.value} needs a tau= or theta= argument")
            return cls.independence()
        try:
            value = float(m.group(3))
        except ValueError:
            raise CopulaDomainError(f"bad number in copula spec {text!r}") from None
        if family is Family.INDEPENDENCE:
            if value != 0.0 and m.group(2) == "tau":
                raise CopulaDomainError("independence copula has tau = 0")
            return cls.independence()
        if m.group(2) == "tau":
            return cls.from_tau(family, value)
        return cls.from_theta(family, value)

    @property
    def label(self) -> str:
        if self.family is Family.INDEPENDENCE:
            return "indep"
        return f"{self.family.value}(tau={self.tau:.6g})"

    def __str__(self) -> str:
        return self.label

    def cdf(self, u, v):
        return copula_cdf(self, UnitPair(u, v))

    def partial(self, u, v, axis: int = 1):
        return copula_partial(self, UnitPair(u, v), axis)


# -- evaluation ------------------------------------------------------------


def _prepare(pair) -> tuple[np.ndarray, np.ndarray, tuple, bool]:
    u, v = pair
    scalar = np.ndim(u) == 0 and np.ndim(v) == 0
    u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
    if np.any(~((u >= 0.0) & (u <= 1.0))) or np.any(~((v >= 0.0) & (v <= 1.0))):
        raise CopulaDomainError("copula arguments must lie in [0, 1]")
    return np.ascontiguousarray(u.ravel()), np.ascontiguousarray(v.ravel()), u.shape, scalar


def copula_cdf(spec: CopulaSpec, pair) -> float | np.ndarray:
    """Copula distribution function ``C(u, v)``."""
    u, v, shape, scalar = _prepare(pair)
    out = np.empty_like(u)
    _kernels.copula_cdf_array(spec.family.code, spec.theta, u, v, out)
    return float(out[0]) if scalar else out.reshape(shape)


def in_support(spec: CopulaSpec, pair) -> bool | np.ndarray:
    """Whether ``(u, v)`` lies strictly inside the copula's support."""
    u, v, shape, scalar = _prepare(pair)
    inside = (u > 0.0) & (v > 0.0)
    if spec.family is Family.CLAYTON and spec.theta < 0.0:
        with np.errstate(divide="ignore"):
            inside &= u ** (-spec.theta) + v ** (-spec.theta) - 1.0 > 0.0
    return bool(inside[0]) if scalar else inside.reshape(shape)


def copula_partial(spec: CopulaSpec, pair, axis: int = 1, with_flag: bool = False):
    """Partial derivative ``dC/du`` (``axis=1``) or ``dC/dv`` (``axis=2``).

    Outside the support (negative-dependence Clayton) the value is 0; with
    ``with_flag=True`` a boolean "outside support" flag is returned too.
    """
    if axis not in (1, 2):
        raise ValueError("axis must be 1 or 2")
    u, v, shape, scalar = _prepare(pair)
    out = np.empty_like(u)
    _kernels.copula_partial_array(spec.family.code, spec.theta, u, v, axis, out)
    value = float(out[0]) if scalar else out.reshape(shape)
    if not with_flag:
        return value
    inside = in_support(spec, UnitPair(u.reshape(shape), v.reshape(shape)))
    flag = (not inside) if scalar else ~inside
    return value, flag


def conditional_inverse(spec: CopulaSpec, u, w, tol: float = 1e-12) -> np.ndarray:
    """Solve ``C1(u, v) = w`` for ``v`` (the conditional quantile of V given U=u)."""
    u = np.ascontiguousarray(np.asarray(u, dtype=float).ravel())
    w = np.ascontiguousarray(np.asarray(w, dtype=float).ravel())
    out = np.empty_like(u)
    if spec.family is Family.INDEPENDENCE:
        out[:] = w
        return out
    _kernels.conditional_inverse(spec.family.code, spec.theta, u, w, tol, out)
    return out


def sample_pairs(spec: CopulaSpec, n: int, rng_seed: int) -> np.ndarray:
    """Draw ``n`` i.i.d. pairs from the copula by conditional inversion.

    Returns an ``(n, 2)`` array of ``(u, v)`` rows.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.Generator(np.random.Philox(rng_seed))
    uw = rng.random((n, 2))
    # keep u away from 0 exactly; the open interval is what the inversion expects
    u = np.where(uw[:, 0] == 0.0, np.nextafter(0.0, 1.0), uw[:, 0])
    v = conditional_inverse(spec, u, uw[:, 1])
    return np.column_stack([u, v])
