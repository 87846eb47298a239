"""Compiled scalar kernels shared by the copula engine and the estimator.

Family codes: 0 independence, 1 Clayton, 2 Frank, 3 Gumbel.  All copulas
handled here are exchangeable, so the second partial derivative is the first
one with swapped arguments.
"""

import math

import numpy as np
from numba import njit

INDEPENDENCE = 0
CLAYTON = 1
FRANK = 2
GUMBEL = 3


@njit(cache=True)
def _frank_pos(theta, u, v):
    # theta > 0 only: expm1(-theta * x) stays in (-1, 0], no overflow.
    a = math.expm1(-theta * u)
    b = math.expm1(-theta * v)
    d = math.expm1(-theta)
    ab = a * b
    denom = d + ab
    c = -math.log1p(ab / d) / theta
    c1 = (a + 1.0) * b / denom
    c2 = (b + 1.0) * a / denom
    return c, c1, c2


@njit(cache=True)
def copula_triple(fam, theta, u, v):
    """Return ``(C(u, v), dC/du, dC/dv)``."""
    if u <= 0.0 or v <= 0.0:
        # C vanishes on the lower edges; partials follow their limits.
        if fam == INDEPENDENCE:
            return 0.0, max(v, 0.0), max(u, 0.0)
        if fam == CLAYTON and theta < 0.0:
            return 0.0, 0.0, 0.0
        c1 = 0.0
        c2 = 0.0
        if u <= 0.0 and v > 0.0:
            c1 = 1.0 if fam != FRANK else (math.expm1(-theta * v) / math.expm1(-theta))
        if v <= 0.0 and u > 0.0:
            c2 = 1.0 if fam != FRANK else (math.expm1(-theta * u) / math.expm1(-theta))
        return 0.0, c1, c2

    if fam == INDEPENDENCE:
        return u * v, v, u

    if fam == CLAYTON:
        up = u ** (-theta)
        vp = v ** (-theta)
        inner = up + vp - 1.0
        if inner <= 0.0:
            # outside the support of negative-dependence Clayton
            return 0.0, 0.0, 0.0
        c = inner ** (-1.0 / theta)
        common = c / inner
        return c, common * up / u, common * vp / v

    if fam == FRANK:
        if theta > 0.0:
            return _frank_pos(theta, u, v)
        # C_{-t}(u, v) = u - C_t(u, 1 - v)
        c, c1, c2 = _frank_pos(-theta, u, 1.0 - v)
        return u - c, 1.0 - c1, c2

    # Gumbel
    x = -math.log(u)
    y = -math.log(v)
    if x == 0.0 or y == 0.0:
        # one margin at 1
        if x == 0.0 and y == 0.0:
            return 1.0, 1.0 if theta == 1.0 else 0.0, 1.0 if theta == 1.0 else 0.0
        if x == 0.0:
            return v, (v if theta == 1.0 else 0.0), 1.0
        return u, 1.0, (u if theta == 1.0 else 0.0)
    xt = x ** theta
    yt = y ** theta
    a = xt + yt
    s = a ** (1.0 / theta)
    c = math.exp(-s)
    common = c * s / a
    return c, common * xt / (x * u), common * yt / (y * v)


@njit(cache=True)
def copula_cdf_array(fam, theta, u, v, out):
    for i in range(u.shape[0]):
        out[i] = copula_triple(fam, theta, u[i], v[i])[0]


@njit(cache=True)
def copula_partial_array(fam, theta, u, v, axis, out):
    for i in range(u.shape[0]):
        t = copula_triple(fam, theta, u[i], v[i])
        out[i] = t[1] if axis == 1 else t[2]


@njit(cache=True)
def conditional_inverse(fam, theta, u, w, tol, out):
    """Solve ``dC/du(u, v) = w`` for ``v`` by bisection, elementwise.

    The upper end of the final bracket is returned, so that ``dC/du >= w``
    holds at the returned point (which keeps Clayton draws inside the
    support frontier).
    """
    for i in range(u.shape[0]):
        lo = 0.0
        hi = 1.0
        ui = u[i]
        wi = w[i]
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if copula_triple(fam, theta, ui, mid)[1] < wi:
                lo = mid
            else:
                hi = mid
        out[i] = hi


@njit(cache=True)
def _v_transform(fam, theta, v):
    # the part of the copula evaluation that depends on v only
    if fam == CLAYTON:
        return v ** (-theta)
    if fam == FRANK:
        if theta > 0.0:
            return math.expm1(-theta * v)
        return math.expm1(theta * (1.0 - v))
    return 0.0


@njit(cache=True)
def _u_transform(fam, theta, u):
    if fam == CLAYTON:
        return u ** (-theta)
    if fam == FRANK:
        return math.expm1(-abs(theta) * u)
    return 0.0


@njit(cache=True)
def _triple_pre(fam, theta, u, tu, v, tv):
    """``copula_triple`` with the transforms of ``u`` and ``v`` precomputed."""
    if u <= 0.0 or u >= 1.0 or v <= 0.0 or v >= 1.0 or fam == GUMBEL:
        return copula_triple(fam, theta, u, v)
    if fam == INDEPENDENCE:
        return u * v, v, u
    if fam == CLAYTON:
        inner = tu + tv - 1.0
        if inner <= 0.0:
            return 0.0, 0.0, 0.0
        c = inner ** (-1.0 / theta)
        common = c / inner
        return c, common * tu / u, common * tv / v
    # Frank, positive parameter after reflection
    t = abs(theta)
    d = math.expm1(-t)
    ab = tu * tv
    denom = d + ab
    c = -math.log1p(ab / d) / t
    c1 = (tu + 1.0) * tv / denom
    c2 = (tv + 1.0) * tu / denom
    if theta > 0.0:
        return c, c1, c2
    return u - c, 1.0 - c1, c2


@njit(cache=True)
def _step_map(fam, theta, lam_prev, x, k, start, stop, ev_stop, status, S, L,
              tv, h, eps, clamp_out):
    """Evaluate the implicit-Euler update map at trial value ``x``.

    Individuals ``start:stop`` are at risk at step ``k``; those in
    ``start:ev_stop`` leave the risk set at this step (death if status 1).
    ``tv`` holds the v-transforms of ``S[:, k]``.
    Returns the mapped value and the four aggregated sums.
    """
    u = math.exp(-x)
    if u > 1.0:
        u = 1.0
    if u < 1e-300:
        u = 1e-300
    tu = _u_transform(fam, theta, u)
    dn_a = 0.0
    dn_a2 = 0.0
    y_c = 0.0
    b_ac = 0.0
    floors = 0
    for j in range(start, stop):
        v = S[j, k]
        c, c1, c2 = _triple_pre(fam, theta, u, tu, v, tv[j])
        a = c1
        cc = c / u
        if a < eps:
            a = eps
            floors += 1
        if cc < eps:
            cc = eps
            floors += 1
        b = c2 * L[j, k] * v / u
        if j < ev_stop and status[j] == 1:
            dn_a += 1.0 / a
            dn_a2 += 1.0 / (a * a)
        y_c += 1.0 / cc
        b_ac += b / (a * cc)
    clamp_out[0] = floors
    val = lam_prev + (dn_a - h * b_ac) / y_c
    return val, dn_a, dn_a2, y_c, b_ac


@njit(cache=True, nogil=True)
def generalized_kernel(fam, theta, mesh, last_idx, status, S, L, eps, tol,
                       max_iter, implicit, cum, var, dn_a_out, dn_a2_out,
                       y_c_out, b_ac_out, info):
    """Implicit-Euler solve of the generalized estimator over ``mesh``.

    Rows of ``S``/``L`` (population survival and hazard on the mesh) are
    sorted by ``last_idx`` ascending.  ``info`` receives, in order: floor
    hits, total map evaluations, max evaluations at one step, bisection
    fallbacks, steps with survival above one, truncation index (-1 if none),
    failing index (-1 if none).
    ``var`` is filled with the plug-in variance increments accumulated.
    """
    n = last_idx.shape[0]
    K = mesh.shape[0]
    cum[0] = 0.0
    var[0] = 0.0
    start = 0
    drift_rate = 0.0
    fl = np.zeros(1, dtype=np.int64)
    tv = np.zeros(n)
    info[5] = -1
    info[6] = -1
    fail_resid = 0.0
    for k in range(1, K):
        h = mesh[k] - mesh[k - 1]
        while start < n and last_idx[start] < k:
            start += 1
        if start >= n:
            info[5] = k
            for kk in range(k, K):
                cum[kk] = cum[k - 1]
                var[kk] = var[k - 1]
            break
        ev_stop = start
        while ev_stop < n and last_idx[ev_stop] == k:
            ev_stop += 1
        lam_prev = cum[k - 1]
        for j in range(start, n):
            tv[j] = _v_transform(fam, theta, S[j, k])

        if not implicit:
            val, dn_a, dn_a2, y_c, b_ac = _step_map(
                fam, theta, lam_prev, lam_prev, k, start, n, ev_stop, status,
                S, L, tv, h, eps, fl)
            info[0] += fl[0]
            info[1] += 1
            if info[2] < 1:
                info[2] = 1
        else:
            x = lam_prev + drift_rate * h
            fx, dn_a, dn_a2, y_c, b_ac = _step_map(
                fam, theta, lam_prev, x, k, start, n, ev_stop, status, S, L, tv,
                h, eps, fl)
            evals = 1
            resid = abs(fx - x)
            omega = 1.0
            converged = resid <= tol
            val = fx
            while not converged and evals < max_iter:
                xn = x + omega * (fx - x)
                fxn, dn_a, dn_a2, y_c, b_ac = _step_map(
                    fam, theta, lam_prev, xn, k, start, n, ev_stop, status,
                    S, L, tv, h, eps, fl)
                evals += 1
                rn = abs(fxn - xn)
                if rn > resid and omega > 1e-3:
                    omega *= 0.5
                    continue
                x = xn
                fx = fxn
                resid = rn
                val = fx
                converged = resid <= tol
            if not converged:
                # bisection on x -> g(x) - x over a widening bracket
                lo = lam_prev - 10.0 * h
                hi = lam_prev + 1.0 + 10.0 * h
                flo = _step_map(fam, theta, lam_prev, lo, k, start, n,
                                ev_stop, status, S, L, tv, h, eps, fl)[0] - lo
                fhi = _step_map(fam, theta, lam_prev, hi, k, start, n,
                                ev_stop, status, S, L, tv, h, eps, fl)[0] - hi
                evals += 2
                widen = 0
                while flo * fhi > 0.0 and widen < 60:
                    width = hi - lo
                    if flo > 0.0:
                        lo = hi
                        flo = fhi
                        hi = hi + 2.0 * width
                        fhi = _step_map(fam, theta, lam_prev, hi, k, start, n,
                                        ev_stop, status, S, L, tv, h, eps,
                                        fl)[0] - hi
                    else:
                        hi = lo
                        fhi = flo
                        lo = lo - 2.0 * width
                        flo = _step_map(fam, theta, lam_prev, lo, k, start, n,
                                        ev_stop, status, S, L, tv, h, eps,
                                        fl)[0] - lo
                    evals += 1
                    widen += 1
                if flo * fhi > 0.0:
                    info[6] = k
                    fail_resid = min(abs(flo), abs(fhi))
                    break
                while hi - lo > tol:
                    mid = 0.5 * (lo + hi)
                    fm = _step_map(fam, theta, lam_prev, mid, k, start, n,
                                   ev_stop, status, S, L, tv, h, eps, fl)[0] - mid
                    evals += 1
                    if fm == 0.0:
                        lo = mid
                        hi = mid
                        break
                    if (fm > 0.0) == (flo > 0.0):
                        lo = mid
                        flo = fm
                    else:
                        hi = mid
                x = 0.5 * (lo + hi)
                val, dn_a, dn_a2, y_c, b_ac = _step_map(
                    fam, theta, lam_prev, x, k, start, n, ev_stop, status, S,
                    L, tv, h, eps, fl)
                evals += 1
                info[3] += 1
            info[0] += fl[0]
            info[1] += evals
            if evals > info[2]:
                info[2] = evals
        if not (abs(val) < 1e6):
            # diverged (e.g. coefficients pinned at the floor)
            info[6] = k
            fail_resid = abs(val)
            break
        cum[k] = val
        if val < 0.0:
            info[4] += 1
        var[k] = var[k - 1] + dn_a2 / (y_c * y_c)
        dn_a_out[k] = dn_a
        dn_a2_out[k] = dn_a2
        y_c_out[k] = y_c
        b_ac_out[k] = b_ac
        drift_rate = -b_ac / y_c
    return fail_resid


@njit(cache=True, nogil=True)
def oracle_kernel(fam, theta, mesh, last_idx, status, group, inv_mean, S, L,
                  Y, dN, W, events):
    """Group sums of the weighted processes built from the true coefficients.

    The excess survival of patient ``i`` is ``exp(-t * inv_mean[i])``.
    ``Y``, ``dN``, ``W`` and ``events`` are ``(G, K)`` and accumulated in place.
    """
    n = last_idx.shape[0]
    for i in range(n):
        g = group[i]
        for k in range(1, last_idx[i] + 1):
            h = mesh[k] - mesh[k - 1]
            u = math.exp(-mesh[k] * inv_mean[i])
            v = S[i, k]
            c, c1, c2 = copula_triple(fam, theta, u, v)
            cc = c / u
            b = c2 * L[i, k] * v / u
            Y[g, k] += 1.0 / cc
            dN[g, k] -= h * b / (c1 * cc)
            if k == last_idx[i] and status[i] == 1:
                dN[g, k] += 1.0 / c1
                W[g, k] += 1.0 / (c1 * c1)
                events[g, k] += 1.0
