"""Jitted per-observation kernels for the bivariate families.

Family kinds are small integers (see ``KIND_CODES`` in :mod:`pair_copulas`).
Gaussian and Student-t kernels operate on precomputed quantile scores so
that callers can cache them across parameter moves that leave the scores
unchanged.  Clayton and Gumbel kernels take the uniforms directly plus a
rotation in degrees.
"""

import math

import numba
import numpy as np

from ._special import (
    norm_cdf_scalar,
    norm_ppf_scalar,
    t_cdf_scalar,
    t_lbeta,
    t_ppf_scalar,
)

EPS = 1e-10

INDEP, GAUSS, STUDENT, CLAYTON, GUMBEL = 0, 1, 2, 3, 4


@numba.njit(cache=True)
def clip01(u):
    if u < EPS:
        return EPS
    if u > 1.0 - EPS:
        return 1.0 - EPS
    return u


@numba.njit(cache=True)
def _logaddexp(a, b):
    m = max(a, b)
    return m + math.log(math.exp(a - m) + math.exp(b - m))


# -- Clayton, rotation 0, theta > 0 ------------------------------------------

@numba.njit(cache=True)
def _clayton_logsum(theta, lu, lv):
    # log(u^-theta + v^-theta - 1)
    a = -theta * lu
    b = -theta * lv
    m = max(a, b)
    if m < 30.0:
        return math.log1p(math.expm1(a) + math.expm1(b))
    return m + math.log(math.exp(a - m) + math.exp(b - m) - math.exp(-m))


@numba.njit(cache=True)
def _clayton_logc0(theta, u, v):
    lu = math.log(u)
    lv = math.log(v)
    s = _clayton_logsum(theta, lu, lv)
    return math.log1p(theta) - (1.0 + theta) * (lu + lv) - (1.0 / theta + 2.0) * s


@numba.njit(cache=True)
def _clayton_h0(theta, u, v):
    lu = math.log(u)
    lv = math.log(v)
    s = _clayton_logsum(theta, lu, lv)
    return math.exp(-(theta + 1.0) * lv - (1.0 / theta + 1.0) * s)


@numba.njit(cache=True)
def _clayton_hinv0(theta, p, v):
    beta = -theta / (theta + 1.0) * math.log(p)
    log_e = math.log(math.expm1(beta))
    alpha = -theta * math.log(v)
    log_s = _logaddexp(alpha + log_e, 0.0)
    return math.exp(-log_s / theta)


# -- Gumbel, rotation 0, theta >= 1 ------------------------------------------

@numba.njit(cache=True)
def _gumbel_logc0(theta, u, v):
    x = -math.log(u)
    y = -math.log(v)
    lx = math.log(x)
    ly = math.log(y)
    la = _logaddexp(theta * lx, theta * ly)
    at = math.exp(la / theta)
    return (-at + x + y + (theta - 1.0) * (lx + ly) + (1.0 / theta - 2.0) * la
            + math.log(at + theta - 1.0))


@numba.njit(cache=True)
def _gumbel_h0(theta, u, v):
    x = -math.log(u)
    y = -math.log(v)
    ly = math.log(y)
    la = _logaddexp(theta * math.log(x), theta * ly)
    at = math.exp(la / theta)
    return math.exp(-at + (1.0 / theta - 1.0) * la + (theta - 1.0) * ly + y)


@numba.njit(cache=True)
def _gumbel_hinv0(theta, p, v):
    # Newton on u safeguarded by a bisection bracket; dh/du is the density
    lo = 0.0
    hi = 1.0
    u = p
    dx_old = 1.0
    for it in range(200):
        uc = min(max(u, 1e-300), 1.0 - 1e-16)
        f = _gumbel_h0(theta, uc, v) - p
        if abs(f) <= 1e-15:
            return u
        if f > 0.0:
            hi = u
        else:
            lo = u
        if hi - lo <= 4e-16:
            return 0.5 * (lo + hi)
        dens = math.exp(_gumbel_logc0(theta, uc, v))
        step = f / dens
        u_new = u - step
        if (not math.isfinite(u_new) or not (lo < u_new < hi)
                or abs(step) > 0.5 * dx_old):
            u_new = 0.5 * (lo + hi)
        dx_old = abs(u_new - u)
        u = u_new
    return math.nan


# -- dispatch for the one-parameter Archimedean kinds ------------------------

@numba.njit(cache=True)
def _arch_logc0(kind, theta, u, v):
    if kind == CLAYTON:
        if theta < 1e-12:
            return 0.0
        return _clayton_logc0(theta, u, v)
    if theta - 1.0 < 1e-12:
        return 0.0
    return _gumbel_logc0(theta, u, v)


@numba.njit(cache=True)
def _arch_h0(kind, theta, u, v):
    if kind == CLAYTON:
        if theta < 1e-12:
            return u
        return _clayton_h0(theta, u, v)
    if theta - 1.0 < 1e-12:
        return u
    return _gumbel_h0(theta, u, v)


@numba.njit(cache=True)
def _arch_hinv0(kind, theta, p, v):
    if kind == CLAYTON:
        if theta < 1e-12:
            return p
        return _clayton_hinv0(theta, p, v)
    if theta - 1.0 < 1e-12:
        return p
    return _gumbel_hinv0(theta, p, v)


@numba.njit(cache=True)
def arch_logc(kind, rot, theta, u1, u2):
    a = 1.0 - u1 if (rot == 90 or rot == 180) else u1
    b = 1.0 - u2 if (rot == 180 or rot == 270) else u2
    return _arch_logc0(kind, theta, clip01(a), clip01(b))


@numba.njit(cache=True)
def arch_h_second(kind, rot, theta, u1, u2):
    """Conditional cdf of the first argument given the second."""
    if rot == 0:
        r = _arch_h0(kind, theta, u1, u2)
    elif rot == 90:
        r = 1.0 - _arch_h0(kind, theta, clip01(1.0 - u1), u2)
    elif rot == 180:
        r = 1.0 - _arch_h0(kind, theta, clip01(1.0 - u1), clip01(1.0 - u2))
    else:
        r = _arch_h0(kind, theta, u1, clip01(1.0 - u2))
    return clip01(r)


@numba.njit(cache=True)
def arch_h_first(kind, rot, theta, u1, u2):
    """Conditional cdf of the second argument given the first."""
    if rot == 0:
        r = _arch_h0(kind, theta, u2, u1)
    elif rot == 90:
        r = _arch_h0(kind, theta, u2, clip01(1.0 - u1))
    elif rot == 180:
        r = 1.0 - _arch_h0(kind, theta, clip01(1.0 - u2), clip01(1.0 - u1))
    else:
        r = 1.0 - _arch_h0(kind, theta, clip01(1.0 - u2), u1)
    return clip01(r)


@numba.njit(cache=True)
def arch_hinv_second(kind, rot, theta, p, u2):
    if rot == 0:
        r = _arch_hinv0(kind, theta, p, u2)
    elif rot == 90:
        r = 1.0 - _arch_hinv0(kind, theta, 1.0 - p, u2)
    elif rot == 180:
        r = 1.0 - _arch_hinv0(kind, theta, 1.0 - p, clip01(1.0 - u2))
    else:
        r = _arch_hinv0(kind, theta, p, clip01(1.0 - u2))
    return r


@numba.njit(cache=True)
def arch_hinv_first(kind, rot, theta, p, u1):
    if rot == 0:
        r = _arch_hinv0(kind, theta, p, u1)
    elif rot == 90:
        r = _arch_hinv0(kind, theta, p, clip01(1.0 - u1))
    elif rot == 180:
        r = 1.0 - _arch_hinv0(kind, theta, 1.0 - p, clip01(1.0 - u1))
    else:
        r = 1.0 - _arch_hinv0(kind, theta, 1.0 - p, u1)
    return r


# -- elliptical kinds on scores ----------------------------------------------

@numba.njit(cache=True)
def _t_const(nu):
    return (math.lgamma(0.5 * nu + 1.0) + math.lgamma(0.5 * nu)
            - 2.0 * math.lgamma(0.5 * nu + 0.5))


# -- array kernels -----------------------------------------------------------

@numba.njit(cache=True)
def scores_normal(u, out):
    for i in range(u.size):
        out[i] = norm_ppf_scalar(clip01(u[i]))


@numba.njit(cache=True)
def scores_t(u, nu, out):
    lb = t_lbeta(nu)
    for i in range(u.size):
        out[i] = t_ppf_scalar(clip01(u[i]), nu, lb)


@numba.njit(cache=True)
def edge_eval(kind, rot, par, nu, ua, ub, xs, ys, need_h, h1, h2, logc):
    """Log-likelihood of one edge; optionally the h-function outputs.

    ``need_h`` is a bit mask: bit 1 fills ``h1`` with h(ua | ub), bit 2 fills
    ``h2`` with h(ub | ua).  If ``logc`` has the same length as the data,
    per-row log densities are stored.
    """
    n = ua.size
    store = logc.size == n
    total = 0.0
    w1 = (need_h & 1) != 0
    w2 = (need_h & 2) != 0
    if kind == INDEP:
        if w1:
            for i in range(n):
                h1[i] = ua[i]
        if w2:
            for i in range(n):
                h2[i] = ub[i]
        if store:
            for i in range(n):
                logc[i] = 0.0
        return 0.0
    if kind == GAUSS:
        rho = par
        r2 = 1.0 - rho * rho
        s = math.sqrt(r2)
        c0 = -0.5 * math.log(r2)
        for i in range(n):
            x = xs[i]
            y = ys[i]
            lc = c0 - (rho * rho * (x * x + y * y) - 2.0 * rho * x * y) / (2.0 * r2)
            total += lc
            if store:
                logc[i] = lc
            if w1:
                h1[i] = clip01(norm_cdf_scalar((x - rho * y) / s))
            if w2:
                h2[i] = clip01(norm_cdf_scalar((y - rho * x) / s))
        return total
    if kind == STUDENT:
        rho = par
        r2 = 1.0 - rho * rho
        c0 = _t_const(nu) - 0.5 * math.log(r2)
        lb1 = t_lbeta(nu + 1.0)
        for i in range(n):
            x = xs[i]
            y = ys[i]
            q = (x * x + y * y - 2.0 * rho * x * y) / (nu * r2)
            lc = (c0 - 0.5 * (nu + 2.0) * math.log1p(q)
                  + 0.5 * (nu + 1.0) * (math.log1p(x * x / nu) + math.log1p(y * y / nu)))
            total += lc
            if store:
                logc[i] = lc
            if w1:
                z1 = (x - rho * y) / math.sqrt((nu + y * y) * r2 / (nu + 1.0))
                h1[i] = clip01(t_cdf_scalar(z1, nu + 1.0, lb1))
            if w2:
                z2 = (y - rho * x) / math.sqrt((nu + x * x) * r2 / (nu + 1.0))
                h2[i] = clip01(t_cdf_scalar(z2, nu + 1.0, lb1))
        return total
    for i in range(n):
        a = clip01(ua[i])
        b = clip01(ub[i])
        lc = arch_logc(kind, rot, par, a, b)
        total += lc
        if store:
            logc[i] = lc
        if w1:
            h1[i] = arch_h_second(kind, rot, par, a, b)
        if w2:
            h2[i] = arch_h_first(kind, rot, par, a, b)
    return total


@numba.njit(cache=True)
def hinv_second(kind, rot, par, nu, p, v, out):
    """Solve h(u | v) = p for u, elementwise."""
    n = p.size
    if kind == INDEP:
        for i in range(n):
            out[i] = clip01(p[i])
        return
    if kind == GAUSS:
        s = math.sqrt(1.0 - par * par)
        for i in range(n):
            y = norm_ppf_scalar(clip01(v[i]))
            x = norm_ppf_scalar(clip01(p[i])) * s + par * y
            out[i] = clip01(norm_cdf_scalar(x))
        return
    if kind == STUDENT:
        lb = t_lbeta(nu)
        lb1 = t_lbeta(nu + 1.0)
        r2 = 1.0 - par * par
        for i in range(n):
            y = t_ppf_scalar(clip01(v[i]), nu, lb)
            z = t_ppf_scalar(clip01(p[i]), nu + 1.0, lb1)
            x = z * math.sqrt((nu + y * y) * r2 / (nu + 1.0)) + par * y
            out[i] = clip01(t_cdf_scalar(x, nu, lb))
        return
    for i in range(n):
        out[i] = clip01(arch_hinv_second(kind, rot, par, clip01(p[i]), clip01(v[i])))


@numba.njit(cache=True)
def arch_hinv_first_vec(kind, rot, par, p, u, out):
    for i in range(p.size):
        out[i] = clip01(arch_hinv_first(kind, rot, par, clip01(p[i]), clip01(u[i])))


@numba.njit(cache=True)
def arch_cdf0(kind, theta, u, v):
    """Rotation-0 copula cdf, used by tests and finite-difference checks."""
    if kind == CLAYTON:
        if theta < 1e-12:
            return u * v
        s = _clayton_logsum(theta, math.log(u), math.log(v))
        return math.exp(-s / theta)
    if theta - 1.0 < 1e-12:
        return u * v
    la = _logaddexp(theta * math.log(-math.log(u)), theta * math.log(-math.log(v)))
    return math.exp(-math.exp(la / theta))


def empty():
    return np.empty(0)
