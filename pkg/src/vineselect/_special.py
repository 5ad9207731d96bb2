"""Normal and Student-t distribution functions compiled with numba.

The scalar routines are written so they can be called from other jitted
kernels; ``norm_ppf``/``t_cdf``/``t_ppf`` etc. at the bottom are the
array-level entry points used from Python.
"""

import math

import numba
import numpy as np

_SQRT2 = math.sqrt(2.0)
# a relative Newton step this small is converged after the third-order update
PPF_STOP = 1e-4


@numba.njit(cache=True)
def norm_cdf_scalar(x):
    return 0.5 * math.erfc(-x / _SQRT2)


@numba.njit(cache=True)
def norm_sf_scalar(x):
    return 0.5 * math.erfc(x / _SQRT2)


@numba.njit(cache=True)
def norm_pdf_scalar(x):
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


@numba.njit(cache=True)
def _ppnd16(p):
    # Wichura (1988), AS 241.
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2509.0809287301226727 * r + 33430.575583588128105) * r
                    + 67265.770927008700853) * r + 45921.953931549871457) * r
                  + 13731.693765509461125) * r + 1971.5909503065514427) * r
                + 133.14166789178437745) * r + 3.387132872796366608)
        den = (((((((5226.495278852545925 * r + 28729.085735721942674) * r
                    + 39307.89580009271061) * r + 21213.794301586595867) * r
                  + 5394.1960214247511077) * r + 687.1870074920579083) * r
                + 42.313330701600911252) * r + 1.0)
        return q * num / den
    r = p if q < 0.0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        num = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r
                    + 0.24178072517745061177) * r + 1.27045825245236838258) * r
                  + 3.64784832476320460504) * r + 5.7694972214606914055) * r
                + 4.6303378461565452959) * r + 1.42343711074968357734)
        den = (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r
                    + 0.0151986665636164571966) * r + 0.14810397642748007459) * r
                  + 0.68976733498510000455) * r + 1.6763848301838038494) * r
                + 2.05319162663775882187) * r + 1.0)
    else:
        r -= 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                    + 0.0012426609473880784386) * r + 0.026532189526576123093) * r
                  + 0.29656057182850489123) * r + 1.7848265399172913358) * r
                + 5.4637849111641143699) * r + 6.6579046435011037772)
        den = (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r
                    + 1.8463183175100546818e-5) * r + 7.868691311456132591e-4) * r
                  + 0.0148753612908506148525) * r + 0.13692988092273580531) * r
                + 0.59983220655588793769) * r + 1.0)
    x = num / den
    return -x if q < 0.0 else x


@numba.njit(cache=True)
def norm_ppf_scalar(p):
    if p <= 0.0:
        return -math.inf
    if p >= 1.0:
        return math.inf
    x = _ppnd16(p)
    # one Newton step on whichever tail keeps relative precision
    dens = norm_pdf_scalar(x)
    if dens > 0.0:
        if x > 0.0:
            x -= ((1.0 - p) - norm_sf_scalar(x)) / dens
        else:
            x -= (norm_cdf_scalar(x) - p) / dens
    return x


@numba.njit(cache=True)
def _betacf(a, b, x):
    # modified Lentz continued fraction for the incomplete beta function
    fpmin = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < fpmin:
        d = fpmin
    d = 1.0 / d
    h = d
    for m in range(1, 1001):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        de = d * c
        h *= de
        if abs(de - 1.0) < 1e-16:
            break
    return h


@numba.njit(cache=True)
def betainc_reg(a, b, x, y, logx, logy, lbeta):
    """Regularized I_x(a, b) given x, y = 1 - x and their logs."""
    if x <= 0.0:
        return 0.0
    if y <= 0.0:
        return 1.0
    front = math.exp(a * logx + b * logy - lbeta)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, y) / b


@numba.njit(cache=True)
def t_lbeta(nu):
    return math.lgamma(0.5 * nu) + math.lgamma(0.5) - math.lgamma(0.5 * nu + 0.5)


@numba.njit(cache=True)
def t_sf_scalar(t, nu, lbeta):
    """Upper tail P(T > t) with the log-beta constant precomputed."""
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    t2 = t * t
    if t2 == 0.0:
        return 0.5
    x = nu / (nu + t2)
    y = t2 / (nu + t2)
    logx = -math.log1p(t2 / nu)
    logy = math.log(t2) - math.log(nu + t2)
    tail = 0.5 * betainc_reg(0.5 * nu, 0.5, x, y, logx, logy, lbeta)
    return tail if t > 0.0 else 1.0 - tail


@numba.njit(cache=True)
def t_cdf_scalar(t, nu, lbeta):
    return t_sf_scalar(-t, nu, lbeta)


@numba.njit(cache=True)
def t_logpdf_scalar(t, nu, lbeta):
    return -0.5 * math.log(nu) - lbeta - 0.5 * (nu + 1.0) * math.log1p(t * t / nu)


@numba.njit(cache=True)
def t_ppf_scalar(p, nu, lbeta):
    if p <= 0.0:
        return -math.inf
    if p >= 1.0:
        return math.inf
    neg = p < 0.5
    P = 2.0 * p if neg else 2.0 * (1.0 - p)
    if abs(nu - 2.0) < 1e-12:
        q = math.sqrt(2.0 / (P * (2.0 - P)) - 2.0)
    elif nu < 1.0 + 1e-12:
        q = math.tan(0.5 * math.pi * (1.0 - P))
    else:
        # Hill (1970) approximation, then Taylor-corrected Newton polish
        a = 1.0 / (nu - 0.5)
        b = 48.0 / (a * a)
        c = ((20700.0 * a / b - 98.0) * a - 16.0) * a + 96.36
        d = ((94.5 / (b + c) - 3.0) / b + 1.0) * math.sqrt(a * math.pi / 2.0) * nu
        y = (d * P) ** (2.0 / nu)
        if (nu < 2.1 and P > 0.5) or y > 0.05 + a:
            x = norm_ppf_scalar(0.5 * P)
            y = x * x
            if nu < 5.0:
                c += 0.3 * (nu - 4.5) * (x + 0.6)
            c = (((0.05 * d * x - 5.0) * x - 7.0) * x - 2.0) * x + b + c
            y = (((((0.4 * y + 6.3) * y + 36.0) * y + 94.5) / c - y - 3.0) / b + 1.0) * x
            y = math.expm1(a * y * y)
            q = math.sqrt(nu * y)
        else:
            y = ((1.0 / (((nu + 6.0) / (nu * y) - 0.089 * d - 0.822) * (nu + 2.0) * 3.0)
                  + 0.5 / (nu + 4.0)) * y - 1.0) * (nu + 1.0) / (nu + 2.0) + 1.0 / y
            q = math.sqrt(nu * y)
    if nu >= 1.0:
        for _ in range(10):
            dens = math.exp(t_logpdf_scalar(q, nu, lbeta))
            if dens <= 0.0:
                break
            x = (t_sf_scalar(q, nu, lbeta) - 0.5 * P) / dens
            if not math.isfinite(x):
                break
            q += x * (1.0 + x * q * (nu + 1.0) / (2.0 * (q * q + nu)))
            if abs(x) <= PPF_STOP * max(abs(q), 1e-8):
                break
    return -q if neg else q


@numba.njit(cache=True)
def _norm_cdf_vec(x, out):
    for i in range(x.size):
        out[i] = norm_cdf_scalar(x[i])


@numba.njit(cache=True)
def _norm_ppf_vec(p, out):
    for i in range(p.size):
        out[i] = norm_ppf_scalar(p[i])


@numba.njit(cache=True)
def _t_cdf_vec(x, nu, out):
    lb = t_lbeta(nu)
    for i in range(x.size):
        out[i] = t_cdf_scalar(x[i], nu, lb)


@numba.njit(cache=True)
def _t_ppf_vec(p, nu, out):
    lb = t_lbeta(nu)
    for i in range(p.size):
        out[i] = t_ppf_scalar(p[i], nu, lb)


@numba.njit(cache=True)
def _t_logpdf_vec(x, nu, out):
    lb = t_lbeta(nu)
    for i in range(x.size):
        out[i] = t_logpdf_scalar(x[i], nu, lb)


def _apply(kernel, x, *args):
    arr = np.asarray(x, dtype=np.float64)
    flat = np.ascontiguousarray(arr).ravel()
    out = np.empty_like(flat)
    kernel(flat, *args, out)
    if arr.ndim == 0:
        return float(out[0])
    return out.reshape(arr.shape)


def norm_cdf(x):
    return _apply(_norm_cdf_vec, x)


def norm_ppf(p):
    return _apply(_norm_ppf_vec, p)


def t_cdf(x, nu):
    return _apply(_t_cdf_vec, x, float(nu))


def t_ppf(p, nu):
    return _apply(_t_ppf_vec, p, float(nu))


def t_logpdf(x, nu):
    return _apply(_t_logpdf_vec, x, float(nu))
