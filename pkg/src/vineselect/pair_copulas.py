"""Bivariate copula families parameterized by Kendall's tau.

Supported tags are ``I`` (independence), ``N`` (Gaussian), ``T`` (Student-t),
``C``/``C90``/``C180``/``C270`` (Clayton and rotations) and the same four
rotations of Gumbel (``G``...).  Clayton and Gumbel only cover one sign of
tau natively.  A tau of the other sign is handled by swapping to the
partner rotation (0 <-> 90, 180 <-> 270), so every family covers the whole
interval (-1, 1).  The stored tag is always the one matching the sign of tau.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from . import _kernels as K


class ParameterError(ValueError):
    """Invalid family tag or parameter value."""


class EstimationError(ValueError):
    """Data unsuitable for fitting (too short, constant, ...)."""


class NumericalError(ArithmeticError):
    """An iterative numerical routine failed to converge."""


KIND_CODES = {"I": K.INDEP, "N": K.GAUSS, "T": K.STUDENT, "C": K.CLAYTON, "G": K.GUMBEL}
ROTATIONS = (0, 90, 180, 270)
DF_MIN, DF_MAX = 1.0, 30.0
TAU_CLAMP = 0.99


@dataclass(frozen=True)
class FamilyTag:
    kind: str
    rotation: int = 0

    def __post_init__(self):
        if self.kind not in KIND_CODES:
            raise ParameterError(f"unknown family kind {self.kind!r}")
        if self.rotation not in ROTATIONS:
            raise ParameterError(f"rotation must be one of {ROTATIONS}")
        if self.kind in ("I", "N", "T") and self.rotation != 0:
            raise ParameterError(f"family {self.kind} is not rotated")

    @classmethod
    def parse(cls, tag: "str | FamilyTag") -> "FamilyTag":
        if isinstance(tag, FamilyTag):
            return tag
        s = str(tag).strip().upper()
        if not s:
            raise ParameterError("empty family tag")
        rot = int(s[1:]) if len(s) > 1 and s[1:].isdigit() else None
        if rot is None and len(s) > 1:
            raise ParameterError(f"unknown family tag {tag!r}")
        return cls(s[0], rot or 0)

    def __str__(self):
        return self.kind if self.rotation == 0 else f"{self.kind}{self.rotation}"

    @property
    def code(self) -> int:
        return KIND_CODES[self.kind]

    @property
    def n_params(self) -> int:
        return {"I": 0, "T": 2}.get(self.kind, 1)

    @property
    def group(self) -> str:
        """Label of the tau-sign-closed family this tag belongs to."""
        if self.kind in ("C", "G") and self.rotation in (180, 270):
            return self.kind + "180"
        return self.kind

    def for_tau(self, tau: float) -> "FamilyTag":
        """Partner rotation whose native sign matches ``tau``."""
        if self.kind not in ("C", "G"):
            return self
        base = 0 if self.rotation in (0, 90) else 180
        return FamilyTag(self.kind, base + (90 if tau < 0 else 0))


def _abs_tau_to_natural(kind: str, a: float) -> float:
    if kind == "C":
        return 2.0 * a / (1.0 - a)
    if kind == "G":
        return 1.0 / (1.0 - a)
    return math.sin(0.5 * math.pi * a)


def tau_to_natural(family, tau: float) -> float:
    """Map Kendall's tau to the natural copula parameter.

    Gaussian and t return the correlation ``sin(pi tau / 2)``.  Clayton and
    Gumbel return theta from ``|tau|``; the sign is carried by the rotation.
    """
    fam = FamilyTag.parse(family)
    tau = float(tau)
    if not abs(tau) < 1.0:
        raise ParameterError(f"|tau| must be < 1, got {tau}")
    if fam.kind == "I":
        return 0.0
    if fam.kind in ("N", "T"):
        return math.sin(0.5 * math.pi * tau)
    return _abs_tau_to_natural(fam.kind, abs(tau))


def natural_to_tau(family, param: float) -> float:
    """Inverse of :func:`tau_to_natural`; rotations 90 and 270 give negative tau."""
    fam = FamilyTag.parse(family)
    param = float(param)
    if fam.kind == "I":
        return 0.0
    if fam.kind in ("N", "T"):
        if not abs(param) < 1.0:
            raise ParameterError("correlation must lie in (-1, 1)")
        return 2.0 / math.pi * math.asin(param)
    if fam.kind == "C":
        if param < 0:
            raise ParameterError("Clayton theta must be >= 0")
        a = param / (param + 2.0)
    else:
        if param < 1:
            raise ParameterError("Gumbel theta must be >= 1")
        a = 1.0 - 1.0 / param
    return -a if fam.rotation in (90, 270) else a


@dataclass(frozen=True)
class PairCopula:
    """A family tag together with its parameters (tau and, for t, df)."""

    family: FamilyTag
    tau: float = 0.0
    df: Optional[float] = None

    def __post_init__(self):
        fam = FamilyTag.parse(self.family)
        tau = float(self.tau)
        if not abs(tau) < 1.0 or not math.isfinite(tau):
            raise ParameterError(f"|tau| must be < 1, got {self.tau}")
        if fam.kind == "I":
            tau = 0.0
        df = self.df
        if fam.kind == "T":
            if df is None or not (DF_MIN < float(df) <= DF_MAX):
                raise ParameterError(f"t copula needs df in ({DF_MIN:g}, {DF_MAX:g}], got {df}")
            df = float(df)
        else:
            df = None
        object.__setattr__(self, "family", fam.for_tau(tau))
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "df", df)

    @property
    def param(self) -> float:
        return tau_to_natural(self.family, self.tau)

    @property
    def nu(self) -> float:
        return self.df if self.df is not None else 0.0

    @property
    def n_params(self) -> int:
        return self.family.n_params

    def to_dict(self) -> dict:
        out = {"family": str(self.family), "tau": self.tau}
        if self.df is not None:
            out["df"] = self.df
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "PairCopula":
        return cls(FamilyTag.parse(d["family"]), float(d.get("tau", 0.0)),
                   None if d.get("df") is None else float(d["df"]))


INDEPENDENCE = PairCopula(FamilyTag("I"))


def make_pair(family, tau: float = 0.0, df: Optional[float] = None) -> PairCopula:
    return PairCopula(FamilyTag.parse(family), tau, df)


def _as_arrays(u1, u2):
    a = np.ascontiguousarray(np.asarray(u1, dtype=np.float64).ravel())
    b = np.ascontiguousarray(np.asarray(u2, dtype=np.float64).ravel())
    if a.shape != b.shape:
        raise ValueError("u1 and u2 must have the same length")
    return a, b


def scores(c: PairCopula, u: np.ndarray) -> np.ndarray:
    """Quantile scores used by the elliptical kernels (u itself otherwise)."""
    out = np.empty_like(u)
    if c.family.kind == "N":
        K.scores_normal(u, out)
    elif c.family.kind == "T":
        K.scores_t(u, c.df, out)
    else:
        return u
    return out


def eval_edge(c: PairCopula, a: np.ndarray, b: np.ndarray, need_h: bool = True, logc=None):
    """Log-likelihood and both h-function outputs for contiguous float arrays.

    Returns ``(loglik, h(a|b), h(b|a))``; the h arrays are empty when
    ``need_h`` is false.
    """
    return _eval(c, a, b, need_h, K.empty() if logc is None else logc)


def _eval(c, a, b, need_h, logc):
    n = a.size
    h1 = np.empty(n) if need_h else K.empty()
    h2 = np.empty(n) if need_h else K.empty()
    xs, ys = scores(c, a), scores(c, b)
    ll = K.edge_eval(c.family.code, c.family.rotation, c.param, c.nu,
                     a, b, xs, ys, 3 if need_h else 0, h1, h2, logc)
    return ll, h1, h2


def pair_logpdf(c: PairCopula, u1, u2) -> np.ndarray:
    a, b = _as_arrays(u1, u2)
    out = np.empty(a.size)
    _eval(c, a, b, False, out)
    return out


def pair_density(c: PairCopula, u1, u2) -> np.ndarray:
    """Copula density c(u1, u2); inputs are clamped to [1e-10, 1 - 1e-10]."""
    return np.exp(pair_logpdf(c, u1, u2))


def pair_loglik(c: PairCopula, u1, u2) -> float:
    a, b = _as_arrays(u1, u2)
    return float(_eval(c, a, b, False, K.empty())[0])


def hfunc(c: PairCopula, u1, u2, cond: str = "second") -> np.ndarray:
    """Conditional distribution function.

    ``cond="second"`` gives P(U1 <= u1 | U2 = u2); ``cond="first"`` gives
    P(U2 <= u2 | U1 = u1).
    """
    a, b = _as_arrays(u1, u2)
    _, h1, h2 = _eval(c, a, b, True, K.empty())
    if cond == "second":
        return h1
    if cond == "first":
        return h2
    raise ValueError("cond must be 'first' or 'second'")


def hinv(c: PairCopula, p, v, cond: str = "second") -> np.ndarray:
    """Inverse of :func:`hfunc` in its free argument.

    With ``cond="second"`` solves ``hfunc(c, u, v, "second") = p`` for u;
    with ``cond="first"`` solves ``hfunc(c, v, u, "first") = p`` for u.
    """
    p, v = _as_arrays(p, v)
    out = np.empty(p.size)
    fam = c.family
    if cond == "second":
        K.hinv_second(fam.code, fam.rotation, c.param, c.nu, p, v, out)
    elif cond == "first":
        if fam.kind in ("C", "G"):
            K.arch_hinv_first_vec(fam.code, fam.rotation, c.param, p, v, out)
        else:
            # exchangeable families
            K.hinv_second(fam.code, 0, c.param, c.nu, p, v, out)
    else:
        raise ValueError("cond must be 'first' or 'second'")
    if np.isnan(out).any():
        raise NumericalError(f"h-inverse did not converge for {fam}")
    return out


def sample_pair(c: PairCopula, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` pairs by conditional inversion; returns an (n, 2) array."""
    w = rng.random((n, 2))
    u1 = hinv(c, w[:, 0], w[:, 1], "second")
    return np.column_stack([u1, w[:, 1]])


# -- estimation ---------------------------------------------------------------

def empirical_tau(u1, u2) -> float:
    a, b = _as_arrays(u1, u2)
    if a.size < 2 or np.ptp(a) == 0 or np.ptp(b) == 0:
        raise EstimationError("Kendall's tau undefined for constant data")
    tau = stats.kendalltau(a, b).statistic
    if not math.isfinite(tau):
        raise EstimationError("Kendall's tau undefined for these data")
    return float(np.clip(tau, -TAU_CLAMP, TAU_CLAMP))


DF_GRID = np.arange(2.0, 31.0)


def fit_df(tau: float, u1, u2) -> float:
    """Profile the t-copula log-likelihood over an integer df grid."""
    a, b = _as_arrays(u1, u2)
    best, best_ll = DF_GRID[0], -np.inf
    for nu in DF_GRID:
        ll = pair_loglik(PairCopula(FamilyTag("T"), tau, nu), a, b)
        if ll > best_ll:
            best, best_ll = nu, ll
    return float(best)


def fit_pair(family, u1, u2, min_obs: int = 10) -> PairCopula:
    """Plug-in estimate: inverted Kendall's tau, df by grid search for t."""
    fam = FamilyTag.parse(family)
    a, b = _as_arrays(u1, u2)
    if a.size < min_obs:
        raise EstimationError(f"need at least {min_obs} observations, got {a.size}")
    if fam.kind == "I":
        return PairCopula(fam)
    tau = empirical_tau(a, b)
    df = fit_df(tau, a, b) if fam.kind == "T" else None
    return PairCopula(fam, tau, df)


__all__ = [
    "FamilyTag", "PairCopula", "INDEPENDENCE", "ParameterError", "EstimationError",
    "NumericalError", "make_pair", "tau_to_natural", "natural_to_tau", "pair_density",
    "pair_logpdf", "pair_loglik", "hfunc", "hinv", "sample_pair", "fit_pair",
    "empirical_tau", "fit_df",
]
