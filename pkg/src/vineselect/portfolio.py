"""Joint forecasts through a copula, value at risk, Sharpe ratios and a daily backtest."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from ._special import norm_cdf
from .dlm import DLMConfig, ForecastDist, evolve, filter_update, forecast, initial_state, inv_pit, pit
from .vine import VineCopula, simulate

ANNUAL = 252.0


class PortfolioError(ValueError):
    pass


# -- copula sampling ------------------------------------------------------------------------

def sample_copula(copula, n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Draw from a vine copula, a Gaussian copula (correlation matrix) or independence (None)."""
    if copula is None:
        return rng.random((n, d))
    if isinstance(copula, VineCopula):
        if copula.d != d:
            raise PortfolioError(f"copula dimension {copula.d} does not match {d} margins")
        return simulate(copula, n, rng)
    R = np.asarray(copula, dtype=float)
    if R.shape != (d, d):
        raise PortfolioError("correlation matrix does not match the number of margins")
    Z = rng.standard_normal((n, d)) @ np.linalg.cholesky(R).T
    return np.clip(norm_cdf(Z.ravel()).reshape(n, d), 1e-12, 1 - 1e-12)


def joint_forecast(forecasts: Sequence[ForecastDist], copula, N: int,
                   rng: np.random.Generator) -> np.ndarray:
    """N x d panel of joint next-step draws: copula sample mapped through margin quantiles."""
    d = len(forecasts)
    U = sample_copula(copula, N, d, rng)
    U = np.clip(U, 1e-12, 1 - 1e-12)
    return np.column_stack([inv_pit(f, U[:, j]) for j, f in enumerate(forecasts)])


# -- risk and return ----------------------------------------------------------------------------

def var_quantile(panel, w, level: float = 0.10) -> float:
    panel = np.asarray(panel, dtype=float)
    if panel.size == 0:
        raise PortfolioError("empty forecast panel")
    return float(np.quantile(panel @ np.asarray(w, float), level))


def panel_moments(panel) -> tuple:
    panel = np.asarray(panel, dtype=float)
    return panel.mean(axis=0), np.cov(panel, rowvar=False)


def sharpe_from_moments(w, mu, Sigma) -> float:
    w = np.asarray(w, float)
    v = float(w @ Sigma @ w)
    if not v > 0:
        raise PortfolioError("portfolio variance must be positive")
    return ANNUAL * float(w @ mu) / math.sqrt(ANNUAL * v)


def sharpe_estimate(w, panel) -> float:
    """Annualized Sharpe ratio of the forecast panel, zero risk-free rate."""
    mu, Sigma = panel_moments(panel)
    return sharpe_from_moments(w, mu, np.atleast_2d(Sigma))


def realized_sharpe(returns) -> float:
    r = np.asarray(returns, dtype=float)
    sd = r.std(ddof=1) if r.size > 1 else 0.0
    if sd == 0:
        return 0.0
    return ANNUAL * r.mean() / math.sqrt(ANNUAL * sd * sd)


# -- weight optimization ------------------------------------------------------------------------

def _check_bounds(d: int, lo: float, hi: float):
    if not (lo <= hi and d * lo <= 1.0 + 1e-12 and d * hi >= 1.0 - 1e-12):
        raise PortfolioError(f"bounds ({lo}, {hi}) are infeasible for {d} assets")


def project_box_simplex(V, lo: float, hi: float) -> np.ndarray:
    """Euclidean projection of each row onto {lo <= w <= hi, sum w = 1}.

    The projection is ``clip(v - t, lo, hi)`` with ``t`` solving a piecewise
    linear equation; the breakpoints are searched exactly.
    """
    V = np.atleast_2d(np.asarray(V, dtype=float))
    m, d = V.shape
    bp = np.sort(np.concatenate([V - lo, V - hi], axis=1), axis=1)
    sums = np.clip(V[:, None, :] - bp[:, :, None], lo, hi).sum(axis=2)  # decreasing in t
    idx = np.clip((sums >= 1.0).sum(axis=1) - 1, 0, 2 * d - 2)
    rows = np.arange(m)
    t0, t1 = bp[rows, idx], bp[rows, idx + 1]
    s0, s1 = sums[rows, idx], sums[rows, idx + 1]
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(s0 != s1, t0 + (s0 - 1.0) * (t1 - t0) / (s0 - s1), t0)
    return np.clip(V - t[:, None], lo, hi)


def _sr_rows(W, mu, Sigma):
    num = W @ mu
    var = np.einsum("ij,jk,ik->i", W, Sigma, W)
    return np.where(var > 0, ANNUAL * num / np.sqrt(ANNUAL * np.maximum(var, 1e-300)), -np.inf)


def optimize_weights(panel=None, bounds=(0.05, 0.25), rng: Optional[np.random.Generator] = None,
                     starts: int = 50, steps: int = 500, step: float = 1e-2,
                     moments: Optional[tuple] = None) -> np.ndarray:
    """Maximize the forecast Sharpe ratio over the box-constrained simplex.

    Multi-start projected gradient ascent; each start keeps its own step
    size, halved whenever a trial step fails to improve.
    """
    mu, Sigma = moments if moments is not None else panel_moments(panel)
    mu = np.asarray(mu, float)
    Sigma = np.atleast_2d(np.asarray(Sigma, float))
    d = mu.size
    lo, hi = bounds
    _check_bounds(d, lo, hi)
    rng = np.random.default_rng(0) if rng is None else rng
    W = project_box_simplex(np.vstack([np.full(d, 1.0 / d), rng.dirichlet(np.ones(d), starts - 1)]),
                            lo, hi)
    f = _sr_rows(W, mu, Sigma)
    eta = np.full(W.shape[0], step)
    for _ in range(steps):
        num = W @ mu
        SW = W @ Sigma
        var = np.maximum(np.einsum("ij,ij->i", SW, W), 1e-300)
        sd = np.sqrt(var)
        grad = math.sqrt(ANNUAL) * (mu[None, :] / sd[:, None] - (num / var / sd)[:, None] * SW)
        trial = project_box_simplex(W + eta[:, None] * grad, lo, hi)
        ft = _sr_rows(trial, mu, Sigma)
        better = ft > f
        W[better] = trial[better]
        f[better] = ft[better]
        eta = np.where(better, eta * 1.1, eta * 0.5)
        if np.all(eta < 1e-10):
            break
    return W[int(np.argmax(f))].copy()


# -- backtest ------------------------------------------------------------------------------------

@dataclass
class BacktestConfig:
    train: int = 252
    N: int = 10000
    level: float = 0.10
    bounds: tuple = (0.05, 0.25)
    weights: str = "sharpe"          # "sharpe" or "equal"
    refit_every: Optional[int] = None
    seed: int = 0
    beta: float = 0.96
    delta: float = 0.975
    starts: int = 50
    steps: int = 500

    def to_dict(self) -> dict:
        out = asdict(self)
        out["bounds"] = list(self.bounds)
        return out


def log_returns(prices) -> np.ndarray:
    P = np.asarray(prices, dtype=float)
    return np.diff(np.log(P), axis=0)


def filter_pits(Y, config: DLMConfig) -> tuple:
    """One-step-ahead PITs of every column and the states after the last row."""
    T, d = Y.shape
    states = [initial_state() for _ in range(d)]
    U = np.empty((T, d))
    for t in range(T):
        for j in range(d):
            f = forecast(states[j], config)
            U[t, j] = pit(f, Y[t, j])
            states[j] = evolve(filter_update(states[j], Y[t, j], config), config)
    return U, states


def backtest(returns, fit_copula, config: BacktestConfig = BacktestConfig(),
             dates: Optional[Sequence[str]] = None) -> dict:
    """Rolling one-step-ahead evaluation.

    ``fit_copula(U)`` maps PIT data to a dependence model (``VineCopula``,
    correlation matrix or ``None``).  The model is fitted on the first
    ``config.train`` days and refreshed every ``refit_every`` test days.
    """
    from .streams import stream

    Y = np.asarray(returns, dtype=float)
    if Y.ndim != 2 or not np.all(np.isfinite(Y)):
        raise PortfolioError("returns must be a finite 2-d array")
    T, d = Y.shape
    if not 2 <= config.train < T:
        raise PortfolioError(f"train length {config.train} must be in [2, {T - 1}]")
    dcfg = DLMConfig(beta=config.beta, delta=config.delta)
    if config.weights not in ("sharpe", "equal"):
        raise PortfolioError(f"unknown weighting {config.weights!r}")
    if config.weights == "sharpe":
        _check_bounds(d, *config.bounds)
    U_all, states = filter_pits(Y[: config.train], dcfg)
    U_hist = [U_all]
    model = fit_copula(U_all)
    rng = stream(config.seed, "backtest")
    daily, realized = [], []
    for step_i, t in enumerate(range(config.train, T)):
        if config.refit_every and step_i > 0 and step_i % config.refit_every == 0:
            model = fit_copula(np.vstack(U_hist))
        fcs = [forecast(s, dcfg) for s in states]
        panel = joint_forecast(fcs, model, config.N, rng)
        mu, Sigma = panel_moments(panel)
        if config.weights == "equal":
            w = np.full(d, 1.0 / d)
        else:
            w = optimize_weights(moments=(mu, Sigma), bounds=config.bounds, rng=rng,
                                 starts=config.starts, steps=config.steps)
        var = var_quantile(panel, w, config.level)
        r = float(w @ Y[t])
        u_t = np.array([pit(f, Y[t, j]) for j, f in enumerate(fcs)])
        U_hist.append(u_t[None, :])
        daily.append({
            "t": t + 1,
            "date": dates[t] if dates is not None else str(t + 1),
            "realized": r,
            "forecast_mean": float(w @ mu),
            "var": var,
            "exceed": bool(r < var),
            "weights": [float(x) for x in w],
        })
        realized.append(r)
        for j in range(d):
            states[j] = evolve(filter_update(states[j], Y[t, j], dcfg), dcfg)
    exceed = np.array([x["exceed"] for x in daily])
    return {
        "config": config.to_dict(),
        "daily": daily,
        "sharpe": realized_sharpe(realized),
        "var_coverage": float(exceed.mean()),
        "cumulative_return": float(np.sum(realized)),
        "days": len(daily),
    }


def simulate_joint(T: int, copula, d: int, rng: np.random.Generator,
                   config: DLMConfig = DLMConfig()) -> np.ndarray:
    """Returns drawn from the joint model: DLM margins tied by ``copula``."""
    states = [initial_state() for _ in range(d)]
    Y = np.empty((T, d))
    U = sample_copula(copula, T, d, rng)
    U = np.clip(U, 1e-12, 1 - 1e-12)
    for t in range(T):
        for j in range(d):
            f = forecast(states[j], config)
            Y[t, j] = float(inv_pit(f, U[t, j]))
            states[j] = evolve(filter_update(states[j], Y[t, j], config), config)
    return Y


def binomial_band(n: int, p: float = 0.10, conf: float = 0.95) -> tuple:
    from scipy import stats
    lo = stats.binom.ppf((1 - conf) / 2, n, p) / n
    hi = stats.binom.ppf(1 - (1 - conf) / 2, n, p) / n
    return float(lo), float(hi)


__all__ = [
    "joint_forecast", "sample_copula", "var_quantile", "sharpe_estimate", "sharpe_from_moments",
    "optimize_weights", "project_box_simplex", "backtest", "BacktestConfig", "log_returns",
    "filter_pits", "simulate_joint", "realized_sharpe", "binomial_band", "PortfolioError",
]
