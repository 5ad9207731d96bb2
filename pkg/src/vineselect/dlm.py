"""Variance-discounting dynamic linear models for the margins.

A local-level DLM with Student-t one-step forecasts.  The recursions are
written for a general regression vector ``F`` and evolution matrix ``G``;
the margins use the scalar case ``F = G = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .pair_copulas import NumericalError


@dataclass(frozen=True)
class DLMConfig:
    beta: float = 0.96
    delta: float = 0.975
    F: np.ndarray = field(default_factory=lambda: np.ones(1))
    G: np.ndarray = field(default_factory=lambda: np.eye(1))

    def __post_init__(self):
        if not (0 < self.beta <= 1 and 0 < self.delta <= 1):
            raise ValueError("discount factors must lie in (0, 1]")
        object.__setattr__(self, "F", np.atleast_1d(np.asarray(self.F, dtype=float)))
        object.__setattr__(self, "G", np.atleast_2d(np.asarray(self.G, dtype=float)))


@dataclass
class PriorState:
    """Step-ahead prior: state ~ T(a, R) scaled, precision ~ Gamma(r/2, rc/2)."""

    a: np.ndarray
    R: np.ndarray
    r: float
    c: float

    def to_dict(self) -> dict:
        return {"a": np.asarray(self.a).tolist(), "R": np.asarray(self.R).tolist(),
                "r": self.r, "c": self.c}


@dataclass
class PosteriorState:
    m: np.ndarray
    C: np.ndarray
    n: float
    s: float

    def to_dict(self) -> dict:
        return {"m": np.asarray(self.m).tolist(), "C": np.asarray(self.C).tolist(),
                "n": self.n, "s": self.s}


def initial_state(a: float = 0.0, R: float = 1e-6, r: float = 10.0, c: float = 1e-5) -> PriorState:
    return PriorState(np.array([a]), np.array([[R]]), r, c)


@dataclass(frozen=True)
class ForecastDist:
    """Non-standardized Student t: ``mu + sqrt(sigma2) * T_nu``."""

    nu: float
    mu: float
    sigma2: float

    @property
    def scale(self) -> float:
        return float(np.sqrt(self.sigma2))


def filter_update(prior: PriorState, y: float, config: DLMConfig = DLMConfig()) -> PosteriorState:
    F = config.F
    a, R = np.asarray(prior.a, float), np.asarray(prior.R, float)
    e = y - F @ a
    q = prior.c + F @ R @ F
    if not q > 0:
        raise NumericalError(f"non-positive forecast variance {q}")
    A = R @ F / q
    m = a + A * e
    n = prior.r + 1.0
    z = (prior.r + e * e / q) / n
    C = (R - np.outer(A, A) * q) * z
    return PosteriorState(m, C, n, z * prior.c)


def evolve(post: PosteriorState, config: DLMConfig = DLMConfig()) -> PriorState:
    G = config.G
    a = G @ post.m
    R = G @ post.C @ G.T / config.delta
    return PriorState(a, R, config.beta * post.n, post.s)


def forecast(prior: PriorState, config: DLMConfig = DLMConfig()) -> ForecastDist:
    F = config.F
    return ForecastDist(float(prior.r), float(F @ prior.a), float(F @ prior.R @ F + prior.c))


def pit(f: ForecastDist, y):
    return stats.t.cdf(y, f.nu, loc=f.mu, scale=f.scale)


def inv_pit(f: ForecastDist, u):
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise ValueError("probabilities must lie strictly inside (0, 1)")
    return stats.t.ppf(u, f.nu, loc=f.mu, scale=f.scale)


@dataclass
class FilterRun:
    """Per-step forecasts and PIT values of a filtered series."""

    forecasts: list
    u: np.ndarray
    prior: PriorState


def run_filter(y, config: DLMConfig = DLMConfig(), state: Optional[PriorState] = None) -> FilterRun:
    """Filter a series; ``u[t]`` uses the forecast made before ``y[t]`` is seen."""
    prior = initial_state() if state is None else state
    fc, us = [], []
    for yt in np.asarray(y, dtype=float):
        f = forecast(prior, config)
        fc.append(f)
        us.append(pit(f, yt))
        prior = evolve(filter_update(prior, yt, config), config)
    return FilterRun(fc, np.array(us), prior)


def simulate_dlm(T: int, rng: np.random.Generator, config: DLMConfig = DLMConfig(),
                 state: Optional[PriorState] = None) -> np.ndarray:
    """Draw a series from the model's own one-step forecast distributions."""
    prior = initial_state() if state is None else state
    out = np.empty(T)
    for t in range(T):
        f = forecast(prior, config)
        out[t] = f.mu + f.scale * rng.standard_t(f.nu)
        prior = evolve(filter_update(prior, out[t], config), config)
    return out


def state_to_dict(state) -> dict:
    return state.to_dict()


__all__ = [
    "DLMConfig", "PriorState", "PosteriorState", "ForecastDist", "initial_state",
    "filter_update", "evolve", "forecast", "pit", "inv_pit", "run_filter", "simulate_dlm",
    "FilterRun",
]
