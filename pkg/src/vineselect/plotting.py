"""Report figures rendered to files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def trace_plot(trace, path, burn_in: int = 0) -> None:
    """Model index and log-likelihood traces of one level."""
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    # relabel models by order of first visit after burn-in so indices stay compact
    ids = np.asarray(trace.model_ids)
    _, first = np.unique(ids, return_index=True)
    order = {m: r for r, m in enumerate(ids[np.sort(first)])}
    ax1.plot(trace.iters, [order[m] for m in ids], lw=0.5, color="black")
    ax1.set_ylabel("model index")
    ax2.plot(trace.iters, trace.loglik, lw=0.5, color="black")
    ax2.set_ylabel("log-likelihood")
    ax2.set_xlabel("iteration")
    for ax in (ax1, ax2):
        if burn_in:
            ax.axvline(burn_in, color="gray", ls=":", lw=1)
    ax1.set_title(f"level {trace.level}")
    fig.tight_layout()
    _save(fig, path)


def study_scatter(rows, path) -> None:
    """Bayesian vs Dissmann relative log-likelihoods, one panel per scenario."""
    scen = sorted({r["scenario"] for r in rows})
    fig, axes = plt.subplots(1, len(scen), figsize=(4 * len(scen), 4), squeeze=False)
    for ax, s in zip(axes[0], scen):
        sub = [r for r in rows if r["scenario"] == s]
        x = np.array([r["dissmann_rel"] for r in sub])
        y = np.array([r["bayes_rel"] for r in sub])
        lo = min(x.min(), y.min()) - 2
        hi = max(x.max(), y.max()) + 2
        ax.plot([lo, hi], [lo, hi], color="gray", lw=1)
        ax.scatter(x, y, s=14, color="black")
        ax.axvline(x.mean(), color="gray", ls="--", lw=1)
        ax.axhline(y.mean(), color="gray", ls="--", lw=1)
        ax.set_xlim(lo, hi)
        ax.set_ylim(lo, hi)
        ax.set_xlabel("Dissmann rel. loglik (%)")
        ax.set_ylabel("Bayesian rel. loglik (%)")
        ax.set_title(f"scenario {s}")
    fig.tight_layout()
    _save(fig, path)


def backtest_plot(report, path) -> None:
    """Realized portfolio returns with forecast mean and VaR, and cumulative return."""
    daily = report["daily"]
    t = np.arange(len(daily))
    realized = np.array([x["realized"] for x in daily])
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
    ax1.plot(t, realized, color="gray", lw=0.8, label="realized")
    ax1.plot(t, [x["forecast_mean"] for x in daily], color="black", lw=1, label="forecast mean")
    ax1.plot(t, [x["var"] for x in daily], color="blue", lw=1, label="VaR")
    ax1.set_xlabel("day")
    ax1.set_ylabel("portfolio log-return")
    ax1.legend(loc="lower left", fontsize=8)
    ax2.plot(t, np.cumsum(realized), color="black", lw=1)
    ax2.set_xlabel("day")
    ax2.set_ylabel("cumulative log-return")
    fig.suptitle(f"realized Sharpe {report['sharpe']:.2f}, VaR exceedances {report['var_coverage']:.1%}")
    fig.tight_layout()
    _save(fig, path)


__all__ = ["trace_plot", "study_scatter", "backtest_plot"]
