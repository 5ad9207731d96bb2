"""Tree-by-tree Bayesian selection of regular vine copulas by reversible jump MCMC.

Level k is sampled with the lower trees and families fixed at their
estimates.  Each iteration performs a single-site random-walk sweep over all
parameters of levels 1..k, then one between-models move on level k: with
probability 1/2 a family move (some edges change family) and otherwise a
tree move (a new spanning tree with fresh families).  After R iterations the
most frequently visited (tree, families) pair is taken as the level estimate.

Parameters are handled on the (tau, log nu) scale.  Pair-copula families are
the sign-closed groups ``I, N, T, C, C180, G, G180``; the rotation inside a
group follows the sign of tau.
"""

from __future__ import annotations

import hashlib
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels as K
from .pair_copulas import FamilyTag, PairCopula, empirical_tau, fit_df
from .tree_space import (
    AllowedGraph,
    TreeProposal,
    allowed_graph,
    count_spanning_trees,
    log_weighted_tree_sum,
    qT_logweight,
    sample_spanning_tree,
)
from .vine import EdgeLabel, VineCopula, VineStructure, forward, join_edges

GROUPS = ("I", "N", "T", "C", "C180", "G", "G180")
_INFO = {
    "I": (K.INDEP, 0), "N": (K.GAUSS, 0), "T": (K.STUDENT, 0),
    "C": (K.CLAYTON, 0), "C180": (K.CLAYTON, 180),
    "G": (K.GUMBEL, 0), "G180": (K.GUMBEL, 180),
}
LOG30 = math.log(30.0)
LOG_DF_NORM = math.log(30.0 * math.log(30.0) - 29.0)
TAU_BOUNDS = (-1.0, 1.0)
LOGNU_BOUNDS = (0.0, LOG30)
_EMPTY = np.empty(0)
_SQRT2 = math.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class ConfigError(ValueError):
    """Invalid sampler configuration."""


def n_params(group: str) -> int:
    return 0 if group == "I" else (2 if group == "T" else 1)


@dataclass(frozen=True)
class PriorConfig:
    """Shrinkage intensity and the prior on Student-t degrees of freedom.

    ``df_prior="log"`` uses the density proportional to log(nu) on (1, 30);
    ``"flat-log"`` puts a flat prior on log(nu) over (0, log 30).
    """

    lam: float = 1.0
    df_prior: str = "log"

    def __post_init__(self):
        if not self.lam >= 0:
            raise ConfigError("lambda must be non-negative")
        if self.df_prior not in ("log", "flat-log"):
            raise ConfigError("df_prior must be 'log' or 'flat-log'")


@dataclass(frozen=True)
class TuningParams:
    R: int = 50000
    burn_in: int = 2500
    sigma_tau: float = 0.0125
    sigma_lognu: float = 0.1
    p_tree: float = 0.667
    qN_shape: float = 3.5
    proposal_floor: float = 0.05
    families: tuple = GROUPS
    paper_cancellation: bool = False
    record_transitions: int = 0

    def __post_init__(self):
        fams = tuple(self.families)
        object.__setattr__(self, "families", fams)
        if self.R < 1 or self.burn_in < 0:
            raise ConfigError("R must be positive and burn_in non-negative")
        if self.R <= self.burn_in:
            raise ConfigError(f"R ({self.R}) must exceed burn_in ({self.burn_in})")
        for name in ("sigma_tau", "sigma_lognu", "qN_shape"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.p_tree < 1:
            raise ConfigError("p_tree must lie in (0, 1)")
        if not 0 < self.proposal_floor <= 1:
            raise ConfigError("proposal_floor must lie in (0, 1]")
        if len(set(fams)) != len(fams) or len(fams) < 2:
            raise ConfigError("need at least two distinct candidate families")
        for g in fams:
            if g not in _INFO:
                raise ConfigError(f"unknown family group {g!r}; choose from {GROUPS}")


# -- small numerical helpers ------------------------------------------------------

def _ndtr(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def _log_mass(mu: float, sd: float, lo: float, hi: float) -> float:
    """log P(lo < X < hi) for X ~ N(mu, sd^2)."""
    a = (lo - mu) / sd
    b = (hi - mu) / sd
    if a > 0:
        m = 0.5 * (math.erfc(a / _SQRT2) - math.erfc(b / _SQRT2))
    elif b < 0:
        m = 0.5 * (math.erfc(-b / _SQRT2) - math.erfc(-a / _SQRT2))
    else:
        m = 0.5 * (math.erf(b / _SQRT2) - math.erf(a / _SQRT2))
    return math.log(m) if m > 0 else -math.inf


def tn_logpdf(x: float, mu: float, sd: float, lo: float, hi: float) -> float:
    if not lo < x < hi:
        return -math.inf
    z = (x - mu) / sd
    return -0.5 * z * z - math.log(sd) - _LOG_SQRT_2PI - _log_mass(mu, sd, lo, hi)


def tn_draw(rng: np.random.Generator, mu: float, sd: float, lo: float, hi: float) -> float:
    for _ in range(1000):
        x = mu + sd * rng.standard_normal()
        if lo < x < hi:
            return x
    # far from the bounds' bulk: inverse-cdf fallback
    pa, pb = _ndtr((lo - mu) / sd), _ndtr((hi - mu) / sd)
    from ._special import norm_ppf_scalar
    x = mu + sd * norm_ppf_scalar(pa + (pb - pa) * rng.random())
    return min(max(x, np.nextafter(lo, hi)), np.nextafter(hi, lo))


def qN_masses(num_edges: int, shape: float = 3.5):
    """Raw magnitudes and renormalized masses of the edge-count proposal."""
    if num_edges < 1:
        raise ConfigError("need at least one edge")
    e = math.exp(-shape)
    k = np.arange(1, num_edges + 1)
    raw = np.abs(np.log(1.0 - (1.0 - e) / (num_edges * e + k * (1.0 - e))) / shape)
    return raw, raw / raw.sum()


def draw_qN(num_edges: int, rng: np.random.Generator, shape: float = 3.5) -> int:
    return int(rng.choice(num_edges, p=qN_masses(num_edges, shape)[1])) + 1


def floored_probs(logliks: Sequence[float], floor: float) -> np.ndarray:
    """Likelihood-proportional probabilities with min/max ratio at least ``floor``."""
    ll = np.asarray(logliks, dtype=float)
    w = np.exp(ll - ll.max())
    w = np.maximum(w, floor)
    return w / w.sum()


def log_param_prior(group: str, theta, prior: PriorConfig) -> float:
    """Prior log density of one edge's parameters on the (tau, log nu) scale."""
    if group == "I":
        return 0.0
    tau, lognu = theta
    if not -1.0 < tau < 1.0:
        return -math.inf
    lp = -math.log(2.0)
    if group == "T":
        if not 0.0 < lognu < LOG30:
            return -math.inf
        if prior.df_prior == "log":
            lp += math.log(lognu) - LOG_DF_NORM + lognu
        else:
            lp -= math.log(LOG30)
    return lp


def log_prior(stp_count: int, families: Sequence[str], params: Sequence, prior: PriorConfig) -> float:
    """Level prior with parameters on their natural scale (tau, df).

    Uniform over the admissible trees, ``exp(-lambda * d_k)`` over families,
    flat on tau and ``log(nu) / int_1^30 log x dx`` on Student-t df.
    """
    lp = -math.log(stp_count) - prior.lam * sum(n_params(g) for g in families)
    for g, th in zip(families, params):
        if g == "I":
            continue
        tau = th[0]
        if not -1.0 < tau < 1.0:
            return -math.inf
        lp -= math.log(2.0)
        if g == "T":
            df = th[1]
            if not 1.0 < df < 30.0:
                return -math.inf
            if prior.df_prior == "log":
                lp += math.log(math.log(df)) - LOG_DF_NORM
            else:
                lp += -math.log(df) - math.log(LOG30)
    return lp


def _natural(code: int, tau: float) -> float:
    if code == K.GAUSS or code == K.STUDENT:
        return math.sin(0.5 * math.pi * tau)
    a = abs(tau)
    if code == K.CLAYTON:
        return 2.0 * a / (1.0 - a)
    return 1.0 / (1.0 - a)


def pair_from_group(group: str, theta) -> PairCopula:
    if group == "I":
        return PairCopula(FamilyTag("I"))
    tag = FamilyTag.parse(group)
    tau, lognu = theta
    return PairCopula(tag, tau, min(math.exp(lognu), 30.0) if group == "T" else None)


def group_of(pc: PairCopula) -> tuple:
    g = pc.family.group
    theta = (pc.tau, math.log(pc.df) if pc.df is not None else math.nan)
    return g, theta


# -- evaluation nodes -------------------------------------------------------------

class _Node:
    __slots__ = ("key", "level", "group", "theta", "pa", "oa", "pb", "ob", "ca", "cb",
                 "ll", "h1", "h2", "xa", "xb", "sa", "sb", "skey", "desc", "slot", "hmask")

    def __init__(self, key, level, group, theta, pa, oa, pb, ob, ca=None, cb=None):
        self.key = key
        self.level = level
        self.group = group
        self.theta = theta
        self.pa, self.oa, self.pb, self.ob = pa, oa, pb, ob
        self.ca, self.cb = ca, cb
        self.ll = 0.0
        self.h1 = self.h2 = None
        self.xa = self.xb = self.sa = self.sb = self.skey = None
        self.desc = ()
        self.slot = -1
        self.hmask = 0  # bit 1: h1 is consumed upstream, bit 2: h2


class _Eval:
    __slots__ = ("ll", "h1", "h2", "xa", "xb", "sa", "sb", "skey")

    def __init__(self, ll, h1, h2, xa, xb, sa, sb, skey):
        self.ll, self.h1, self.h2 = ll, h1, h2
        self.xa, self.xb, self.sa, self.sb, self.skey = xa, xb, sa, sb, skey


def _commit(node: _Node, ev: _Eval):
    node.ll, node.h1, node.h2 = ev.ll, ev.h1, ev.h2
    node.xa, node.xb, node.sa, node.sb, node.skey = ev.xa, ev.xb, ev.sa, ev.sb, ev.skey


@dataclass
class LevelTrace:
    level: int
    iters: np.ndarray
    model_ids: np.ndarray
    loglik: np.ndarray
    move: np.ndarray       # 0 none, 1 family, 2 tree
    accepted: np.ndarray
    model_labels: list     # id -> label string

    MOVES = ("none", "family", "tree")

    def model_hash(self, i: int) -> str:
        return _hash(self.model_labels[self.model_ids[i]])

    def records(self):
        for i in range(len(self.iters)):
            yield {
                "iter": int(self.iters[i]),
                "level": self.level,
                "model_hash": self.model_hash(i),
                "loglik": float(self.loglik[i]),
                "accepted_move": self.MOVES[self.move[i]] if self.accepted[i] else "none",
            }


def _hash(label: str) -> str:
    return hashlib.sha1(label.encode()).hexdigest()[:12]


class ModeTracker:
    """Visit counts and running parameter sums per model.

    ``add`` receives the canonical label (used for mode counting), the
    concrete model key and the parameter vectors to average.
    """

    def __init__(self):
        self.canon = {}      # canonical -> [count, first]
        self.concrete = {}   # key -> [count, first, canonical, sum_lower, sum_level]
        self.n = 0

    def add(self, canonical, key, lower_vec, level_vec):
        rec = self.canon.get(canonical)
        if rec is None:
            self.canon[canonical] = [1, self.n]
        else:
            rec[0] += 1
        c = self.concrete.get(key)
        if c is None:
            self.concrete[key] = [1, self.n, canonical, np.array(lower_vec, float),
                                  np.array(level_vec, float)]
        else:
            c[0] += 1
            c[3] += lower_vec
            c[4] += level_vec
        self.n += 1

    def mode(self):
        if self.n == 0:
            raise ValueError("no post-burn-in iterations to summarize")
        label, (count, _) = min(self.canon.items(), key=lambda kv: (-kv[1][0], kv[1][1]))
        members = [(k, v) for k, v in self.concrete.items() if v[2] == label]
        key, rec = min(members, key=lambda kv: (-kv[1][0], kv[1][1]))
        return {
            "label": label,
            "frequency": count / self.n,
            "key": key,
            "lower_mean": rec[3] / rec[0],
            "level_mean": rec[4] / rec[0],
        }

    def table(self):
        rows = sorted(self.canon.items(), key=lambda kv: (-kv[1][0], kv[1][1]))
        return [(lab, cnt / self.n) for lab, (cnt, _) in rows]


def posterior_mode(records) -> dict:
    """Mode of a sequence of ``(label, params)`` or ``(label, key, lower, level)`` records."""
    t = ModeTracker()
    for rec in records:
        if len(rec) == 2:
            label, params = rec
            t.add(label, label, np.zeros(0), np.asarray(params, float))
        else:
            t.add(*rec)
    return t.mode()


# -- the level sampler ------------------------------------------------------------

@dataclass
class LevelEstimate:
    level: int
    tree: tuple
    labels: list
    families: list
    params: list
    lower_params: list
    mode_label: str
    mode_frequency: float
    model_table: list
    trace: LevelTrace
    acceptance: dict
    transitions: list = field(default_factory=list)


class LevelSampler:
    """Reversible jump chain over (T_k, B_k, theta_{1:k}) for one level.

    ``data`` is an (n, d) array of copula data or ``None`` for a chain that
    targets the prior only (likelihood identically one).
    """

    def __init__(self, k: int, data: Optional[np.ndarray], d: int, lower: VineStructure,
                 lower_groups: Sequence[Sequence[str]], lower_thetas: Sequence[Sequence],
                 prior: PriorConfig, tuning: TuningParams, rng: np.random.Generator):
        self.k, self.d = k, d
        self.prior, self.tuning, self.rng = prior, tuning, rng
        self.free = data is None
        if lower.n_levels != k - 1:
            raise ConfigError(f"level {k} needs exactly {k - 1} lower trees")
        self.lower_struct = lower
        self.cols = None
        if not self.free:
            data = np.asarray(data, dtype=float)
            self.cols = [np.ascontiguousarray(data[:, v]) for v in range(d)]
        self._build_candidates()
        self._build_lower(lower_groups, lower_thetas)
        # level-entry inputs for the plug-in estimates
        self.entry = {e: self._cand_inputs(e) for e in self.cand} if not self.free else {}
        self.plugin_cache = {}
        self.families = tuning.families
        # initial state: arbitrary admissible tree, all independence
        tree = sample_spanning_tree(self.graph, np.ones(len(self.graph.edges)), rng)
        self.knodes = {}
        for e in sorted(tree):
            self.knodes[e] = self._make_knode(e, "I", (0.0, math.nan))
        self.transitions = []

    # construction ---------------------------------------------------------------
    def _build_lower(self, lower_groups, lower_thetas):
        self.lower = []
        slot = 0
        for l, (labs, srcs) in enumerate(zip(self.lower_struct.labels, self.lower_struct.sources), 1):
            row = []
            for e, (lab, src) in enumerate(zip(labs, srcs)):
                g = lower_groups[l - 1][e]
                th = tuple(lower_thetas[l - 1][e]) if g != "I" else (0.0, math.nan)
                if l == 1:
                    node = _Node((l, e), l, g, th, None, -1, None, -1,
                                 ca=None if self.free else self.cols[src.a[0]],
                                 cb=None if self.free else self.cols[src.b[0]])
                else:
                    prev = self.lower[l - 2]
                    node = _Node((l, e), l, g, th, prev[src.a[0]], src.a[1], prev[src.b[0]], src.b[1])
                if g != "I":
                    node.slot = slot
                    slot += n_params(g)
                row.append(node)
            self.lower.append(row)
        self.n_lower_slots = slot
        # only h outputs read by the next level (or by a level-k candidate) are computed
        for row in self.lower[1:]:
            for node in row:
                node.pa.hmask |= 1 << node.oa
                node.pb.hmask |= 1 << node.ob
        if self.lower:
            top = self.lower[-1]
            for _, src in self.cand.values():
                top[src.a[0]].hmask |= 1 << src.a[1]
                top[src.b[0]].hmask |= 1 << src.b[1]
        for row in self.lower:
            for node in row:
                _commit(node, self._evaluate(node, node.group, node.theta, *self._inputs(node, None),
                                             node.hmask))
        # descendants among lower levels, in level order
        children = {}
        for row in self.lower[1:]:
            for node in row:
                children.setdefault(id(node.pa), []).append(node)
                children.setdefault(id(node.pb), []).append(node)
        for l in range(len(self.lower) - 1, -1, -1):
            for node in self.lower[l]:
                seen, out = set(), []
                for ch in children.get(id(node), []):
                    for x in (ch,) + tuple(ch.desc):
                        if id(x) not in seen:
                            seen.add(id(x))
                            out.append(x)
                node.desc = tuple(sorted(out, key=lambda x: x.level))
        self.param_nodes = [n for row in self.lower for n in row if n.group != "I"]
        self.lower_vec = np.zeros(self.n_lower_slots)
        for n in self.param_nodes:
            self._store_slot(n)
        self.lower_all_gauss = all(n.group in ("I", "N") for row in self.lower for n in row)

    def _store_slot(self, node):
        self.lower_vec[node.slot] = node.theta[0]
        if node.group == "T":
            self.lower_vec[node.slot + 1] = math.exp(node.theta[1])

    def _build_candidates(self):
        k = self.k
        if k == 1:
            self.graph = AllowedGraph.complete(self.d)
            self.cand = {e: (EdgeLabel(e[0], e[1], frozenset()), None) for e in self.graph.edges}
        else:
            self.graph = allowed_graph(self.lower_struct, k)
            labs = self.lower_struct.labels[k - 2]
            self.cand = {}
            for p, q in self.graph.edges:
                self.cand[(p, q)] = join_edges(labs[p], labs[q], p, q)
        self.stp = count_spanning_trees(self.graph)
        self.tree_prop = TreeProposal(self.graph, self.tuning.p_tree) if self.stp >= 2 else None

    def _cand_sources(self, e):
        if self.k == 1:
            return None, -1, None, -1
        src = self.cand[e][1]
        prev = self.lower[self.k - 2]
        return prev[src.a[0]], src.a[1], prev[src.b[0]], src.b[1]

    def _cand_inputs(self, e):
        if self.free:
            return None, None
        if self.k == 1:
            return self.cols[e[0]], self.cols[e[1]]
        pa, oa, pb, ob = self._cand_sources(e)
        return (pa.h1 if oa == 0 else pa.h2), (pb.h1 if ob == 0 else pb.h2)

    def _make_knode(self, e, group, theta, evaluate=True):
        pa, oa, pb, ob = self._cand_sources(e)
        ca = cb = None
        if self.k == 1 and not self.free:
            ca, cb = self.cols[e[0]], self.cols[e[1]]
        node = _Node(e, self.k, group, theta, pa, oa, pb, ob, ca, cb)
        if evaluate:
            _commit(node, self._evaluate(node, group, theta, *self._inputs(node, None), 0))
        return node

    # evaluation -----------------------------------------------------------------
    def _inputs(self, node, pending):
        if self.free:
            return None, None
        if node.pa is None:
            return node.ca, node.cb
        pa, pb = node.pa, node.pb
        ea = pending.get(pa) if pending else None
        eb = pending.get(pb) if pending else None
        a = (ea.h1 if node.oa == 0 else ea.h2) if ea is not None else (pa.h1 if node.oa == 0 else pa.h2)
        b = (eb.h1 if node.ob == 0 else eb.h2) if eb is not None else (pb.h1 if node.ob == 0 else pb.h2)
        return a, b

    def _evaluate(self, node, group, theta, a, b, need_h) -> _Eval:
        if self.free:
            return _Eval(0.0, None, None, None, None, None, None, None)
        code, base = _INFO[group]
        if code == K.INDEP:
            return _Eval(0.0, a, b, None, None, a, b, None)
        tau, lognu = theta
        rot = base + 90 if (tau < 0 and code in (K.CLAYTON, K.GUMBEL)) else base
        par = _natural(code, tau)
        nu = math.exp(lognu) if code == K.STUDENT else 0.0
        skey = None
        if code == K.GAUSS or code == K.STUDENT:
            skey = (code, nu)
            # scores are cached per side, a cascade usually changes only one input
            same = node is not None and node.skey == skey
            xa = node.xa if same and node.sa is a else self._scores(code, nu, a)
            xb = node.xb if same and node.sb is b else self._scores(code, nu, b)
        else:
            xa, xb = a, b
        h1 = np.empty(a.size) if need_h & 1 else None
        h2 = np.empty(a.size) if need_h & 2 else None
        ll = K.edge_eval(code, rot, par, nu, a, b, xa, xb, need_h,
                         _EMPTY if h1 is None else h1, _EMPTY if h2 is None else h2, _EMPTY)
        if not math.isfinite(ll):
            ll = -math.inf
        return _Eval(ll, h1, h2, xa, xb, a, b, skey)

    @staticmethod
    def _scores(code, nu, u):
        x = np.empty(u.size)
        if code == K.GAUSS:
            K.scores_normal(u, x)
        else:
            K.scores_t(u, nu, x)
        return x

    def level_loglik(self) -> float:
        return sum(n.ll for n in self.knodes.values())

    def total_loglik(self) -> float:
        return sum(n.ll for row in self.lower for n in row) + self.level_loglik()

    # plug-in estimates ---------------------------------------------------------
    def plugin(self, e) -> dict:
        """``{group: (theta_hat, loglik_at_theta_hat)}`` for candidate edge ``e``."""
        hit = self.plugin_cache.get(e)
        if hit is not None:
            return hit
        out = {}
        if self.free:
            for g in self.families:
                out[g] = ((0.0, 0.5 * LOG30 if g == "T" else math.nan), 0.0)
        else:
            a, b = self.entry[e]
            tau = empirical_tau(a, b)
            for g in self.families:
                if g == "I":
                    out[g] = ((0.0, math.nan), 0.0)
                    continue
                lognu = math.log(fit_df(tau, a, b)) if g == "T" else math.nan
                th = (tau, lognu)
                out[g] = (th, self._evaluate(None, g, th, a, b, 0).ll)
        self.plugin_cache[e] = out
        return out

    def _theta_logpdf(self, g, theta, center) -> float:
        if g == "I":
            return 0.0
        t = self.tuning
        lp = tn_logpdf(theta[0], center[0], t.sigma_tau, *TAU_BOUNDS)
        if g == "T":
            lp += tn_logpdf(theta[1], center[1], t.sigma_lognu, *LOGNU_BOUNDS)
        return lp

    def _theta_draw(self, g, center):
        if g == "I":
            return (0.0, math.nan)
        t = self.tuning
        tau = tn_draw(self.rng, center[0], t.sigma_tau, *TAU_BOUNDS)
        lognu = tn_draw(self.rng, center[1], t.sigma_lognu, *LOGNU_BOUNDS) if g == "T" else math.nan
        return (tau, lognu)

    # within-model move -----------------------------------------------------------
    def within_model_move(self):
        for node in self.param_nodes:
            self._site_update(node, 0, lower=True)
            if node.group == "T":
                self._site_update(node, 1, lower=True)
        for node in list(self.knodes.values()):
            if node.group == "I":
                continue
            self._site_update(node, 0, lower=False)
            if node.group == "T":
                self._site_update(node, 1, lower=False)

    def _site_update(self, node, idx, lower):
        t = self.tuning
        sd = t.sigma_tau if idx == 0 else t.sigma_lognu
        lo, hi = TAU_BOUNDS if idx == 0 else LOGNU_BOUNDS
        x = node.theta[idx]
        x_new = tn_draw(self.rng, x, sd, lo, hi)
        theta_new = (x_new, node.theta[1]) if idx == 0 else (node.theta[0], x_new)
        log_r = (_log_mass(x, sd, lo, hi) - _log_mass(x_new, sd, lo, hi)
                 + log_param_prior(node.group, theta_new, self.prior)
                 - log_param_prior(node.group, node.theta, self.prior))
        if lower:
            delta, pending = self._cascade(node, theta_new)
        else:
            ev = self._evaluate(node, node.group, theta_new, *self._inputs(node, None), 0)
            delta, pending = ev.ll - node.ll, {node: ev}
        log_r += delta
        if math.log(self.rng.random()) < log_r:
            node.theta = theta_new
            for n, ev in pending.items():
                _commit(n, ev)
            if lower:
                self._store_slot(node)
            return True
        return False

    def _cascade(self, node, theta_new):
        if self.free:
            return 0.0, {}
        pending = {}
        ev = self._evaluate(node, node.group, theta_new, *self._inputs(node, None), node.hmask)
        pending[node] = ev
        delta = ev.ll - node.ll
        for dn in node.desc:
            if dn.pa in pending or dn.pb in pending:
                ev = self._evaluate(dn, dn.group, dn.theta, *self._inputs(dn, pending), dn.hmask)
                pending[dn] = ev
                delta += ev.ll - dn.ll
        for kn in self.knodes.values():
            if kn.pa in pending or kn.pb in pending:
                ev = self._evaluate(kn, kn.group, kn.theta, *self._inputs(kn, pending), 0)
                pending[kn] = ev
                delta += ev.ll - kn.ll
        return delta, pending

    # between-models moves -----------------------------------------------------------
    def _fam_logprob(self, e, g, exclude) -> float:
        pl = self.plugin(e)
        cands = [h for h in self.families if h != exclude]
        probs = floored_probs([pl[h][1] for h in cands], self.tuning.proposal_floor)
        return math.log(probs[cands.index(g)])

    def _fam_draw(self, e, exclude):
        pl = self.plugin(e)
        cands = [h for h in self.families if h != exclude]
        probs = floored_probs([pl[h][1] for h in cands], self.tuning.proposal_floor)
        g = cands[int(self.rng.choice(len(cands), p=probs))]
        return g, math.log(probs[cands.index(g)])

    def _state(self):
        return (tuple(sorted(self.knodes)),
                {e: (n.group, n.theta) for e, n in self.knodes.items()})

    def family_move(self) -> bool:
        edges = sorted(self.knodes)
        N = draw_qN(len(edges), self.rng, self.tuning.qN_shape)
        chosen = sorted(self.rng.choice(len(edges), size=N, replace=False))
        log_r = 0.0
        new_nodes = {}
        for i in chosen:
            e = edges[i]
            cur = self.knodes[e]
            g_new, lq_fwd = self._fam_draw(e, cur.group)
            center_new = self.plugin(e)[g_new][0]
            th_new = self._theta_draw(g_new, center_new)
            lq_fwd += self._theta_logpdf(g_new, th_new, center_new)
            lq_rev = (self._fam_logprob(e, cur.group, g_new)
                      + self._theta_logpdf(cur.group, cur.theta, self.plugin(e)[cur.group][0]))
            node = self._make_knode(e, g_new, th_new)
            log_r += (node.ll - cur.ll
                      - self.prior.lam * (n_params(g_new) - n_params(cur.group))
                      + log_param_prior(g_new, th_new, self.prior)
                      - log_param_prior(cur.group, cur.theta, self.prior)
                      + lq_rev - lq_fwd)
            new_nodes[e] = node
        return self._accept(log_r, new_nodes, replace_all=False, move=1)

    def tree_move(self) -> bool:
        old_tree = frozenset(self.knodes)
        new_tree = self.tree_prop.sample(old_tree, self.rng)
        log_r = 0.0
        if not self.tuning.paper_cancellation:
            log_r += self.tree_prop.lognormalizer(old_tree) - self.tree_prop.lognormalizer(new_tree)
        new_nodes = {}
        for e in sorted(new_tree):
            g, lq = self._fam_draw(e, None)
            center = self.plugin(e)[g][0]
            th = self._theta_draw(g, center)
            lq += self._theta_logpdf(g, th, center)
            node = self._make_knode(e, g, th)
            log_r += (node.ll - self.prior.lam * n_params(g)
                      + log_param_prior(g, th, self.prior) - lq)
            new_nodes[e] = node
        for e, cur in self.knodes.items():
            lq = (self._fam_logprob(e, cur.group, None)
                  + self._theta_logpdf(cur.group, cur.theta, self.plugin(e)[cur.group][0]))
            log_r -= (cur.ll - self.prior.lam * n_params(cur.group)
                      + log_param_prior(cur.group, cur.theta, self.prior) - lq)
        return self._accept(log_r, new_nodes, replace_all=True, move=2)

    def _accept(self, log_r, new_nodes, replace_all, move) -> bool:
        if not math.isfinite(log_r) and log_r > 0:
            log_r = 0.0
        log_alpha = min(0.0, log_r) if not math.isnan(log_r) else -math.inf
        record = len(self.transitions) < self.tuning.record_transitions
        if record:
            before = self._state()
        ok = math.log(self.rng.random()) < log_alpha
        if replace_all:
            proposal = dict(new_nodes)
        else:
            proposal = dict(self.knodes)
            proposal.update(new_nodes)
        if record:
            after = (tuple(sorted(proposal)), {e: (n.group, n.theta) for e, n in proposal.items()})
            lower = tuple(tuple(n.theta for n in row) for row in self.lower)
            self.transitions.append({"move": move, "x": before, "y": after, "lower": lower,
                                     "log_alpha": log_alpha, "accepted": ok})
        if ok:
            self.knodes = dict(sorted(proposal.items()))
        return ok

    # labels ---------------------------------------------------------------------
    def model_key(self):
        return tuple((e, n.group) for e, n in self.knodes.items())

    def canonical(self, key) -> object:
        if self.lower_all_gauss and all(g in ("I", "N") for _, g in key):
            return "GAUSS"
        return key

    def key_label(self, key) -> str:
        return " ".join(f"{self.cand[e][0]}={g}" for e, g in key)

    def level_vector(self) -> np.ndarray:
        out = []
        for n in self.knodes.values():
            if n.group == "I":
                continue
            out.append(n.theta[0])
            if n.group == "T":
                out.append(math.exp(n.theta[1]))
        return np.array(out)

    # driver ---------------------------------------------------------------------
    def run(self) -> LevelEstimate:
        t = self.tuning
        R = t.R
        iters = np.arange(1, R + 1)
        model_ids = np.empty(R, dtype=np.int64)
        loglik = np.empty(R)
        moves = np.zeros(R, dtype=np.int8)
        accepted = np.zeros(R, dtype=bool)
        ids, labels = {}, []
        tracker = ModeTracker()
        tried = Counter()
        acc = Counter()
        for r in range(R):
            self.within_model_move()
            if self.tree_prop is None or self.rng.random() < 0.5:
                move, ok = 1, self.family_move()
            else:
                move, ok = 2, self.tree_move()
            tried[move] += 1
            acc[move] += ok
            key = self.model_key()
            mid = ids.get(key)
            if mid is None:
                mid = ids[key] = len(labels)
                labels.append(self.key_label(key))
            model_ids[r] = mid
            loglik[r] = self.total_loglik()
            moves[r] = move
            accepted[r] = ok
            if r >= t.burn_in:
                tracker.add(self.canonical(key), key, self.lower_vec, self.level_vector())
        trace = LevelTrace(self.k, iters, model_ids, loglik, moves, accepted, labels)
        mode = tracker.mode()
        key = mode["key"]
        tree = tuple(e for e, _ in key)
        fams = [g for _, g in key]
        params, j = [], 0
        vec = mode["level_mean"]
        for g in fams:
            if g == "I":
                params.append((0.0, None))
            elif g == "T":
                params.append((float(vec[j]), float(vec[j + 1])))
                j += 2
            else:
                params.append((float(vec[j]), None))
                j += 1
        lower_params = []
        lv = mode["lower_mean"]
        for row in self.lower:
            out = []
            for n in row:
                if n.group == "I":
                    out.append((0.0, None))
                elif n.group == "T":
                    out.append((float(lv[n.slot]), float(lv[n.slot + 1])))
                else:
                    out.append((float(lv[n.slot]), None))
            lower_params.append(out)
        label = mode["label"] if isinstance(mode["label"], str) else self.key_label(mode["label"])
        table = [(lab if isinstance(lab, str) else self.key_label(lab), f) for lab, f in tracker.table()]
        return LevelEstimate(
            level=self.k, tree=tree, labels=[self.cand[e][0] for e in tree], families=fams,
            params=params, lower_params=lower_params, mode_label=label,
            mode_frequency=mode["frequency"], model_table=table, trace=trace,
            acceptance={LevelTrace.MOVES[m]: acc[m] / tried[m] for m in tried},
            transitions=list(self.transitions),
        )


# -- audit helpers ------------------------------------------------------------------

def audit_log_target(sampler: LevelSampler, state, data, lower=None) -> float:
    """Unnormalized log posterior of a level state, recomputed from scratch.

    ``lower`` holds the lower-level parameters per level; defaults to the
    sampler's current values.
    """
    tree, fams = state
    s = sampler
    if lower is None:
        lower = [[n.theta for n in row] for row in s.lower]
    lower_pairs = [[pair_from_group(n.group, th) for n, th in zip(row, ths)]
                   for row, ths in zip(s.lower, lower)]
    struct = VineStructure(s.d, s.lower_struct.trees + (tuple(tree),))
    lab_order = struct.trees[s.k - 1]
    level_pairs = [pair_from_group(*fams[e]) for e in lab_order]
    lp = -math.log(s.stp)
    for row, ths in zip(s.lower, lower):
        for n, th in zip(row, ths):
            lp += log_param_prior(n.group, th, s.prior)
    for e in lab_order:
        g, th = fams[e]
        lp += -s.prior.lam * n_params(g) + log_param_prior(g, th, s.prior)
    if data is None:
        return lp
    cop = VineCopula(struct, lower_pairs + [level_pairs])
    return lp + sum(forward(cop, data)[0])


def audit_log_q(sampler: LevelSampler, x, y, move: int) -> float:
    """Log proposal density of the between-models move from ``x`` to ``y``."""
    s = sampler
    t = s.tuning
    tree_x, fx = x
    tree_y, fy = y
    mix = math.log(0.5) if s.tree_prop is not None else 0.0

    def fam_lp(e, g, exclude):
        pl = s.plugin(e)
        cands = [h for h in t.families if h != exclude]
        w = np.array([pl[h][1] for h in cands])
        p = np.maximum(np.exp(w - w.max()), t.proposal_floor)
        return math.log(p[cands.index(g)] / p.sum())

    def theta_lp(e, g, th):
        if g == "I":
            return 0.0
        c = s.plugin(e)[g][0]
        v = tn_logpdf(th[0], c[0], t.sigma_tau, -1.0, 1.0)
        if g == "T":
            v += tn_logpdf(th[1], c[1], t.sigma_lognu, 0.0, LOG30)
        return v

    if move == 1:
        if tree_x != tree_y:
            return -math.inf
        changed = [e for e in tree_x if fx[e][0] != fy[e][0]]
        if any(fx[e] != fy[e] for e in tree_x if e not in changed) or not changed:
            return -math.inf
        m, N = len(tree_x), len(changed)
        lq = mix + math.log(qN_masses(m, t.qN_shape)[1][N - 1]) - math.log(math.comb(m, N))
        for e in changed:
            lq += fam_lp(e, fy[e][0], fx[e][0]) + theta_lp(e, *fy[e])
        return lq
    if frozenset(tree_x) == frozenset(tree_y):
        return -math.inf
    g = s.graph
    w = [t.p_tree if e in set(tree_x) else 1.0 - t.p_tree for e in g.edges]
    total = log_weighted_tree_sum(g, w)
    own = len(tree_x) * math.log(t.p_tree)
    lz = total + math.log1p(-math.exp(own - total))
    lq = mix + qT_logweight(frozenset(tree_x), frozenset(tree_y), t.p_tree) - lz
    for e in tree_y:
        lq += fam_lp(e, fy[e][0], None) + theta_lp(e, *fy[e])
    return lq


def audit_detailed_balance(sampler: LevelSampler, data) -> list:
    """Residuals of alpha(x,y) q(x,y) pi(x) = alpha(y,x) q(y,x) pi(y) for logged moves."""
    out = []
    for rec in sampler.transitions:
        x, y, move = rec["x"], rec["y"], rec["move"]
        lower = rec["lower"]
        px, py = audit_log_target(sampler, x, data, lower), audit_log_target(sampler, y, data, lower)
        qxy, qyx = audit_log_q(sampler, x, y, move), audit_log_q(sampler, y, x, move)
        a_yx = min(0.0, px + qxy - py - qyx)
        out.append((rec["log_alpha"] + qxy + px) - (a_yx + qyx + py))
    return out


# -- tree-by-tree driver -----------------------------------------------------------

@dataclass
class SelectionResult:
    copula: VineCopula
    levels: list


def _theta_from(params):
    tau, df = params
    return (tau, math.log(df) if df is not None else math.nan)


def run_level(k: int, data, lower: VineStructure, lower_groups, lower_thetas,
              prior: PriorConfig, tuning: TuningParams, rng: np.random.Generator,
              d: Optional[int] = None) -> LevelEstimate:
    d = data.shape[1] if data is not None else d
    return LevelSampler(k, data, d, lower, lower_groups, lower_thetas, prior, tuning, rng).run()


def select_vine(data, prior: PriorConfig = PriorConfig(), tuning: TuningParams = TuningParams(),
                seed: int = 0, levels: Optional[int] = None, progress=None) -> SelectionResult:
    """Select a vine copula level by level; returns the estimate and per-level results."""
    from .streams import stream

    data = np.asarray(data, dtype=float)
    n, d = data.shape
    top = d - 1 if levels is None else min(levels, d - 1)
    struct = VineStructure(d, ())
    groups, thetas = [], []
    results = []
    for k in range(1, top + 1):
        rng = stream(seed, "rjmcmc", "level", k)
        est = run_level(k, data, struct, groups, thetas, prior, tuning, rng)
        thetas = [[_theta_from(p) for p in row] for row in est.lower_params]
        groups.append(list(est.families))
        thetas.append([_theta_from(p) for p in est.params])
        struct = VineStructure(d, struct.trees + (tuple(est.tree),))
        results.append(est)
        if progress is not None:
            progress(k, est)
    pairs = [[pair_from_group(g, th) for g, th in zip(gr, tr)] for gr, tr in zip(groups, thetas)]
    if top < d - 1:
        # fill the remaining trees with an arbitrary valid completion under independence
        full = _complete_structure(struct)
        pairs += [[PairCopula(FamilyTag("I"))] * len(t) for t in full.trees[top:]]
        return SelectionResult(VineCopula(full, pairs, truncation=top), results)
    return SelectionResult(VineCopula(struct, pairs), results)


def _complete_structure(struct: VineStructure) -> VineStructure:
    s = struct
    while not s.complete:
        g = allowed_graph(s, s.n_levels + 1)
        tree = sorted(sample_spanning_tree(g, np.ones(len(g.edges)), np.random.default_rng(0)))
        s = VineStructure(s.d, s.trees + (tuple(tree),))
    return s


__all__ = [
    "GROUPS", "PriorConfig", "TuningParams", "ConfigError", "LevelSampler", "LevelEstimate",
    "LevelTrace", "SelectionResult", "ModeTracker", "posterior_mode", "select_vine", "run_level",
    "log_prior", "log_param_prior", "qN_masses", "draw_qN", "floored_probs", "tn_logpdf",
    "tn_draw", "pair_from_group", "group_of", "audit_detailed_balance", "audit_log_target",
    "audit_log_q", "n_params",
]
