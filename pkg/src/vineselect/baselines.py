"""Reference methods and simulation scenarios.

* ``dissmann_select``: greedy level-by-level selection with maximum spanning
  trees on |Kendall's tau| and copula-by-copula AIC.
* ``gaussian_copula_mle``: correlation matrix of a multivariate Gaussian copula.
* ``scenario``: the four six-dimensional vine copulas of the simulation study.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from ._special import norm_ppf
from .pair_copulas import EstimationError, FamilyTag, NumericalError, PairCopula, eval_edge, fit_df
from .pair_copulas import empirical_tau
from .rjmcmc import GROUPS, n_params
from .tree_space import allowed_graph
from .vine import VineCopula, VineStructure, _check_data, join_edges, vine_loglik


# -- scenarios ------------------------------------------------------------------------

def _pc(tag: str, tau: float = 0.0, df: Optional[float] = None) -> PairCopula:
    return PairCopula(FamilyTag.parse(tag), tau, df)


_SCENARIOS = {
    1: [
        [("1,2", _pc("N", .59)), ("2,3", _pc("C", .71)), ("3,4", _pc("C180", .80)),
         ("3,5", _pc("N", -.71)), ("3,6", _pc("T", .65, 3))],
        [("1,3|2", _pc("G", .75)), ("2,4|3", _pc("N", .41)), ("2,5|3", _pc("C270", -.60)),
         ("2,6|3", _pc("N", -.37))],
        [("1,4|2,3", _pc("T", .26, 5)), ("1,5|2,3", _pc("N", -.26)), ("1,6|2,3", _pc("C90", -.56))],
        [("4,6|1,2,3", _pc("N", .13)), ("5,6|1,2,3", _pc("C", .20))],
        [("4,5|1,2,3,6", _pc("G180", .52))],
    ],
    2: [
        [("1,2", _pc("T", .54, 5)), ("1,3", _pc("C90", -.67)), ("1,4", _pc("C180", .64)),
         ("1,5", _pc("N", -.59)), ("1,6", _pc("T", .54, 6))],
        [("2,3|1", _pc("G", .71)), ("2,4|1", _pc("G270", -.71)), ("2,5|1", _pc("C270", -.60)),
         ("2,6|1", _pc("N", -.45))],
        [("3,4|1,2", _pc("T", .30, 8)), ("3,5|1,2", _pc("N", -.30)), ("3,6|1,2", _pc("C90", -.43))],
        [("4,5|1,2,3", _pc("N", .19)), ("4,6|1,2,3", _pc("C", .43))],
        [("5,6|1,2,3,4", _pc("G180", .50))],
    ],
    4: [
        [("1,2", _pc("N", .41)), ("2,3", _pc("N", .49)), ("2,4", _pc("N", -.33)),
         ("3,5", _pc("N", -.26)), ("3,6", _pc("N", .13))],
        [("1,3|2", _pc("N", .59)), ("2,5|3", _pc("N", .13)), ("3,4|2", _pc("N", .41)),
         ("5,6|3", _pc("N", -.33))],
        [("1,5|2,3", _pc("N", .26)), ("2,6|3,5", _pc("N", -.41)), ("4,5|2,3", _pc("N", .19))],
        [("1,6|2,3,5", _pc("N", .49)), ("4,6|2,3,5", _pc("N", .41))],
        [("1,4|2,3,5,6", _pc("N", -.33))],
    ],
}


def scenario(sid: int) -> VineCopula:
    """Vine copula of simulation scenario ``sid`` (1..4)."""
    if sid == 3:
        s1 = _SCENARIOS[1]
        first = [("1,2", _pc("N", .41)), ("2,3", _pc("C", .50)), ("3,4", _pc("C180", .50)),
                 ("3,5", _pc("N", -.33)), ("3,6", _pc("T", .49, 5))]
        rest = [[(lab, _pc("I")) for lab, _ in lv] for lv in s1[1:]]
        return VineCopula.from_labels(6, [first] + rest, truncation=1)
    if sid not in _SCENARIOS:
        raise ValueError(f"unknown scenario {sid!r}; choose 1, 2, 3 or 4")
    return VineCopula.from_labels(6, _SCENARIOS[sid])


# -- Dissmann selection -------------------------------------------------------------------

def _mst(n: int, edges: Sequence[tuple], weights: Sequence[float]) -> list:
    """Maximum-weight spanning tree by Kruskal; ties broken by edge order."""
    order = sorted(range(len(edges)), key=lambda i: (-weights[i], edges[i]))
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    tree = []
    for i in order:
        a, b = edges[i]
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            tree.append(edges[i])
    return sorted(tree)


def _aic_select(a, b, families) -> PairCopula:
    try:
        tau = empirical_tau(a, b)
    except EstimationError:
        return PairCopula(FamilyTag("I"))
    best, best_aic = PairCopula(FamilyTag("I")), 0.0 if "I" in families else math.inf
    for g in families:
        if g == "I":
            continue
        df = fit_df(tau, a, b) if g == "T" else None
        pc = PairCopula(FamilyTag.parse(g), tau, df)
        ll = eval_edge(pc, a, b, need_h=False)[0]
        aic = -2.0 * ll + 2.0 * n_params(g)
        if aic < best_aic:
            best, best_aic = pc, aic
    return best


def dissmann_select(data, families: Sequence[str] = GROUPS, levels: Optional[int] = None) -> VineCopula:
    """Greedy selection: max spanning tree on |tau|, then AIC per edge, level by level."""
    U = _check_data(data, np.asarray(data).shape[1])
    n, d = U.shape
    cols = [np.ascontiguousarray(U[:, j]) for j in range(d)]
    top = d - 1 if levels is None else min(levels, d - 1)
    struct = VineStructure(d, ())
    pairs, outs = [], None
    for k in range(1, d):
        g = allowed_graph(struct, k)
        inputs = {}
        for p, q in g.edges:
            if k == 1:
                inputs[(p, q)] = (cols[p], cols[q])
            else:
                _, src = join_edges(struct.labels[k - 2][p], struct.labels[k - 2][q], p, q)
                inputs[(p, q)] = (outs[src.a[0]][src.a[1]], outs[src.b[0]][src.b[1]])
        weights = []
        for e in g.edges:
            try:
                weights.append(abs(empirical_tau(*inputs[e])))
            except EstimationError:
                weights.append(0.0)
        tree = _mst(g.n, g.edges, weights)
        struct = VineStructure(d, struct.trees + (tuple(tree),))
        level_pairs, new_outs = [], []
        for e in tree:
            a, b = inputs[e]
            pc = _aic_select(a, b, families) if k <= top else PairCopula(FamilyTag("I"))
            _, h1, h2 = eval_edge(pc, a, b, need_h=True)
            level_pairs.append(pc)
            new_outs.append((h1, h2))
        pairs.append(level_pairs)
        outs = new_outs
    return VineCopula(struct, pairs, truncation=top)


# -- Gaussian copula -------------------------------------------------------------------------

def _gauss_loglik(R: np.ndarray, Z: np.ndarray) -> float:
    sign, logdet = np.linalg.slogdet(R)
    if sign <= 0:
        return -math.inf
    Ri = np.linalg.inv(R)
    q = np.einsum("ij,jk,ik->i", Z, Ri - np.eye(len(R)), Z)
    return float(-0.5 * Z.shape[0] * logdet - 0.5 * q.sum())


def _normal_scores(U) -> np.ndarray:
    U = np.clip(np.asarray(U, dtype=float), 1e-10, 1 - 1e-10)
    return norm_ppf(U.ravel()).reshape(U.shape)


def gaussian_copula_mle(data, max_steps: int = 50) -> np.ndarray:
    """MLE of the Gaussian-copula correlation matrix.

    Starts from the correlation of normal scores and refines with
    projected gradient steps on the off-diagonal entries.
    """
    U = _check_data(data, np.asarray(data).shape[1])
    Z = _normal_scores(U)
    n, d = Z.shape
    R = np.corrcoef(Z, rowvar=False)
    R = _clip_pd(R)
    S = Z.T @ Z / n
    ll = _gauss_loglik(R, Z)
    for _ in range(max_steps):
        Ri = np.linalg.inv(R)
        G = Ri @ S @ Ri - Ri
        np.fill_diagonal(G, 0.0)
        if np.abs(G).max() < 1e-10:
            break
        step, improved = 0.1, False
        while step > 1e-8:
            Rn = R + step * G
            np.fill_diagonal(Rn, 1.0)
            lln = _gauss_loglik(Rn, Z)
            if lln > ll:
                R, ll, improved = Rn, lln, True
                break
            step *= 0.5
        if not improved:
            break
    return R


def _clip_pd(R: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    w, V = np.linalg.eigh((R + R.T) / 2)
    if w.min() > floor:
        return (R + R.T) / 2
    w = np.maximum(w, floor)
    R = (V * w) @ V.T
    s = np.sqrt(np.diag(R))
    R = R / np.outer(s, s)
    if np.linalg.eigvalsh(R).min() <= 0:
        raise NumericalError("correlation matrix is not positive definite after clipping")
    return R


def gaussian_copula_loglik(R: np.ndarray, data) -> float:
    U = _check_data(data, len(R))
    return _gauss_loglik(np.asarray(R, float), _normal_scores(U))


# -- study metrics -------------------------------------------------------------------------------

def model_loglik(model, data) -> float:
    """Log-likelihood of a vine copula, a Gaussian-copula correlation matrix, or ``None``
    (independence)."""
    if model is None:
        return 0.0
    if isinstance(model, VineCopula):
        return vine_loglik(model, data)
    return gaussian_copula_loglik(np.asarray(model), data)


def relative_loglik(estimate, truth, data) -> float:
    """100 * loglik(estimate) / loglik(truth); independence anchors zero."""
    lt = model_loglik(truth, data)
    if not lt > 0:
        raise NumericalError("true-model log-likelihood must be positive for a relative measure")
    return 100.0 * model_loglik(estimate, data) / lt


def nonindependence_counts(copula: VineCopula) -> list:
    """Number of non-independence pair copulas per level."""
    return [sum(pc.family.kind != "I" for pc in lv) for lv in copula.pairs]


def gaussian_or_independent(copula: VineCopula) -> int:
    return sum(pc.family.kind in ("I", "N") for lv in copula.pairs for pc in lv)


__all__ = [
    "scenario", "dissmann_select", "gaussian_copula_mle", "gaussian_copula_loglik",
    "model_loglik", "relative_loglik", "nonindependence_counts", "gaussian_or_independent",
]
