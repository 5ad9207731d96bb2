"""Spanning trees under the proximity condition: counting, sampling, enumeration.

Trees are represented as frozensets of sorted node pairs.  At level 1 nodes
are variables; at level k they are the edges of tree k-1 and two of them may
be joined only if they share exactly one node.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .vine import VineStructure


class TreeSpaceError(ValueError):
    pass


@dataclass(frozen=True)
class AllowedGraph:
    n: int
    edges: tuple

    def __post_init__(self):
        edges = tuple(sorted({(min(a, b), max(a, b)) for a, b in self.edges}))
        object.__setattr__(self, "edges", edges)

    @classmethod
    def complete(cls, n: int) -> "AllowedGraph":
        return cls(n, tuple(itertools.combinations(range(n), 2)))

    def edge_index(self) -> dict:
        return {e: idx for idx, e in enumerate(self.edges)}

    def is_connected(self) -> bool:
        if self.n <= 1:
            return True
        adj = [[] for _ in range(self.n)]
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        seen = {0}
        stack = [0]
        while stack:
            x = stack.pop()
            for y in adj[x]:
                if y not in seen:
                    seen.add(y)
                    stack.append(y)
        return len(seen) == self.n


def allowed_graph(structure: VineStructure, k: int) -> AllowedGraph:
    """Admissible graph for tree k given trees 1..k-1 of ``structure``."""
    if k == 1:
        return AllowedGraph.complete(structure.d)
    if structure.n_levels < k - 1:
        raise TreeSpaceError(f"trees 1..{k - 1} are needed to build level {k}")
    nodes = structure.trees[k - 2]
    edges = [(a, b) for a, b in itertools.combinations(range(len(nodes)), 2)
             if len(set(nodes[a]) & set(nodes[b])) == 1]
    return AllowedGraph(len(nodes), tuple(edges))


# -- counting ------------------------------------------------------------------

def _bareiss_det(M: list) -> int:
    """Exact determinant of an integer matrix (fraction-free elimination)."""
    n = len(M)
    if n == 0:
        return 1
    A = [row[:] for row in M]
    sign = 1
    prev = 1
    for k in range(n - 1):
        if A[k][k] == 0:
            for r in range(k + 1, n):
                if A[r][k] != 0:
                    A[k], A[r] = A[r], A[k]
                    sign = -sign
                    break
            else:
                return 0
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                A[i][j] = (A[i][j] * A[k][k] - A[i][k] * A[k][j]) // prev
        prev = A[k][k]
    return sign * A[n - 1][n - 1]


def count_spanning_trees(g: AllowedGraph) -> int:
    """Number of spanning trees by the matrix-tree theorem (exact integer)."""
    if g.n <= 1:
        return 1
    L = [[0] * g.n for _ in range(g.n)]
    for a, b in g.edges:
        L[a][a] += 1
        L[b][b] += 1
        L[a][b] -= 1
        L[b][a] -= 1
    return _bareiss_det([row[1:] for row in L[1:]])


def _laplacian_minor(g: AllowedGraph, weights) -> np.ndarray:
    L = np.zeros((g.n, g.n))
    for (a, b), w in zip(g.edges, weights):
        L[a, a] += w
        L[b, b] += w
        L[a, b] -= w
        L[b, a] -= w
    return L[1:, 1:]


def log_weighted_tree_sum(g: AllowedGraph, weights) -> float:
    """log of the sum over spanning trees of the product of edge weights."""
    if g.n <= 1:
        return 0.0
    sign, logdet = np.linalg.slogdet(_laplacian_minor(g, np.asarray(weights, float)))
    if sign <= 0:
        return -math.inf
    return float(logdet)


def weighted_tree_sum(g: AllowedGraph, weights) -> float:
    return math.exp(log_weighted_tree_sum(g, weights))


def enumerate_spanning_trees(g: AllowedGraph, limit: Optional[int] = None) -> list:
    """All spanning trees by brute force over edge subsets (small graphs only)."""
    out = []
    m = g.n - 1
    for combo in itertools.combinations(g.edges, m):
        if _is_tree(g.n, combo):
            out.append(frozenset(combo))
            if limit is not None and len(out) > limit:
                break
    return out


def _is_tree(n: int, edges) -> bool:
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra == rb:
            return False
        parent[ra] = rb
    return True


# -- sampling --------------------------------------------------------------------

def sample_spanning_tree(g: AllowedGraph, weights, rng: np.random.Generator) -> frozenset:
    """Spanning tree with probability proportional to the product of its weights.

    Wilson's algorithm: loop-erased random walks whose steps are chosen with
    probability proportional to edge weight.
    """
    n = g.n
    if n <= 1:
        return frozenset()
    weights = np.asarray(weights, dtype=float)
    nbrs = [[] for _ in range(n)]
    wts = [[] for _ in range(n)]
    for (a, b), w in zip(g.edges, weights):
        nbrs[a].append(b)
        wts[a].append(w)
        nbrs[b].append(a)
        wts[b].append(w)
    cum = [np.cumsum(w) for w in wts]
    if any(len(c) == 0 for c in cum):
        raise TreeSpaceError("graph is disconnected")
    in_tree = [False] * n
    nxt = [-1] * n
    root = int(rng.integers(n))
    in_tree[root] = True
    for start in range(n):
        u = start
        while not in_tree[u]:
            c = cum[u]
            idx = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
            nxt[u] = nbrs[u][min(idx, len(c) - 1)]
            u = nxt[u]
        u = start
        while not in_tree[u]:
            in_tree[u] = True
            u = nxt[u]
    return frozenset((min(v, nxt[v]), max(v, nxt[v])) for v in range(n) if v != root)


# -- tree proposal ---------------------------------------------------------------

def qT_logweight(center: frozenset, tree: frozenset, p: float) -> float:
    """Unnormalized log proposal weight of ``tree`` around ``center``."""
    shared = len(tree & center)
    return shared * math.log(p) + (len(tree) - shared) * math.log1p(-p)


ENUMERATION_LIMIT = 64


class TreeProposal:
    """Product-weight tree proposal on one admissible graph, excluding the center."""

    def __init__(self, g: AllowedGraph, p: float):
        if not 0.0 < p < 1.0:
            raise TreeSpaceError("p must lie in (0, 1)")
        self.g = g
        self.p = p
        self.count = count_spanning_trees(g)
        if self.count == 0:
            raise TreeSpaceError("admissible graph is disconnected")
        self.trees = (enumerate_spanning_trees(g) if self.count <= ENUMERATION_LIMIT
                      else None)

    def _weights(self, center: frozenset) -> np.ndarray:
        return np.array([self.p if e in center else 1.0 - self.p for e in self.g.edges])

    def lognormalizer(self, center: frozenset) -> float:
        """log of the total weight over all trees other than ``center``."""
        if self.trees is not None:
            lw = [qT_logweight(center, t, self.p) for t in self.trees if t != center]
            if not lw:
                return -math.inf
            return float(np.logaddexp.reduce(lw))
        total = log_weighted_tree_sum(self.g, self._weights(center))
        own = len(center) * math.log(self.p)
        return total + math.log1p(-math.exp(own - total))

    def logprob(self, center: frozenset, tree: frozenset) -> float:
        if tree == center:
            return -math.inf
        return qT_logweight(center, tree, self.p) - self.lognormalizer(center)

    def sample(self, center: frozenset, rng: np.random.Generator) -> frozenset:
        if self.count < 2:
            raise TreeSpaceError("no alternative tree exists")
        if self.trees is not None:
            others = [t for t in self.trees if t != center]
            lw = np.array([qT_logweight(center, t, self.p) for t in others])
            w = np.exp(lw - lw.max())
            return others[int(rng.choice(len(others), p=w / w.sum()))]
        weights = self._weights(center)
        while True:
            t = sample_spanning_tree(self.g, weights, rng)
            if t != center:
                return t


# -- vine enumeration --------------------------------------------------------------

def stp_count(structure: VineStructure, k: int) -> int:
    """|STP_k|: admissible trees at level k given the lower trees."""
    return count_spanning_trees(allowed_graph(structure, k))


def enumerate_vines(d: int) -> list:
    """All regular vine structures on ``d <= 5`` variables."""
    if d > 5:
        raise TreeSpaceError("enumeration refused for d > 5")
    if d < 2:
        raise TreeSpaceError("d must be at least 2")
    out = []

    def extend(struct: Optional[VineStructure], k: int):
        if k == d:
            out.append(struct)
            return
        base = struct if struct is not None else VineStructure(d, ())
        g = allowed_graph(base, k)
        for tree in enumerate_spanning_trees(g):
            extend(VineStructure(d, base.trees + (tuple(sorted(tree)),)), k + 1)

    extend(None, 1)
    return out


def vine_count_formula(d: int) -> int:
    if d == 2:
        return 1
    return math.factorial(d) // 2 * 2 ** math.comb(d - 2, 2)


def tree_of(structure: VineStructure, k: int) -> frozenset:
    return frozenset(structure.trees[k - 1])


__all__ = [
    "AllowedGraph", "TreeSpaceError", "TreeProposal", "allowed_graph", "count_spanning_trees",
    "weighted_tree_sum", "log_weighted_tree_sum", "enumerate_spanning_trees",
    "sample_spanning_tree", "qT_logweight", "stp_count", "enumerate_vines",
    "vine_count_formula", "tree_of",
]
