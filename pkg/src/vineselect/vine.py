"""Regular vine structures and vine copulas.

A structure is stored as explicit per-level edge lists.  Level-1 edges are
pairs of variables; a level-k edge is a pair of indices into the level-(k-1)
edge list.  Variables are 0-based internally and 1-based in labels and JSON.

Every edge carries a label ``(i, j, D)`` with ``i < j``.  The pair copula of
that edge takes ``u_{i|D}`` as first argument and ``u_{j|D}`` as second.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .pair_copulas import (
    INDEPENDENCE,
    PairCopula,
    eval_edge,
    hinv,
    pair_logpdf,
)


class StructureError(ValueError):
    """Malformed or non-regular vine structure."""


class EdgeLabel(NamedTuple):
    i: int
    j: int
    cond: frozenset

    def __str__(self):
        head = f"{self.i + 1},{self.j + 1}"
        if not self.cond:
            return head
        return head + "|" + ",".join(str(v + 1) for v in sorted(self.cond))

    @property
    def union(self) -> frozenset:
        return self.cond | {self.i, self.j}

    @classmethod
    def parse(cls, text: str) -> "EdgeLabel":
        """Parse ``"1,3|2"`` style labels (1-based)."""
        head, _, tail = text.partition("|")
        i, j = (int(x) - 1 for x in head.split(","))
        cond = frozenset(int(x) - 1 for x in tail.split(",") if x.strip())
        return cls(min(i, j), max(i, j), cond)


class Violation(NamedTuple):
    level: int
    edge: int
    message: str


@dataclass(frozen=True)
class EdgeSource:
    """Where an edge's first (``a``) and second (``b``) inputs come from.

    ``a = (e, o)`` means output ``o`` of edge ``e`` on the previous level;
    output 0 is h(first | second) and output 1 is h(second | first).  At
    level 1 ``a`` and ``b`` are plain column indices wrapped as ``(col, -1)``.
    """

    a: tuple
    b: tuple


def _pair(x) -> tuple:
    a, b = (int(v) for v in x)
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class VineStructure:
    d: int
    trees: tuple = field(default_factory=tuple)

    def __post_init__(self):
        trees = tuple(tuple(_pair(e) for e in level) for level in self.trees)
        object.__setattr__(self, "trees", trees)
        if self.d < 2:
            raise StructureError("dimension must be at least 2")
        if len(trees) > self.d - 1:
            raise StructureError("too many trees")
        problems = _violations(self.d, trees, True)
        if problems:
            raise StructureError("; ".join(f"level {p.level} edge {p.edge}: {p.message}"
                                           for p in problems))

    @property
    def n_levels(self) -> int:
        return len(self.trees)

    @property
    def complete(self) -> bool:
        return len(self.trees) == self.d - 1

    @cached_property
    def labels(self) -> tuple:
        return _derive(self)[0]

    @cached_property
    def sources(self) -> tuple:
        return _derive(self)[1]

    def label_strings(self) -> list:
        return [[str(lab) for lab in level] for level in self.labels]

    def edge_index(self, level: int, label: EdgeLabel) -> int:
        return self.labels[level - 1].index(label)

    def prefix(self, k: int) -> "VineStructure":
        return VineStructure(self.d, self.trees[:k])

    def with_tree(self, k: int, edges) -> "VineStructure":
        """Copy with tree ``k`` replaced and higher trees dropped."""
        return VineStructure(self.d, self.trees[: k - 1] + (tuple(edges),))

    @classmethod
    def from_labels(cls, d: int, levels: Sequence[Sequence]) -> "VineStructure":
        """Build from edge labels (``EdgeLabel`` or strings like ``"1,3|2"``)."""
        trees = []
        prev_unions = None
        for k, level in enumerate(levels, start=1):
            labs = [x if isinstance(x, EdgeLabel) else EdgeLabel.parse(str(x)) for x in level]
            if k == 1:
                for lab in labs:
                    if lab.cond:
                        raise StructureError(f"level-1 edge {lab} has a conditioning set")
                trees.append([(lab.i, lab.j) for lab in labs])
            else:
                lookup = {u: idx for idx, u in enumerate(prev_unions)}
                edges = []
                for lab in labs:
                    if len(lab.cond) != k - 1:
                        raise StructureError(f"edge {lab} at level {k} needs {k - 1} conditioning variables")
                    a = lookup.get(lab.cond | {lab.i})
                    b = lookup.get(lab.cond | {lab.j})
                    if a is None or b is None:
                        raise StructureError(f"edge {lab} does not join two level-{k - 1} edges")
                    edges.append((a, b))
                trees.append(edges)
            prev_unions = [lab.union for lab in labs]
        return cls(d, tuple(tuple(t) for t in trees))

    @classmethod
    def dvine(cls, d: int, order: Optional[Sequence[int]] = None) -> "VineStructure":
        order = list(range(d)) if order is None else list(order)
        trees = [[(order[m], order[m + 1]) for m in range(d - 1)]]
        for k in range(2, d):
            trees.append([(m, m + 1) for m in range(d - k)])
        return cls(d, tuple(tuple(t) for t in trees))

    @classmethod
    def cvine(cls, d: int, order: Optional[Sequence[int]] = None) -> "VineStructure":
        order = list(range(d)) if order is None else list(order)
        trees = [[(order[0], order[m]) for m in range(1, d)]]
        for k in range(2, d):
            trees.append([(0, m) for m in range(1, d - k + 1)])
        return cls(d, tuple(tuple(t) for t in trees))


def validate(structure, trees=None, allow_partial: bool = False) -> list:
    """Check the regular-vine conditions and return a list of violations.

    Accepts a :class:`VineStructure` or a dimension plus raw per-level edge
    lists, so that invalid candidates can be checked before construction.
    An empty list means the structure is valid.
    """
    if trees is None:
        d, trees = structure.d, structure.trees
    else:
        d = int(structure)
        trees = [[_pair(e) for e in level] for level in trees]
    return _violations(d, trees, allow_partial)


def _violations(d: int, trees, allow_partial: bool) -> list:
    out = []
    if not allow_partial and len(trees) != d - 1:
        out.append(Violation(0, -1, f"expected {d - 1} trees, found {len(trees)}"))
    for k, edges in enumerate(trees, start=1):
        n_nodes = d if k == 1 else len(trees[k - 2])
        if len(edges) != n_nodes - 1:
            out.append(Violation(k, -1, f"tree needs {n_nodes - 1} edges, has {len(edges)}"))
            break
        bad = False
        for idx, (a, b) in enumerate(edges):
            if not (0 <= a < n_nodes and 0 <= b < n_nodes) or a == b:
                out.append(Violation(k, idx, f"invalid node pair ({a}, {b})"))
                bad = True
        if bad:
            break
        if len(set(edges)) != len(edges):
            out.append(Violation(k, -1, "duplicate edges"))
            break
        if not _is_spanning_tree(n_nodes, edges):
            out.append(Violation(k, -1, "edges do not form a spanning tree"))
        if k >= 2:
            lower = trees[k - 2]
            for idx, (a, b) in enumerate(edges):
                if len(set(lower[a]) & set(lower[b])) != 1:
                    out.append(Violation(k, idx, "joined edges do not share exactly one node"))
    return out


def _is_spanning_tree(n: int, edges) -> bool:
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
    return len(edges) == n - 1


def join_edges(lab_p: EdgeLabel, lab_q: EdgeLabel, p: int, q: int):
    """Label and input sources of the edge joining lower edges ``p`` and ``q``."""
    ua, ub = lab_p.union, lab_q.union
    cond = ua & ub
    (x,), (y,) = ua - ub, ub - ua
    src_x = (p, _output_for(lab_p, x))
    src_y = (q, _output_for(lab_q, y))
    if x < y:
        return EdgeLabel(x, y, cond), EdgeSource(src_x, src_y)
    return EdgeLabel(y, x, cond), EdgeSource(src_y, src_x)


def _derive(structure: VineStructure):
    labels, sources = [], []
    prev = None
    for k, edges in enumerate(structure.trees, start=1):
        labs, srcs = [], []
        for a, b in edges:
            if k == 1:
                labs.append(EdgeLabel(a, b, frozenset()))
                srcs.append(EdgeSource((a, -1), (b, -1)))
            else:
                lab, src = join_edges(prev[a], prev[b], a, b)
                labs.append(lab)
                srcs.append(src)
        labels.append(tuple(labs))
        sources.append(tuple(srcs))
        prev = labs
    return tuple(labels), tuple(sources)


def _output_for(lab: EdgeLabel, v: int) -> int:
    if v == lab.i:
        return 0
    if v == lab.j:
        return 1
    raise StructureError(f"variable {v + 1} is not in the conditioned set of {lab}")


def derive_sets(structure: VineStructure) -> list:
    """Edge labels per level, formatted ``"i,j|D"`` (1-based)."""
    return structure.label_strings()


# -- vine copulas --------------------------------------------------------------

@dataclass(frozen=True)
class VineCopula:
    structure: VineStructure
    pairs: tuple
    truncation: Optional[int] = None

    def __post_init__(self):
        s = self.structure
        pairs = tuple(tuple(level) for level in self.pairs)
        if len(pairs) != s.n_levels:
            raise StructureError("need one list of pair copulas per tree")
        for k, (lv, edges) in enumerate(zip(pairs, s.trees), start=1):
            if len(lv) != len(edges):
                raise StructureError(f"level {k}: {len(edges)} edges but {len(lv)} pair copulas")
        trunc = s.n_levels if self.truncation is None else int(self.truncation)
        if not 1 <= trunc <= max(s.n_levels, 1):
            raise StructureError(f"truncation level must be in 1..{s.n_levels}")
        pairs = tuple(lv if k <= trunc else tuple(INDEPENDENCE for _ in lv)
                      for k, lv in enumerate(pairs, start=1))
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "truncation", trunc)

    @property
    def d(self) -> int:
        return self.structure.d

    @property
    def n_params(self) -> int:
        return sum(p.n_params for lv in self.pairs for p in lv)

    def pair(self, label) -> PairCopula:
        lab = label if isinstance(label, EdgeLabel) else EdgeLabel.parse(label)
        k = len(lab.cond) + 1
        return self.pairs[k - 1][self.structure.edge_index(k, lab)]

    def edges(self) -> Iterable:
        """Yield ``(level, label, pair)`` for every edge."""
        for k, (labs, lv) in enumerate(zip(self.structure.labels, self.pairs), start=1):
            for lab, pc in zip(labs, lv):
                yield k, lab, pc

    @classmethod
    def from_labels(cls, d: int, levels: Sequence[Sequence[tuple]],
                    truncation: Optional[int] = None) -> "VineCopula":
        """Build from ``[[("1,2", PairCopula), ...], ...]`` per level."""
        struct = VineStructure.from_labels(d, [[lab for lab, _ in lv] for lv in levels])
        pairs = [[pc for _, pc in lv] for lv in levels]
        return cls(struct, pairs, truncation)

    def to_dict(self) -> dict:
        trees = []
        for labs, lv in zip(self.structure.labels, self.pairs):
            trees.append([
                {"i": lab.i + 1, "j": lab.j + 1, "cond": sorted(v + 1 for v in lab.cond),
                 **pc.to_dict()}
                for lab, pc in zip(labs, lv)
            ])
        return {"d": self.d, "trees": trees, "truncation": self.truncation}

    @classmethod
    def from_dict(cls, obj: dict) -> "VineCopula":
        d = int(obj["d"])
        levels = []
        for lv in obj["trees"]:
            row = []
            for e in lv:
                lab = EdgeLabel(min(e["i"], e["j"]) - 1, max(e["i"], e["j"]) - 1,
                                frozenset(int(v) - 1 for v in e.get("cond", [])))
                row.append((lab, PairCopula.from_dict(e)))
            levels.append(row)
        return cls.from_labels(d, levels, obj.get("truncation"))

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text: str) -> "VineCopula":
        return cls.from_dict(json.loads(text))


def independence_vine(structure: VineStructure) -> VineCopula:
    return VineCopula(structure, [[INDEPENDENCE] * len(t) for t in structure.trees])


def truncate(copula: VineCopula, K: int) -> VineCopula:
    if not 1 <= K <= copula.structure.n_levels:
        raise StructureError(f"truncation level must be in 1..{copula.structure.n_levels}")
    return VineCopula(copula.structure, copula.pairs, min(K, copula.truncation))


# -- likelihood (tree-by-tree) --------------------------------------------------

def _check_data(U, d: int) -> np.ndarray:
    U = np.asarray(U, dtype=np.float64)
    if U.ndim == 1:
        U = U[None, :]
    if U.ndim != 2 or U.shape[1] != d:
        raise ValueError(f"data must have {d} columns")
    return U


def _columns(U: np.ndarray) -> list:
    return [np.ascontiguousarray(U[:, v]) for v in range(U.shape[1])]


def _input(src, cols, prev_out):
    idx, o = src
    return cols[idx] if o < 0 else prev_out[idx][o]


def forward(copula: VineCopula, U, levels: Optional[int] = None):
    """Evaluate levels 1..``levels`` tree by tree.

    Returns ``(level_logliks, inputs)`` where ``inputs[k-1][e]`` is the pair
    ``(u_{i|D}, u_{j|D})`` fed to edge ``e`` of level ``k``.
    """
    U = _check_data(U, copula.d)
    s = copula.structure
    levels = s.n_levels if levels is None else levels
    cols = _columns(U)
    lls, inputs = [], []
    prev_out = None
    for k in range(1, levels + 1):
        need_h = k < levels
        ll_k, ins, outs = 0.0, [], []
        for src, pc in zip(s.sources[k - 1], copula.pairs[k - 1]):
            a = _input(src.a, cols, prev_out)
            b = _input(src.b, cols, prev_out)
            ll, h1, h2 = eval_edge(pc, a, b, need_h)
            ll_k += ll
            ins.append((a, b))
            outs.append((h1, h2))
        lls.append(ll_k)
        inputs.append(ins)
        prev_out = outs
    return lls, inputs


def pseudo_obs(copula: VineCopula, U, k: int) -> list:
    """Inputs ``(u_{i|D}, u_{j|D})`` for each level-k edge; uses levels < k only."""
    if not 1 <= k <= copula.structure.n_levels:
        raise StructureError("level out of range")
    return forward(copula, U, k)[1][k - 1]


def level_loglik(copula: VineCopula, k: int, U) -> float:
    return forward(copula, U, k)[0][k - 1]


def vine_loglik(copula: VineCopula, U) -> float:
    return float(sum(forward(copula, U)[0]))


# -- row-wise density through conditional distribution recursion ----------------

class _CondCdf:
    """Memoized ``F(v | S)`` for a vine and data, following edge labels."""

    def __init__(self, copula: VineCopula, cols: list):
        self.by_union = {}
        for k, lab, pc in copula.edges():
            self.by_union[lab.union] = (lab, pc)
        self.memo = {}
        for v, c in enumerate(cols):
            self.memo[(v, frozenset())] = c

    def edge_for(self, v: int, S: frozenset):
        lab, pc = self.by_union[S | {v}]
        if v not in (lab.i, lab.j):
            raise StructureError(f"no edge conditions {v + 1} on {sorted(S)}")
        return lab, pc

    def get(self, v: int, S: frozenset) -> np.ndarray:
        key = (v, S)
        if key in self.memo:
            return self.memo[key]
        lab, pc = self.edge_for(v, S)
        w = lab.j if v == lab.i else lab.i
        fv = self.get(v, lab.cond)
        fw = self.get(w, lab.cond)
        if v == lab.i:
            out = eval_edge(pc, fv, fw, True)[1]
        else:
            out = eval_edge(pc, fw, fv, True)[2]
        self.memo[key] = out
        return out


def vine_logpdf(copula: VineCopula, U) -> np.ndarray:
    """Per-row log density as the product of pair densities over all edges."""
    U = _check_data(U, copula.d)
    F = _CondCdf(copula, _columns(U))
    out = np.zeros(U.shape[0])
    for _, lab, pc in copula.edges():
        if pc.family.kind == "I":
            continue
        out += pair_logpdf(pc, F.get(lab.i, lab.cond), F.get(lab.j, lab.cond))
    return out


def vine_density(copula: VineCopula, u) -> np.ndarray | float:
    u = np.asarray(u, dtype=np.float64)
    dens = np.exp(vine_logpdf(copula, u))
    return float(dens[0]) if u.ndim == 1 else dens


# -- simulation ------------------------------------------------------------------

def sampling_order(structure: VineStructure) -> list:
    """Variable order for sequential inversion.

    Repeatedly removes a conditioned variable of the highest remaining edge;
    the removed variables, reversed, give the order.
    """
    if not structure.complete:
        raise StructureError("simulation needs a complete structure")
    remaining = [list(level) for level in structure.labels]
    removed = []
    for _ in range(structure.d - 1):
        top = [lv for lv in remaining if lv][-1]
        v = max(top[0].i, top[0].j)
        removed.append(v)
        remaining = [[lab for lab in lv if v not in (lab.i, lab.j) and v not in lab.cond]
                     for lv in remaining]
    rest = set(range(structure.d)) - set(removed)
    return [rest.pop()] + removed[::-1]


def simulate(copula: VineCopula, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` rows by inverting the conditional distributions in turn."""
    d = copula.d
    order = sampling_order(copula.structure)
    W = rng.random((n, d))
    cols = [None] * d
    F = _CondCdf(copula, cols)
    F.memo.clear()
    first = order[0]
    F.memo[(first, frozenset())] = np.ascontiguousarray(W[:, 0])
    placed = {first}
    for m, v in enumerate(order[1:], start=1):
        S = frozenset(placed)
        p = np.ascontiguousarray(W[:, m])
        chain = []
        cur = S
        while cur:
            lab, pc = F.edge_for(v, cur)
            chain.append((lab, pc))
            cur = lab.cond
        F.memo[(v, S)] = p
        for lab, pc in chain:
            w = lab.j if v == lab.i else lab.i
            cond_w = F.get(w, lab.cond)
            if pc.family.kind == "I":
                val = p
            elif v == lab.i:
                val = hinv(pc, p, cond_w, "second")
            else:
                val = hinv(pc, p, cond_w, "first")
            F.memo[(v, lab.cond)] = val
            p = val
        placed.add(v)
    return np.column_stack([F.memo[(v, frozenset())] for v in range(d)])


__all__ = [
    "EdgeLabel", "EdgeSource", "Violation", "StructureError", "VineStructure", "VineCopula",
    "validate", "derive_sets", "join_edges", "forward", "pseudo_obs", "level_loglik", "vine_loglik",
    "vine_logpdf", "vine_density", "simulate", "sampling_order", "truncate",
    "independence_vine",
]
