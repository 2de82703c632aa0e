"""Exact optimization over vertex subsets.

Two engines: a Gray-code enumeration of all subsets of a small ground set
(minimum boundary for every value of a counting weight), and a parametric
minimum cut for ratio problems without a size constraint, exact at any size.
"""

from dataclasses import dataclass

import numpy as np
import networkx as nx

from . import _kernels
from .cluster import as_index, as_mask
from .errors import ParameterError

MAX_ENUMERATION = 30


@dataclass(frozen=True, eq=False)
class BoundaryTable:
    ground: np.ndarray      # local indices of the enumerated vertices
    best: np.ndarray        # best[c] = min boundary over subsets with count c
    witness: np.ndarray     # bitmask over ``ground`` attaining best[c]

    def witness_set(self, c):
        mask = int(self.witness[c])
        return self.ground[[i for i in range(len(self.ground)) if mask >> i & 1]]


def _slot_weights(graph, edge_weight):
    if edge_weight is None:
        return np.ones(len(graph.indices))
    return np.asarray(edge_weight, dtype=float)


def _local_problem(graph, ground, ambient, edge_weight):
    """Ground-set adjacency plus per-vertex weight towards ambient \\ ground."""
    ground = as_index(ground, graph.n)
    amb = np.ones(graph.n, dtype=bool) if ambient is None else as_mask(ambient, graph.n)
    if np.any(~amb[ground]):
        raise ParameterError("ground set must lie inside the ambient set")
    pos = np.full(graph.n, -1, dtype=np.int64)
    pos[ground] = np.arange(len(ground))
    w = _slot_weights(graph, edge_weight)
    ptr = [0]
    idx, wts = [], []
    ext = np.zeros(len(ground))
    for i, v in enumerate(ground):
        for e in range(graph.indptr[v], graph.indptr[v + 1]):
            u = graph.indices[e]
            if pos[u] >= 0:
                idx.append(pos[u])
                wts.append(w[e])
            elif amb[u]:
                ext[i] += w[e]
        ptr.append(len(idx))
    return (ground, np.asarray(ptr, dtype=np.int64), np.asarray(idx, dtype=np.int64),
            np.asarray(wts, dtype=float), ext)


def min_boundary_table(graph, ground, ambient=None, edge_weight=None, count=None):
    """Exhaustive ``min |∂_ambient A|_w`` over ``A ⊆ ground``, per value of ``count(A)``.

    ``count`` is a nonnegative integer weight per ground vertex (default 1,
    i.e. the table is indexed by ``|A|``); ``edge_weight`` is given per CSR
    slot of ``graph``.
    """
    ground, ptr, idx, wts, ext = _local_problem(graph, ground, ambient, edge_weight)
    if len(ground) > MAX_ENUMERATION:
        raise ParameterError(f"refusing to enumerate 2^{len(ground)} subsets")
    cnt = np.ones(len(ground), dtype=np.int64) if count is None else np.asarray(count, dtype=np.int64)
    best, wit = _kernels.gray_min_boundary(ptr, idx, wts, ext, cnt, int(cnt.sum()))
    return BoundaryTable(ground, best, wit)


@dataclass(frozen=True, eq=False)
class RatioResult:
    value: float            # min over A of boundary(A) / count(A)
    witness: np.ndarray     # minimizing set (local indices)
    rounds: int


def min_ratio_cut(graph, ground, ambient=None, edge_weight=None, count=None, tol=1e-12):
    """Exact ``min_A |∂_ambient A|_w / count(A)`` over ``A ⊆ ground`` with ``count(A) > 0``.

    Dinkelbach iteration: for fixed ``lam`` the problem ``min_A |∂A| - lam
    count(A)`` is a minimum s-t cut with source capacities ``lam count(v)``
    and the ambient vertices outside the ground set merged into the sink.
    Each round strictly lowers ``lam``; the value is exact up to rounding.
    """
    ground, ptr, idx, wts, ext = _local_problem(graph, ground, ambient, edge_weight)
    m = len(ground)
    cnt = np.ones(m) if count is None else np.asarray(count, dtype=float)
    if not np.any(cnt > 0):
        raise ParameterError("count vanishes on the whole ground set")

    def boundary(mask):
        inside = mask[np.repeat(np.arange(m), np.diff(ptr))]
        out = ~mask[idx]
        return float(np.sum(wts[inside & out]) + np.sum(ext[mask]))

    mask = cnt > 0
    lam = boundary(mask) / cnt[mask].sum()
    best_mask = mask
    for rounds in range(1, 200):
        g = nx.DiGraph()
        g.add_node("s")
        g.add_node("t")
        for i in range(m):
            if cnt[i] > 0:
                g.add_edge("s", i, capacity=lam * cnt[i])
            if ext[i] > 0:
                g.add_edge(i, "t", capacity=ext[i])
            for e in range(ptr[i], ptr[i + 1]):
                g.add_edge(i, int(idx[e]), capacity=wts[e])
        cut, (src_side, _) = nx.minimum_cut(g, "s", "t")
        gain = cut - lam * cnt.sum()
        mask = np.zeros(m, dtype=bool)
        mask[[v for v in src_side if v != "s"]] = True
        if gain >= -tol * max(1.0, lam * cnt.sum()) or cnt[mask].sum() == 0:
            break
        new = boundary(mask) / cnt[mask].sum()
        if new >= lam:
            break
        lam, best_mask = new, mask
    return RatioResult(lam, ground[best_mask], rounds)
