"""Audits of ball regularity and the moment condition on sampled clusters."""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from . import cluster as cl
from .errors import ParameterError, StructureError
from .subsets import min_boundary_table

EXHAUSTIVE_MAX = 22
RADIUS_RATIO = 1.3


# moment condition ------------------------------------------------------------

@dataclass(frozen=True)
class MomentProfile:
    p: float
    q: float
    theta: float
    d: int

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ParameterError(f"theta must lie in (0, 1), got {self.theta}")
        if self.p < 1 or self.q < 1:
            raise ParameterError("p and q must be >= 1")
        if int(self.d) < 2:
            raise ParameterError("d must be >= 2")

    def lhs(self):
        return 1.0 / self.p + 1.0 / self.q

    def rhs(self):
        return 2.0 * (1.0 - self.theta) / (self.d - self.theta)


def admissible(profile):
    """``1/p + 1/q < 2(1 - theta)/(d - theta)`` (with ``1/inf = 0``)."""
    return profile.lhs() < profile.rhs()


def min_admissible_p(q, theta, d):
    """Infimum of the admissible p for given q, theta and d (inf if none)."""
    slack = 2.0 * (1.0 - theta) / (d - theta) - 1.0 / q
    return math.inf if slack <= 0 else 1.0 / slack


# volume regularity -----------------------------------------------------------

def volume_regular(graph, x, n, C_V):
    if n < 1:
        raise ParameterError("n must be >= 1")
    size = len(cl.ball(graph, x, n))
    ratio = size / float(n) ** _dim(graph)
    return ratio >= C_V, ratio


def _dim(graph):
    if hasattr(graph, "box"):
        return graph.box.dim
    if graph.coords is not None:
        return graph.coords.shape[1]
    raise ParameterError("graph has no lattice dimension")


# relative isoperimetry -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class IsoBracket:
    lower: float
    upper: float
    method: str
    witness: np.ndarray = field(repr=False, default=None)

    def __iter__(self):
        return iter((self.lower, self.upper))


def _sub_laplacian(graph, S):
    sub, S = graph.subgraph(S)
    eu, ev, _ = sub.edges
    m = sub.n
    adj = sp.coo_matrix((np.ones(2 * len(eu)), (np.r_[eu, ev], np.r_[ev, eu])), shape=(m, m)).tocsr()
    deg = np.asarray(adj.sum(axis=1)).ravel()
    return sub, S, sp.diags(deg) - adj, deg


def fiedler(lap, seed=0):
    """Second-smallest eigenpair of a connected graph Laplacian."""
    m = lap.shape[0]
    if m <= 400:
        vals, vecs = scipy.linalg.eigh(lap.toarray(), subset_by_index=[1, 1])
        return float(vals[0]), vecs[:, 0]
    v0 = np.random.default_rng(seed).standard_normal(m)
    vals, vecs = eigsh(lap.tocsc(), k=2, sigma=-0.01, which="LM", v0=v0)
    order = np.argsort(vals)
    return float(vals[order[1]]), vecs[:, order[1]]


def sweep_boundaries(sub, order):
    """``|∂_S P_k|`` for every prefix ``P_k`` of ``order`` (k = 0..m)."""
    m = sub.n
    rank = np.empty(m, dtype=np.int64)
    rank[order] = np.arange(m)
    eu, ev, _ = sub.edges
    lo = np.minimum(rank[eu], rank[ev])
    hi = np.maximum(rank[eu], rank[ev])
    diff = np.zeros(m + 2)
    np.add.at(diff, lo + 1, 1.0)
    np.add.at(diff, hi + 1, -1.0)
    return np.cumsum(diff)[: m + 1]


def spectral_bracket(graph, S, n, seed=0):
    """Bracket for ``min n|∂_S A|/|A|`` over ``|A| <= |S|/2`` from the spectrum of S.

    Lower: ``n lambda_2 / 2``, since ``|∂A| >= lambda_2 |A| |S \\ A| / |S|``
    for the combinatorial Laplacian.  Upper: best Fiedler sweep cut (from
    either end) or the minimum-degree singleton.
    """
    sub, S, lap, deg = _sub_laplacian(graph, S)
    m = sub.n
    if m < 2:
        return IsoBracket(math.inf, math.inf, "spectral+sweep", np.array([], dtype=np.int64))
    lam2, vec = fiedler(lap, seed)
    lower = n * max(lam2, 0.0) / 2.0
    half = m // 2
    best, wit = n * deg.min(), S[[int(np.argmin(deg))]]
    for order in (np.argsort(vec, kind="stable"), np.argsort(-vec, kind="stable")):
        bnd = sweep_boundaries(sub, order)
        k = np.arange(1, half + 1)
        ratios = n * bnd[1:half + 1] / k
        j = int(np.argmin(ratios))
        if ratios[j] < best:
            best, wit = float(ratios[j]), S[order[: j + 1]]
    return IsoBracket(min(lower, best), float(best), "spectral+sweep", np.sort(wit))


def exhaustive_iso(graph, S, n):
    S = cl.as_index(S, graph.n)
    table = min_boundary_table(graph, S, ambient=S)
    half = len(S) // 2
    k = np.arange(1, half + 1)
    ratios = n * table.best[1:half + 1] / k
    j = int(np.argmin(ratios))
    value = float(ratios[j])
    return IsoBracket(value, value, "exhaustive", table.witness_set(j + 1))


def relative_iso_bracket(graph, S, n, exhaustive_max=EXHAUSTIVE_MAX, seed=0):
    """``[lower, upper]`` for the best constant in ``|∂_S A| >= C n^-1 |A|``, ``|A| <= |S|/2``."""
    S = cl.as_index(S, graph.n)
    if len(S) == 0 or not graph.is_connected(S):
        raise StructureError("S must be nonempty and connected")
    if len(S) == 1:
        return IsoBracket(math.inf, math.inf, "exhaustive", np.array([], dtype=np.int64))
    if len(S) <= exhaustive_max:
        return exhaustive_iso(graph, S, n)
    return spectral_bracket(graph, S, n, seed)


# choice of S -----------------------------------------------------------------

def ball_strategy(graph, x, n, C_W):
    return cl.ball(graph, x, C_W * n).vertices


def choose_S(graph, x, n, C_W, strategy=None):
    """Connected set with ``B(x, n) ⊂ S ⊂ B(x, C_W n)``; default the outer ball."""
    if C_W < 1:
        raise ParameterError("C_W must be >= 1")
    S = (strategy or ball_strategy)(graph, x, n, C_W)
    return np.sort(np.asarray(S, dtype=np.int64))


def check_sandwich(graph, x, n, C_W, S):
    inner = set(cl.ball(graph, x, n).vertices.tolist())
    outer = set(cl.ball(graph, x, C_W * n).vertices.tolist())
    s = set(np.asarray(S).tolist())
    return inner <= s <= outer and graph.is_connected(list(s))


@dataclass(frozen=True, eq=False)
class RegularityReport:
    center: int
    n: float
    volume_ratio: float
    S_size: int
    S_descriptor: str
    lower: float
    upper: float
    volume_ok: bool
    iso_ok: bool
    certified: bool
    method: str

    @property
    def regular(self):
        return self.volume_ok and self.iso_ok


def check_regular(graph, x, n, C_V, C_riso, C_W, strategy=None, seed=0):
    """Volume regularity and relative isoperimetry of ``B(x, n)``.

    ``iso_ok`` means the best available estimate (the upper end of the
    bracket) clears ``C_riso``; ``certified`` means the lower end does.
    """
    x = graph.resolve(x)
    vol_ok, ratio = volume_regular(graph, x, n, C_V)
    S = choose_S(graph, x, n, C_W, strategy)
    br = relative_iso_bracket(graph, S, n, seed=seed)
    desc = "ball(x, C_W n)" if strategy is None else getattr(strategy, "__name__", "custom")
    return RegularityReport(x, float(n), ratio, len(S), desc, br.lower, br.upper,
                            bool(vol_ok), br.upper >= C_riso, br.lower >= C_riso, br.method)


def radius_grid(n, theta, d, ratio=RADIUS_RATIO):
    """Geometric grid of integer radii in ``[n^(theta/d), n]`` (always contains n)."""
    r = max(1.0, n ** (theta / d))
    out = []
    while r < n:
        out.append(int(math.ceil(r)))
        r *= ratio
    out.append(int(n))
    return sorted(set(out))


@dataclass(frozen=True, eq=False)
class ThetaReport:
    passed: bool
    worst: RegularityReport
    checked: int
    radii: tuple
    centers: np.ndarray = field(repr=False, default=None)


def theta_very_regular(graph, x, n, theta, C_V, C_riso, C_W, max_centers=None, seed=0, strategy=None):
    """Regularity of ``B(y, r)`` for centers ``y`` in ``B(x, n)`` and radii on the grid.

    With ``max_centers`` the centers are a seeded uniform subsample of the
    ball (``x`` itself always included).  Stops at the first failure.
    """
    if graph.n == 0:
        return ThetaReport(False, None, 0, ())
    try:
        x = graph.resolve(x)
    except KeyError:
        return ThetaReport(False, None, 0, ())
    if graph.n < 2:
        return ThetaReport(False, None, 0, ())
    d = _dim(graph)
    centers = cl.ball(graph, x, n).vertices
    if max_centers is not None and len(centers) > max_centers:
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(centers) - 1, size=max_centers - 1, replace=False) + 1
        centers = np.r_[centers[0], centers[np.sort(pick)]]
    radii = tuple(radius_grid(n, theta, d))
    worst, checked = None, 0
    for y in centers:
        for r in radii:
            rep = check_regular(graph, int(y), r, C_V, C_riso, C_W, strategy, seed)
            checked += 1
            if not rep.regular:
                return ThetaReport(False, rep, checked, radii, centers)
            if worst is None or rep.upper / C_riso < worst.upper / C_riso:
                worst = rep
    return ThetaReport(True, worst, checked, radii, centers)


# isoperimetry for large sets -------------------------------------------------

def lattice_c0(d, kmax=64):
    """``max_k |B(k)| / k^d`` for the l1 ball of Z^d (attained at k = 1)."""
    return max(cl.l1_ball_size(d, k) / k ** d for k in range(1, kmax + 1))


@dataclass(frozen=True, eq=False)
class CoveringReport:
    r: float
    centers: np.ndarray
    overlap: int
    overlap_bound: float
    C_iso: float
    C_iso_bound: float


def covering_overlap(graph, x, n, A_size, C_V, C_riso, C_W, d=None):
    """Greedy packing of ``B(x, n)`` by disjoint balls of radius ``r`` with ``r^d = 2|A|/C_V``.

    Returns the empirical maximal overlap of the enlarged balls
    ``B(y_i, 3 C_W r)`` and the a-priori bound ``(4 C_W)^d C_0 / C_V``.
    """
    d = _dim(graph) if d is None else d
    r = (2.0 * A_size / C_V) ** (1.0 / d)
    R = int(math.floor(r))
    region = cl.ball(graph, x, n).vertices
    blocked = np.zeros(graph.n, dtype=bool)
    centers = []
    for y in region:
        if blocked[y]:
            continue
        centers.append(int(y))
        near = graph.distances(int(y), 2 * R)
        blocked |= near >= 0
    cover = np.zeros(graph.n, dtype=np.int64)
    for y in centers:
        cover += graph.distances(y, int(math.floor(3 * C_W * r))) >= 0
    overlap = int(cover[region].max())
    bound = (4.0 * C_W) ** d * lattice_c0(d) / C_V
    return CoveringReport(r, np.asarray(centers), overlap, bound,
                          C_riso * C_V / (2.0 * overlap), C_riso * C_V / (2.0 * bound))


def random_blob(graph, allowed, size, rng, start=None):
    """Connected set grown from ``start`` by adding uniformly chosen frontier vertices."""
    allowed = cl.as_mask(allowed, graph.n)
    cand = np.flatnonzero(allowed)
    start = int(rng.choice(cand)) if start is None else int(start)
    inside = np.zeros(graph.n, dtype=bool)
    inside[start] = True
    frontier = [u for u in graph.neighbors(start) if allowed[u]]
    members = [start]
    while len(members) < size and frontier:
        k = int(rng.integers(len(frontier)))
        v = frontier[k]
        frontier[k] = frontier[-1]
        frontier.pop()
        if inside[v]:
            continue
        inside[v] = True
        members.append(int(v))
        frontier.extend(u for u in graph.neighbors(v) if allowed[u] and not inside[u])
    return np.sort(np.asarray(members, dtype=np.int64))


def candidate_sets(graph, x, n, min_size, rng, n_blobs=32):
    """Blobs, sub-balls and sweep sets inside ``B(x, n)`` with at least ``min_size`` vertices."""
    region = cl.ball(graph, x, n).vertices
    sets = [region]
    m = len(region)
    lo = max(1, int(math.ceil(min_size)))
    if lo > m:
        return []
    for _ in range(n_blobs):
        size = int(rng.integers(lo, m + 1))
        sets.append(random_blob(graph, region, size, rng))
    inside = cl.as_mask(region, graph.n)
    for _ in range(n_blobs // 2):
        y = int(rng.choice(region))
        rad = int(rng.integers(1, n + 1))
        b = cl.ball(graph, y, rad).vertices
        sets.append(np.sort(b[inside[b]]))
    if m >= 3:
        sub, S, lap, _ = _sub_laplacian(graph, region)
        if sub.is_connected():
            _, vec = fiedler(lap)
            for order in (np.argsort(vec), np.argsort(-vec)):
                for k in np.unique(np.linspace(lo, m, 8).astype(int)):
                    sets.append(np.sort(S[order[:k]]))
    return [s for s in sets if len(s) >= lo]


@dataclass(frozen=True, eq=False)
class LargeSetReport:
    passed: bool
    min_ratio: float
    witness: np.ndarray
    n_sets: int
    covering: CoveringReport


def large_set_iso_check(graph, x, n, theta, C_iso, C_V=1.0, C_riso=1.0, C_W=1.0, seed=0, n_blobs=32):
    """``|∂A| >= C_iso |A|^((d-1)/d)`` on sampled ``A ⊂ B(x, n)`` with ``|A| >= n^theta``."""
    x = graph.resolve(x)
    d = _dim(graph)
    rng = np.random.default_rng(seed)
    sets = candidate_sets(graph, x, n, n ** theta, rng, n_blobs)
    best, wit = math.inf, None
    for A in sets:
        ratio = cl.boundary_weight(graph, A) / len(A) ** ((d - 1) / d)
        if ratio < best:
            best, wit = ratio, A
    smallest = max(1, int(math.ceil(n ** theta)))
    cov = covering_overlap(graph, x, n, smallest, C_V, C_riso, C_W, d)
    return LargeSetReport(best >= C_iso, best, wit, len(sets), cov)
