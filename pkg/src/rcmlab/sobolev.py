"""Isoperimetric and Sobolev-type inequalities on finite graphs.

Every check returns an :class:`InequalityCertificate`.  Exhaustive checks
are exact optima over all sets (Gray-code enumeration, or a parametric
minimum cut where no size constraint is involved); randomized checks report
the worst of a seeded family of candidates.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import cluster as cl
from .errors import DomainError, ParameterError, PreconditionError
from .geometry import candidate_sets, random_blob
from .subsets import MAX_ENUMERATION, min_boundary_table, min_ratio_cut

EXHAUSTIVE_MAX = 26


@dataclass(frozen=True)
class WeightProfile:
    """``w_n({y,y'}) = c (n / max{d(x,y), d(x,y'), 1})^exponent``.

    ``rule`` selects graph distance (``"graph"``) or the l1 norm of lattice
    coordinates (``"l1"``); ``exponent`` defaults to ``d - eps``.
    """

    n: float
    eps: float
    anchor: int
    d: int
    exponent: float = None
    rule: str = "graph"
    c: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.eps < 1.0:
            raise ParameterError(f"eps must lie in (0, 1), got {self.eps}")
        if self.rule not in ("graph", "l1"):
            raise ParameterError("rule must be 'graph' or 'l1'")
        if self.exponent is None:
            object.__setattr__(self, "exponent", self.d - self.eps)

    def distances(self, graph):
        if self.rule == "graph":
            dist = graph.distances(self.anchor).astype(float)
            dist[dist < 0] = np.inf
            return dist
        if graph.coords is None:
            raise ParameterError("l1 rule needs lattice coordinates")
        if isinstance(graph, cl.ClusterGraph):
            return np.abs(cl.relative_positions(graph, self.anchor)).sum(axis=1).astype(float)
        return np.abs(graph.coords - graph.coords[self.anchor]).sum(axis=1).astype(float)

    def edge_weights(self, graph):
        """Weight of every directed CSR slot of ``graph``."""
        dist = self.distances(graph)
        far = np.maximum(np.maximum(dist[graph.sources], dist[graph.indices]), 1.0)
        return self.c * (self.n / far) ** self.exponent


@dataclass(frozen=True, eq=False)
class InequalityCertificate:
    inequality: str
    constant: float          # constant the inequality was tested with
    value: float             # best (exact or sampled) constant of the instance
    margin: float            # >= 1 means the inequality holds at the worst witness
    witness: np.ndarray = field(repr=False)
    method: str = "exhaustive"
    seed: int = None

    @property
    def passed(self):
        return self.margin >= 1.0 - 1e-12

    def as_row(self):
        w = self.witness
        enc = "" if w is None else ",".join(str(int(v)) if float(v).is_integer() else repr(float(v))
                                            for v in np.asarray(w).ravel())
        return {"inequality": self.inequality, "constant": self.constant, "value": self.value,
                "margin": self.margin, "method": self.method, "seed": self.seed, "witness": enc}


# proof constants -----------------------------------------------------------

def constant_C1(d, c_reg, C_reg, C_W):
    return 2.0 ** -(d + 1) * c_reg / C_reg * C_W ** -d


def constant_C2(d, c_reg, C_reg, C_riso, C_W):
    C1 = constant_C1(d, c_reg, C_reg, C_W)
    C3 = C1 * C_riso
    return min(C3, 1.0 / (C_reg * C_W ** (2 * d)), C1 * C3 * c_reg / (C_reg * C_W ** (2 * d)))


def iso_kappa(C_iso, C_reg, zeta, d):
    return min(C_iso / C_reg ** ((1.0 - zeta) / d), 1.0)


def sobolev_constant(C_iso, C_reg, zeta, d):
    """Constant delivered by the co-area argument: ``C_reg^(zeta/d) / kappa``."""
    return C_reg ** (zeta / d) / iso_kappa(C_iso, C_reg, zeta, d)


def max_zeta(theta, d):
    return (1.0 - theta) / (1.0 - theta / d)


# effective-dimension isoperimetry --------------------------------------------

def _dim(graph):
    if isinstance(graph, cl.ClusterGraph):
        return graph.box.dim
    if graph.coords is None:
        raise ParameterError("graph has no lattice dimension")
    return graph.coords.shape[1]


def effective_dim_iso(graph, x, n, theta, zeta, C_iso, C_reg, d=None, seed=0,
                      exhaustive_max=EXHAUSTIVE_MAX, n_blobs=64):
    """``|∂A| / |A|^((d-zeta)/d) >= kappa / n^(1-zeta)`` for all ``A ⊂ B(x, n)``.

    ``|∂A|`` counts every graph edge leaving A.  The certificate value is the
    smallest ratio ``n^(1-zeta) |∂A| / |A|^((d-zeta)/d)`` found; the method
    records whether the search was exhaustive.
    """
    d = _dim(graph) if d is None else d
    if not 0.0 <= zeta <= max_zeta(theta, d) + 1e-12:
        raise ParameterError(f"zeta must lie in [0, {max_zeta(theta, d):.6g}], got {zeta}")
    x = graph.resolve(x)
    B = cl.ball(graph, x, n).vertices
    kappa = iso_kappa(C_iso, C_reg, zeta, d)
    expo = (d - zeta) / d
    if len(B) <= exhaustive_max:
        table = min_boundary_table(graph, B)
        k = np.arange(1, len(B) + 1)
        ratios = table.best[1:] / k ** expo * n ** (1.0 - zeta)
        j = int(np.argmin(ratios))
        value, witness, method = float(ratios[j]), table.witness_set(j + 1), "exhaustive"
    else:
        rng = np.random.default_rng(seed)
        value, witness = math.inf, None
        for A in candidate_sets(graph, x, n, 1, rng, n_blobs) + _small_sets(graph, B, rng, n, n_blobs):
            r = cl.boundary_weight(graph, A) / len(A) ** expo * n ** (1.0 - zeta)
            if r < value:
                value, witness = r, A
        method = "randomized"
    return InequalityCertificate("iso", kappa, value, value / kappa, witness, method, seed)


def _small_sets(graph, B, rng, n, count):
    out = []
    for _ in range(count):
        size = int(rng.integers(1, max(2, min(len(B), int(n)) + 1)))
        out.append(random_blob(graph, B, size, rng))
    return out


def iso_branch(A_size, n, theta):
    """Which branch of the case split handles a set of this size."""
    return "large" if A_size >= n ** theta else "small"


# Sobolev inequality for compactly supported functions -------------------------

def _edge_terms(graph, u, within):
    """``|u(y) - u(y')|`` over undirected edges selected by ``within(src, dst)``."""
    keep = graph.sources < graph.indices
    s, t = graph.sources[keep], graph.indices[keep]
    sel = within(s, t)
    return np.abs(u[s[sel]] - u[t[sel]]), keep, sel


def sobolev_compact(graph, x, n, zeta, u, d=None):
    """LHS/RHS of the Sobolev inequality for ``u`` supported in ``B(x, n)``."""
    d = _dim(graph) if d is None else d
    u = np.asarray(u, dtype=float)
    B = cl.ball(graph, x, n).vertices
    inB = cl.as_mask(B, graph.n)
    if np.any(u[~inB] != 0):
        raise DomainError("u is not supported in the ball")
    alpha = d / (d - zeta)
    lhs = np.mean(np.abs(u[B]) ** alpha) ** (1.0 / alpha)
    grad, _, _ = _edge_terms(graph, u, lambda s, t: inB[s] | inB[t])
    rhs = n / len(B) * grad.sum()
    if lhs == 0:
        return 0.0
    return math.inf if rhs == 0 else float(lhs / rhs)


def random_functions(graph, x, n, count, rng, anchored=False, support=None):
    """Seeded test functions: distance bumps, blob indicators, signed noise."""
    region = cl.ball(graph, x, n).vertices if support is None else support
    dist = graph.distances(x).astype(float)
    funcs = []
    for k in range(count):
        u = np.zeros(graph.n)
        kind = k % 3
        if kind == 0:
            c = int(rng.choice(region))
            dc = graph.distances(c, int(n)).astype(float)
            h = rng.uniform(0.5, n + 0.5)
            u[dc >= 0] = np.maximum(h - dc[dc >= 0], 0.0)
        elif kind == 1:
            size = int(rng.integers(1, len(region) + 1))
            u[random_blob(graph, region, size, rng)] = rng.uniform(0.5, 2.0)
        else:
            u[region] = rng.standard_normal(len(region)) * (dist[region] + 1)
        mask = cl.as_mask(region, graph.n)
        u[~mask] = 0.0
        if anchored:
            u[x] = 0.0
        funcs.append(u)
    return funcs


def sobolev_batch(graph, x, n, zeta, C_S1, count=60, seed=0, d=None):
    x = graph.resolve(x)
    rng = np.random.default_rng(seed)
    worst, wit = 0.0, None
    for u in random_functions(graph, x, n, count, rng):
        r = sobolev_compact(graph, x, n, zeta, u, d)
        if r > worst:
            worst, wit = r, u
    margin = math.inf if worst == 0 else C_S1 / worst
    return InequalityCertificate("sobolev", C_S1, worst, margin, wit, "randomized", seed)


def coarea_identity(graph, u, edge_weights=None):
    """Both sides of ``sum_e w |u(y) - u(y')| = int_0^inf |∂{u > t}|_w dt`` for ``u >= 0``."""
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise DomainError("co-area identity is stated for nonnegative u")
    w = np.ones(len(graph.indices)) if edge_weights is None else np.asarray(edge_weights, dtype=float)
    keep = graph.sources < graph.indices
    lhs = float(np.sum(w[keep] * np.abs(u[graph.sources[keep]] - u[graph.indices[keep]])))
    levels = np.unique(np.r_[0.0, u])
    rhs = 0.0
    for lo, hi in zip(levels[:-1], levels[1:]):
        rhs += (hi - lo) * cl.boundary_weight(graph, u > lo, None, w)
    return lhs, float(rhs)


def weak_poincare_ratio(graph, x, n, C_W, u):
    """``inf_m sum_{B(x,n)} |u - m|`` over ``n sum_{B(x, C_W n)} |grad u|``."""
    u = np.asarray(u, dtype=float)
    B = cl.ball(graph, x, n).vertices
    outer = cl.as_mask(cl.ball(graph, x, C_W * n).vertices, graph.n)
    lhs = np.abs(u[B] - np.median(u[B])).sum()
    grad, _, _ = _edge_terms(graph, u, lambda s, t: outer[s] & outer[t])
    rhs = n * grad.sum()
    if lhs == 0:
        return 0.0
    return math.inf if rhs == 0 else float(lhs / rhs)


# anchored inequalities -------------------------------------------------------

def anchored_set(graph, x, n, C_W=1.0, strategy=None):
    if strategy is not None:
        return np.sort(np.asarray(strategy(graph, x, n, C_W), dtype=np.int64))
    return np.sort(cl.ball(graph, x, C_W * n).vertices)


def anchored_boundary_ratio(graph, x, n, A, profile, S=None, C_W=1.0):
    """``n |∂_S A|_w / |A|`` for one set ``A ⊂ S \\ {x}``."""
    x = graph.resolve(x)
    A = cl.as_index(A, graph.n)
    if x in set(A.tolist()):
        raise PreconditionError("the anchor must not belong to A")
    if len(A) == 0:
        raise DomainError("A is empty")
    S = anchored_set(graph, x, n, C_W) if S is None else cl.as_index(S, graph.n)
    w = profile.edge_weights(graph)
    return n * cl.boundary_weight(graph, A, S, w) / len(A)


def check_scale(n, eps, d, N):
    """Scale condition of the anchored estimate: ``floor(n^((1-eps)/(d-eps))) >= N``."""
    return math.floor(n ** ((1.0 - eps) / (d - eps))) >= N


def anchored_riso(graph, x, n, eps, profile=None, C2=None, C_W=1.0, S=None, N=None,
                  exhaustive_max=EXHAUSTIVE_MAX):
    """Exact ``min n |∂_S A|_w / |A|`` over nonempty ``A ⊂ S \\ {x}``.

    Small ground sets are enumerated; larger ones go through the parametric
    minimum cut, which is exact as well.  ``N`` (if given) is the scale
    threshold ``N_1 v N_2`` of the anchored estimate.
    """
    x = graph.resolve(x)
    d = _dim(graph)
    if N is not None and not check_scale(n, eps, d, N):
        raise PreconditionError("n is below the scale threshold of the anchored estimate")
    profile = profile or WeightProfile(n, eps, x, d)
    S = anchored_set(graph, x, n, C_W) if S is None else cl.as_index(S, graph.n)
    ground = S[S != x]
    w = profile.edge_weights(graph)
    if len(ground) == 0:
        raise DomainError("S contains only the anchor")
    if len(ground) <= min(exhaustive_max, MAX_ENUMERATION):
        table = min_boundary_table(graph, ground, ambient=S, edge_weight=w)
        k = np.arange(1, len(ground) + 1)
        ratios = n * table.best[1:] / k
        j = int(np.argmin(ratios))
        value, witness, method = float(ratios[j]), table.witness_set(j + 1), "exhaustive"
    else:
        res = min_ratio_cut(graph, ground, ambient=S, edge_weight=w)
        value, witness, method = n * res.value, res.witness, "parametric-mincut"
    target = C2 if C2 is not None else value
    margin = math.inf if target == 0 else value / target
    return InequalityCertificate("anchored-riso", target, value, margin, witness, method)


def proof_case(graph, x, n, A, eps, C1, C_W=1.0, S_family=None):
    """Classify ``A`` by the case split of the anchored isoperimetry proof.

    Returns ``("a", None)`` for ``|A| <= (1 - C1)|S(x,n)|``, ``("b", None)``
    if ``A`` meets ``S(x, floor(n^beta))``, else ``("c", k)`` with ``k`` the
    first scale at which ``A`` fills more than ``1 - C1`` of ``S(x, k)``.
    """
    d = _dim(graph)
    x = graph.resolve(x)
    A = cl.as_mask(A, graph.n)
    fam = S_family or (lambda j: anchored_set(graph, x, j, C_W))
    S = fam(n)
    if A.sum() <= (1.0 - C1) * len(S):
        return "a", None
    beta = (1.0 - eps) / (d - eps)
    if A[fam(math.floor(n ** beta))].any():
        return "b", None
    for j in range(0, int(n) + 1):
        Sj = fam(j)
        if A[Sj].sum() > (1.0 - C1) * len(Sj):
            return "c", j
    return "c", None


def case_bound(case, n, d, eps, C1, C3, c_reg, C_reg, C_W, k=None):
    """Lower bound for ``n |∂_S A|_w / |A|`` that the proof gives in each case."""
    if case == "a":
        return C3 * C_W ** -d
    if case == "b":
        return 1.0 / (C_reg * C_W ** (2 * d))
    return C1 * C3 * c_reg / (C_reg * C_W ** (2 * d))


def anchored_riso_cases(graph, x, n, eps, c_reg, C_reg, C_riso, C_W=1.0, count=60, seed=0, profile=None):
    """Randomized check of each case of the proof with the proof's constants.

    Returns ``{case: InequalityCertificate}`` for the cases that were hit.
    """
    x = graph.resolve(x)
    d = _dim(graph)
    profile = profile or WeightProfile(n, eps, x, d)
    C1 = constant_C1(d, c_reg, C_reg, C_W)
    C3 = C1 * C_riso
    S = anchored_set(graph, x, n, C_W)
    ground = S[S != x]
    rng = np.random.default_rng(seed)
    sets = []
    for _ in range(count):
        size = int(rng.integers(1, len(ground) + 1))
        sets.append(random_blob(graph, ground, size, rng))
        keep = rng.random(len(ground)) < rng.uniform(0.5, 1.0)
        if keep.any():
            sets.append(ground[keep])
    worst = {}
    for A in sets:
        case, k = proof_case(graph, x, n, A, eps, C1, C_W)
        r = anchored_boundary_ratio(graph, x, n, A, profile, S)
        bound = case_bound(case, n, d, eps, C1, C3, c_reg, C_reg, C_W, k)
        if case not in worst or r / bound < worst[case].margin:
            worst[case] = InequalityCertificate(f"anchored-riso/{case}", bound, r, r / bound, A,
                                                "randomized", seed)
    return worst


def anchored_sobolev(graph, x, n, profile, u, C_W=1.0):
    """LHS/RHS of the anchored Sobolev inequality for one function ``u``."""
    x = graph.resolve(x)
    u = np.asarray(u, dtype=float)
    if u[x] != 0:
        raise PreconditionError("u must vanish at the anchor")
    B = cl.ball(graph, x, n).vertices
    outer = cl.as_mask(cl.ball(graph, x, C_W * n).vertices, graph.n)
    lhs = np.abs(u[B]).sum()
    w = profile.edge_weights(graph)
    keep = graph.sources < graph.indices
    s, t = graph.sources[keep], graph.indices[keep]
    sel = outer[s] & outer[t]
    rhs = n * np.sum(w[keep][sel] * np.abs(u[s[sel]] - u[t[sel]]))
    if lhs == 0:
        return 0.0
    return math.inf if rhs == 0 else float(lhs / rhs)


def anchored_sobolev_exhaustive(graph, x, n, profile, C_bar=None, C_W=1.0,
                                exhaustive_max=EXHAUSTIVE_MAX):
    """Sharp constant of the anchored Sobolev inequality on ``B(x, C_W n)``.

    By co-area the worst ratio over all anchored functions is attained by an
    indicator, i.e. equals ``max |A ∩ B(x,n)| / (n |∂_{B(x,C_W n)} A|_w)`` over
    ``A`` avoiding the anchor.
    """
    x = graph.resolve(x)
    outer = np.sort(cl.ball(graph, x, C_W * n).vertices)
    inner = cl.as_mask(cl.ball(graph, x, n).vertices, graph.n)
    ground = outer[outer != x]
    count = inner[ground].astype(np.int64)
    w = profile.edge_weights(graph)
    if len(ground) <= min(exhaustive_max, MAX_ENUMERATION):
        table = min_boundary_table(graph, ground, ambient=outer, edge_weight=w, count=count)
        c = np.arange(1, len(table.best))
        ok = np.isfinite(table.best[1:])
        ratios = np.where(ok, c / (n * table.best[1:]), 0.0)
        j = int(np.argmax(ratios))
        worst, witness, method = float(ratios[j]), table.witness_set(j + 1), "exhaustive"
    else:
        res = min_ratio_cut(graph, ground, ambient=outer, edge_weight=w, count=count)
        worst, witness, method = 1.0 / (n * res.value), res.witness, "parametric-mincut"
    target = worst if C_bar is None else C_bar
    margin = math.inf if worst == 0 else target / worst
    return InequalityCertificate("anchored-sobolev", target, worst, margin, witness, method)


def anchored_sobolev_batch(graph, x, n, profile, C_bar, count=60, seed=0, C_W=1.0):
    x = graph.resolve(x)
    rng = np.random.default_rng(seed)
    outer = cl.ball(graph, x, C_W * n).vertices
    worst, wit = 0.0, None
    for u in random_functions(graph, x, n, count, rng, anchored=True, support=outer):
        r = anchored_sobolev(graph, x, n, profile, u, C_W)
        if r > worst:
            worst, wit = r, u
    margin = math.inf if worst == 0 else C_bar / worst
    return InequalityCertificate("anchored-sobolev", C_bar, worst, margin, wit, "randomized", seed)
