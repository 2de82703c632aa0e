"""Open clusters, chemical balls and local measures.

Vertices of a :class:`Graph` are numbered ``0..n-1`` ("local indices").  A
:class:`ClusterGraph` additionally remembers which lattice vertices of its
field these are; lattice positions are passed as coordinate tuples and
translated with :meth:`ClusterGraph.local`.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ContainmentError, DomainError, MembershipError


class Graph:
    """Finite weighted graph in symmetric CSR form.

    ``disp[e]`` is the lattice displacement ``y - x`` carried by the directed
    edge ``e = (x, y)``; on a torus it is the short step, not the difference
    of wrapped coordinates.
    """

    def __init__(self, n, eu, ev, weights=None, disp=None, coords=None):
        eu = np.asarray(eu, dtype=np.int64).ravel()
        ev = np.asarray(ev, dtype=np.int64).ravel()
        if eu.shape != ev.shape:
            raise ValueError("edge endpoint arrays differ in length")
        w = np.ones(eu.shape[0]) if weights is None else np.asarray(weights, dtype=float).ravel()
        if np.any(w <= 0):
            raise ValueError("graph edges must carry positive weight")
        if np.any(eu == ev):
            raise ValueError("self loops are not allowed")
        self.n = int(n)
        src = np.concatenate([eu, ev])
        dst = np.concatenate([ev, eu])
        order = np.lexsort((dst, src))
        self.indices = dst[order]
        self.weights = np.concatenate([w, w])[order]
        counts = np.bincount(src, minlength=self.n)
        self.indptr = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(counts, out=self.indptr[1:])
        self.sources = src[order]
        if disp is not None:
            disp = np.asarray(disp, dtype=np.int64)
            if disp.ndim != 2:
                disp = disp.reshape(len(eu), -1)
            self.disp = np.concatenate([disp, -disp])[order]
        else:
            self.disp = None
        self.coords = None if coords is None else np.asarray(coords, dtype=np.int64)
        self.edges = (eu, ev, w)

    @classmethod
    def from_networkx(cls, g, weight="weight"):
        nodes = list(g.nodes())
        pos = {v: i for i, v in enumerate(nodes)}
        eu, ev, w = [], [], []
        for a, b, data in g.edges(data=True):
            eu.append(pos[a])
            ev.append(pos[b])
            w.append(data.get(weight, 1.0))
        return cls(len(nodes), eu, ev, w)

    @property
    def n_edges(self):
        return len(self.edges[0])

    def degree(self):
        return np.diff(self.indptr)

    def mu(self):
        return np.bincount(self.sources, weights=self.weights, minlength=self.n)

    def neighbors(self, v):
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def check_vertex(self, v):
        v = int(v)
        if not 0 <= v < self.n:
            raise MembershipError(f"vertex {v} is not in the graph")
        return v

    def resolve(self, x):
        """Local index from an index or, when coordinates are attached, a coordinate tuple."""
        if np.ndim(x) == 0:
            return self.check_vertex(x)
        if self.coords is None:
            raise MembershipError("graph has no coordinates")
        hit = np.flatnonzero(np.all(self.coords == np.asarray(x), axis=1))
        if len(hit) == 0:
            raise MembershipError(f"{tuple(x)} is not in the graph")
        return int(hit[0])

    def distances(self, source, radius=-1):
        """Graph distances from ``source`` (-1 for unreachable or beyond ``radius``)."""
        _, dist = _kernels.bfs(self.indptr, self.indices, self.resolve(source), int(radius))
        return dist

    def is_connected(self, vertices=None):
        if vertices is None:
            return self.n == 0 or bool(np.all(self.distances(0) >= 0))
        sub, _ = self.subgraph(vertices)
        return sub.is_connected()

    def subgraph(self, vertices):
        """Induced subgraph on ``vertices`` and the local-to-parent index map."""
        vertices = as_index(vertices, self.n)
        pos = np.full(self.n, -1, dtype=np.int64)
        pos[vertices] = np.arange(len(vertices))
        eu, ev, w = self.edges
        keep = (pos[eu] >= 0) & (pos[ev] >= 0)
        disp = None
        if self.disp is not None:
            fwd = self._forward_disp()
            disp = fwd[keep]
        coords = None if self.coords is None else self.coords[vertices]
        return Graph(len(vertices), pos[eu[keep]], pos[ev[keep]], w[keep], disp, coords), vertices

    def _forward_disp(self):
        # displacement of each undirected edge in its stored (eu -> ev) direction
        eu, ev, _ = self.edges
        key = self.sources * self.n + self.indices
        lookup = np.searchsorted(key, eu * self.n + ev)
        return self.disp[lookup]

    def to_networkx(self):
        import networkx as nx
        g = nx.Graph()
        g.add_nodes_from(range(self.n))
        eu, ev, w = self.edges
        g.add_weighted_edges_from(zip(eu.tolist(), ev.tolist(), w.tolist()))
        return g


def as_index(vertices, n):
    """Normalize a boolean mask or an index collection to a sorted unique index array."""
    arr = np.asarray(vertices)
    if arr.dtype == bool:
        if arr.shape != (n,):
            raise ValueError("boolean vertex mask has the wrong length")
        return np.flatnonzero(arr)
    arr = np.unique(arr.astype(np.int64).ravel())
    if len(arr) and (arr[0] < 0 or arr[-1] >= n):
        raise MembershipError("vertex index out of range")
    return arr


def as_mask(vertices, n):
    mask = np.zeros(n, dtype=bool)
    mask[as_index(vertices, n)] = True
    return mask


# lattice clusters ------------------------------------------------------------

def open_edges(field):
    """Endpoints (global indices), weights and axes of all open edges."""
    box = field.box
    ids = np.arange(box.n_vertices).reshape(box.side)
    us, vs, ws, axes = [], [], [], []
    for a in range(box.dim):
        w = field.weights[..., a]
        nbr = np.roll(ids, -1, axis=a)
        keep = w > 0
        us.append(ids[keep])
        vs.append(nbr[keep])
        ws.append(w[keep])
        axes.append(np.full(int(keep.sum()), a, dtype=np.int64))
    return np.concatenate(us), np.concatenate(vs), np.concatenate(ws), np.concatenate(axes)


def component_labels(field):
    """Union-find root of every lattice vertex."""
    eu, ev, _, _ = open_edges(field)
    return _kernels.union_find_labels(field.box.n_vertices, eu, ev)


class ClusterGraph(Graph):
    """One open component of a conductance field (adjacency built on first use)."""

    def __init__(self, field, vertex_ids, component_id=0, is_giant=False):
        self.field = field
        self.vertex_ids = np.asarray(vertex_ids, dtype=np.int64)
        self.component_id = int(component_id)
        self.is_giant = bool(is_giant)
        self.n = len(self.vertex_ids)
        self._built = False

    def __len__(self):
        return self.n

    def __getattr__(self, name):
        # CSR arrays are materialized lazily; __getattr__ only fires when missing
        if name in ("indices", "weights", "indptr", "sources", "disp", "coords", "edges"):
            self._build()
            return self.__dict__[name]
        raise AttributeError(name)

    def _build(self):
        if self._built:
            return
        self._built = True
        box = self.field.box
        pos = np.full(box.n_vertices, -1, dtype=np.int64)
        pos[self.vertex_ids] = np.arange(self.n)
        eu, ev, w, axes = open_edges(self.field)
        keep = pos[eu] >= 0
        disp = np.eye(box.dim, dtype=np.int64)[axes[keep]]
        coords = box.coords(self.vertex_ids)
        Graph.__init__(self, self.n, pos[eu[keep]], pos[ev[keep]], w[keep], disp, coords)
        self._pos = pos

    @property
    def box(self):
        return self.field.box

    def local(self, x):
        """Local index of a lattice vertex given by coordinates."""
        x = np.asarray(x, dtype=np.int64).ravel()
        if len(x) != self.box.dim:
            raise MembershipError(f"expected {self.box.dim} coordinates, got {len(x)}")
        if not self.box.periodic and not self.box.contains(x):
            raise MembershipError(f"{tuple(x)} lies outside the box")
        gid = int(self.box.index(x))
        i = np.searchsorted(self.vertex_ids, gid)
        if i >= self.n or self.vertex_ids[i] != gid:
            raise MembershipError(f"{tuple(x)} is not in the cluster")
        return int(i)

    def resolve(self, x):
        """Local index from either a local index or a coordinate tuple."""
        if np.ndim(x) == 0:
            return self.check_vertex(x)
        return self.local(x)

    def subgraph(self, vertices):
        self._build()
        return Graph.subgraph(self, vertices)


def components(field):
    """All open components, largest first (ties broken by smallest vertex)."""
    labels = component_labels(field)
    order = np.argsort(labels, kind="stable")
    sorted_labels = labels[order]
    starts = np.flatnonzero(np.r_[True, sorted_labels[1:] != sorted_labels[:-1]])
    groups = np.split(order, starts[1:])
    groups.sort(key=lambda g: (-len(g), g[0]))
    return [ClusterGraph(field, g, i, i == 0) for i, g in enumerate(groups)]


def giant_component(field):
    labels = component_labels(field)
    counts = np.bincount(labels, minlength=len(labels))
    best = counts.max()
    # smallest vertex among the largest components, to agree with components()
    firsts = np.full(len(labels), len(labels))
    np.minimum.at(firsts, labels, np.arange(len(labels)))
    root = np.flatnonzero(counts == best)
    root = root[np.argmin(firsts[root])]
    return ClusterGraph(field, np.flatnonzero(labels == root), 0, True)


def component_sizes(field):
    """Component sizes, largest first."""
    sizes = np.bincount(component_labels(field))
    return np.sort(sizes[sizes > 0])[::-1]


# balls ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Ball:
    center: int
    radius: float
    vertices: np.ndarray
    dist: np.ndarray

    def __len__(self):
        return len(self.vertices)

    def mask(self, n):
        return as_mask(self.vertices, n)


def ball(graph, x, r):
    """Closed chemical ball: vertices at graph distance <= floor(r), in BFS order."""
    x = graph.resolve(x)
    if r < 0:
        raise DomainError("radius must be nonnegative")
    order, dist = _kernels.bfs(graph.indptr, graph.indices, x, int(np.floor(r)))
    return Ball(x, float(r), order, dist[order])


def ball_sizes(graph, x, radii):
    """``|B(x, r)|`` for each radius, from a single search."""
    x = graph.resolve(x)
    radii = np.floor(np.asarray(radii, dtype=float)).astype(np.int64)
    _, dist = _kernels.bfs(graph.indptr, graph.indices, x, int(radii.max()))
    hist = np.bincount(dist[dist >= 0], minlength=radii.max() + 1)
    return np.cumsum(hist)[radii]


def l1_ball_size(d, r):
    """Number of points of Z^d with |x|_1 <= r."""
    from math import comb
    r = int(np.floor(r))
    return sum(2 ** k * comb(d, k) * comb(r, k) for k in range(min(d, r) + 1))


def relative_boundary(graph, A, B=None):
    """Edges ``(x, y)`` with ``x`` in ``A`` and ``y`` in ``B \\ A``, one row each."""
    a = as_mask(A, graph.n)
    b = np.ones(graph.n, dtype=bool) if B is None else as_mask(B, graph.n)
    if np.any(a & ~b):
        raise ContainmentError("A is not contained in B")
    src, dst = graph.sources, graph.indices
    keep = a[src] & b[dst] & ~a[dst]
    return np.stack([src[keep], dst[keep]], axis=1)


def boundary_weight(graph, A, B=None, edge_weights=None):
    """``|\\partial_B A|_w``; ``edge_weights`` is per directed CSR slot (default 1)."""
    a = as_mask(A, graph.n)
    b = np.ones(graph.n, dtype=bool) if B is None else as_mask(B, graph.n)
    src, dst = graph.sources, graph.indices
    keep = a[src] & b[dst] & ~a[dst]
    if edge_weights is None:
        return float(np.count_nonzero(keep))
    return float(np.sum(np.asarray(edge_weights)[keep]))


# local measures --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LocalMeasures:
    mu: np.ndarray
    nu: np.ndarray


def local_measures(graph):
    """``mu(x) = sum w`` and ``nu(x) = sum 1/w`` over open edges at ``x`` (0/0 = 0)."""
    w = graph.weights
    if len(w) == 0:
        z = np.zeros(graph.n)
        return LocalMeasures(z, z.copy())
    src = graph.sources
    mu = np.bincount(src, weights=w, minlength=graph.n)
    nu = np.bincount(src, weights=1.0 / w, minlength=graph.n)
    return LocalMeasures(mu, nu)


def averaged_norm(values, A=None, p=1.0):
    """``(|A|^-1 sum_{x in A} |f(x)|^p)^(1/p)``; ``p = inf`` gives the maximum."""
    values = np.asarray(values, dtype=float)
    sub = values if A is None else values[as_index(A, len(values))]
    if sub.size == 0:
        raise DomainError("averaged norm over an empty set")
    if p < 1:
        raise DomainError(f"p must be >= 1, got {p}")
    a = np.abs(sub)
    if np.isinf(p):
        return float(a.max())
    if p == 1:
        return float(a.mean())
    return float(np.mean(a ** p) ** (1.0 / p))


# margins and centers ---------------------------------------------------------

def margin_mask(box, coords, margin):
    """True for coordinates within ``margin`` of the box faces (never on a torus)."""
    coords = np.asarray(coords)
    if box.periodic or margin <= 0:
        return np.zeros(coords.shape[:-1], dtype=bool)
    side = np.asarray(box.side)
    gap = np.minimum(coords, side - 1 - coords).min(axis=-1)
    return gap < margin


def interior_mask(cluster, margin=None):
    margin = cluster.box.default_margin() if margin is None else margin
    return ~margin_mask(cluster.box, cluster.coords, margin)


def center_vertex(cluster):
    """Cluster vertex closest (l1) to the geometric box center; lowest index on ties."""
    mid = (np.asarray(cluster.box.side) - 1) / 2.0
    gap = np.abs(cluster.box.coords(cluster.vertex_ids) - mid).sum(axis=1)
    return int(np.argmin(gap))


def relative_positions(cluster, x):
    """Lattice displacement of every vertex from ``x`` (minimum image on a torus)."""
    x = cluster.resolve(x)
    diff = cluster.coords - cluster.coords[x]
    if cluster.box.periodic:
        side = np.asarray(cluster.box.side)
        diff = (diff + side // 2) % side - side // 2
    return diff
