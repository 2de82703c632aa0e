"""Finite-volume corrector, harmonic coordinates and the effective covariance.

The corrector solves ``L chi = L Pi`` on a cluster, where ``L`` is the
generator ``Lf(x) = sum_y w(x,y) (f(y) - f(x))`` and ``Pi`` the position
field.  Increments of ``Pi`` are read off the edge displacements, so the same
code handles open boxes and tori.
"""

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import _kernels
from . import cluster as cl
from .errors import (CoverageError, DomainError, FormatError, ParameterError,
                     SnapshotIOError, SolverError, StructureError)

DEFAULT_TOL = 1e-10
MODES = {"dirichlet": "dirichlet-zero", "dirichlet-zero": "dirichlet-zero",
         "periodic": "periodic-mean-zero", "periodic-mean-zero": "periodic-mean-zero"}


@dataclass(eq=False)
class CorrectorField:
    graph: object
    chi: np.ndarray                 # (n, d); off-cluster vertices are implicitly 0
    anchor: int
    mode: str
    iterations: np.ndarray
    residual: np.ndarray            # true max-norm residual per coordinate
    tol: float
    margin: int
    solved: np.ndarray = field(repr=False)  # vertices where the equation was imposed

    @property
    def dim(self):
        return self.chi.shape[1]

    def phi_increments(self):
        """``Phi(y) - Phi(x)`` for every directed CSR slot ``(x, y)``."""
        g = self.graph
        return g.disp - (self.chi[g.indices] - self.chi[g.sources])

    def phi(self):
        """Harmonic coordinates ``Pi - chi`` (positions relative to the anchor)."""
        pos = relative_positions(self.graph, self.anchor)
        return pos - self.chi


def relative_positions(graph, x):
    if isinstance(graph, cl.ClusterGraph):
        return cl.relative_positions(graph, x)
    if graph.coords is None:
        raise ParameterError("graph carries no coordinates")
    return graph.coords - graph.coords[x]


def drift(graph):
    """``b(x) = sum_y w(x,y) (y - x) = (L Pi)(x)``."""
    d = graph.disp.shape[1]
    return np.stack([np.bincount(graph.sources, weights=graph.weights * graph.disp[:, a],
                                 minlength=graph.n) for a in range(d)], axis=1)


def generator_apply(graph, f):
    """``(L f)(x)`` for a vertex function (columns are treated independently)."""
    f = np.asarray(f, dtype=float)
    diff = f[graph.indices] - f[graph.sources]
    w = graph.weights if f.ndim == 1 else graph.weights[:, None]
    out = np.zeros_like(f)
    np.add.at(out, graph.sources, w * diff)
    return out


def _default_anchor(graph):
    if isinstance(graph, cl.ClusterGraph):
        return cl.center_vertex(graph)
    return 0


def solve_corrector(graph, mode="dirichlet", tol=DEFAULT_TOL, margin=None, anchor=None, maxiter=None):
    """Finite-volume corrector by block Jacobi-preconditioned conjugate gradient.

    ``dirichlet``: ``chi = 0`` is imposed on the margin (vertices within
    ``margin`` of an open box face) and the equation on the rest.
    ``periodic``: the equation everywhere, solved in the mean-zero gauge.
    In both modes the result is finally shifted so ``chi(anchor) = 0``.
    Convergence means ``max|L(Pi - chi)| <= tol * max(mu)`` on solved vertices.
    """
    mode_tag = MODES.get(mode)
    if mode_tag is None:
        raise ParameterError(f"unknown corrector mode {mode!r}")
    if tol <= 0:
        raise ParameterError("tolerance must be positive")
    if graph.disp is None:
        raise ParameterError("graph carries no edge displacements")
    if graph.n == 0 or not graph.is_connected():
        raise StructureError("corrector needs a connected cluster")
    anchor = _default_anchor(graph) if anchor is None else graph.resolve(anchor)
    d = graph.disp.shape[1]
    mu = graph.mu()
    scale = float(mu.max()) if graph.n > 1 else 1.0
    b = drift(graph)

    if mode_tag == "dirichlet-zero" and isinstance(graph, cl.ClusterGraph):
        margin = graph.box.default_margin() if margin is None else int(margin)
        free = cl.interior_mask(graph, margin)
    elif mode_tag == "dirichlet-zero" and margin is not None and graph.coords is not None:
        lo, hi = graph.coords.min(axis=0), graph.coords.max(axis=0)
        gap = np.minimum(graph.coords - lo, hi - graph.coords).min(axis=1)
        free = gap >= int(margin)
    else:
        free = np.ones(graph.n, dtype=bool)
    if mode_tag == "periodic-mean-zero" or free.all():
        # no pinned vertices: Neumann / torus problem, fix the gauge by centering
        mode_tag = "periodic-mean-zero"
        free = np.ones(graph.n, dtype=bool)
        margin = 0
    margin = 0 if margin is None else margin
    center = mode_tag == "periodic-mean-zero"

    F = np.flatnonzero(free)
    W = sp.csr_matrix((graph.weights, graph.indices, graph.indptr), shape=(graph.n, graph.n))
    Wf = W[F][:, F].tocsr()
    Wf.sort_indices()
    diag = mu[F]
    if np.any(diag <= 0):
        raise StructureError("isolated vertex in the solved region")
    rhs = -b[F]
    X = np.zeros((len(F), d))
    cap = int(50 * math.sqrt(len(F))) + 1 if maxiter is None else int(maxiter)
    thresh = tol * scale
    total = np.zeros(d, dtype=np.int64)
    for _restart in range(4):
        its, _ = _kernels.pcg_block(Wf.indptr.astype(np.int64), Wf.indices.astype(np.int64),
                                    Wf.data, diag, rhs, X, thresh, cap, center)
        total += np.where(its >= 0, its, cap)
        if center:
            X -= X.mean(axis=0)
        true_res = np.abs(rhs - (diag[:, None] * X - Wf @ X)).max(axis=0)
        if np.all(true_res <= thresh) or np.any(its < 0):
            break
    if np.any(true_res > thresh):
        raise SolverError(f"conjugate gradient stalled at residual {true_res.max():.3e} "
                          f"(target {thresh:.3e}, cap {cap})", float(true_res.max()))
    chi = np.zeros((graph.n, d))
    chi[F] = X
    chi -= chi[anchor]
    return CorrectorField(graph, chi, anchor, mode_tag, total, true_res, tol, margin, free)


def harmonicity_residual(corr):
    """``max |L Phi|`` over solved vertices, per coordinate."""
    lphi = drift(corr.graph) - generator_apply(corr.graph, corr.chi)
    if not corr.solved.any():
        return np.zeros(corr.dim)
    return np.abs(lphi[corr.solved]).max(axis=0)


def energy(graph, increments):
    """``sum_e w(e) |psi(e)|^2`` over undirected edges for per-slot increments."""
    inc = np.asarray(increments, dtype=float)
    if inc.ndim == 1:
        inc = inc[:, None]
    return 0.5 * float(np.sum(graph.weights[:, None] * inc ** 2))


# effective covariance --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CovarianceEstimate:
    matrix: np.ndarray
    n_samples: int
    stderr: np.ndarray


def local_covariance(corr):
    """``q_ij(x) = sum_y w(x,y) dPhi_i dPhi_j`` per vertex, shape (n, d, d)."""
    g = corr.graph
    inc = corr.phi_increments()
    d = corr.dim
    out = np.zeros((g.n, d, d))
    for i in range(d):
        for j in range(i, d):
            v = np.bincount(g.sources, weights=g.weights * inc[:, i] * inc[:, j], minlength=g.n)
            out[:, i, j] = v
            out[:, j, i] = v
    return out


def statistics_mask(corr, margin=None):
    """Vertices used for spatial averages: solved and off the statistics margin."""
    mask = corr.solved.copy()
    g = corr.graph
    if isinstance(g, cl.ClusterGraph) and not g.box.periodic:
        m = max(corr.margin, g.box.default_margin()) if margin is None else margin
        mask &= cl.interior_mask(g, m)
    return mask


def _block_ids(graph, verts, blocks):
    if graph.coords is None:
        return (np.arange(len(verts)) * blocks) // max(len(verts), 1)
    c = graph.coords[verts]
    lo = c.min(axis=0)
    span = c.max(axis=0) - lo + 1
    cell = np.minimum((c - lo) * blocks // span, blocks - 1)
    return np.ravel_multi_index(tuple(cell.T), (blocks,) * c.shape[1])


def sigma_estimate(graph, corr, margin=None, blocks=4, n_boot=200, seed=0):
    """Spatial average of ``q(x)`` with block-bootstrap standard errors."""
    if corr.graph is not graph:
        raise ParameterError("corrector was solved on a different graph")
    mask = statistics_mask(corr, margin)
    verts = np.flatnonzero(mask)
    if len(verts) == 0:
        raise DomainError("no interior vertices to average over")
    q = local_covariance(corr)[verts]
    mean = q.mean(axis=0)
    ids = _block_ids(graph, verts, blocks)
    uniq, inv = np.unique(ids, return_inverse=True)
    nb = len(uniq)
    sums = np.zeros((nb,) + mean.shape)
    np.add.at(sums, inv, q)
    counts = np.bincount(inv, minlength=nb).astype(float)
    if nb < 2:
        se = np.full(mean.shape, np.nan)
    else:
        rng = np.random.default_rng(seed)
        draws = rng.integers(0, nb, size=(n_boot, nb))
        boot = sums[draws].sum(axis=1) / counts[draws].sum(axis=1)[:, None, None]
        se = boot.std(axis=0, ddof=1)
    return CovarianceEstimate(0.5 * (mean + mean.T), len(verts), se)


# sublinearity diagnostics ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class SublinearityCurve:
    ns: np.ndarray
    values: np.ndarray      # (len(ns), d)
    norm: str


def _balls(corr, ns, center):
    center = corr.anchor if center is None else corr.graph.resolve(center)
    return [cl.ball(corr.graph, center, n).vertices for n in ns]


def sublinearity_l1(corr, ns, center=None):
    """``||chi_j / n||_{1, B(n)}`` for every n and coordinate j."""
    ns = np.asarray(ns)
    vals = [np.abs(corr.chi[b]).mean(axis=0) / n for n, b in zip(ns, _balls(corr, ns, center))]
    return SublinearityCurve(ns, np.array(vals), "l1")


def sublinearity_linf(corr, ns, center=None):
    """``max_{B(n)} |chi_j / n|`` for every n and coordinate j."""
    ns = np.asarray(ns)
    vals = [np.abs(corr.chi[b]).max(axis=0) / n for n, b in zip(ns, _balls(corr, ns, center))]
    return SublinearityCurve(ns, np.array(vals), "linf")


@dataclass(frozen=True, eq=False)
class MaximalReport:
    ns: np.ndarray
    lhs: np.ndarray          # max_{B(n)} |chi/n|
    rhs_norm: np.ndarray     # ||chi/n||_{alpha, B(2n)}
    moment: np.ndarray       # 1 v ||mu||_{p,B(n)} ||nu||_{q,B(n)}
    gamma: float
    prefactor: float
    kappa: float


def maximal_diagnostic(corr, ns, p, q, alpha=1.0, kappa=1.0, center=None):
    """Empirical counterpart of the maximal inequality.

    Fits ``log lhs = log c + gamma log rhs_norm`` across ``ns`` and reports
    the smallest ``c`` with ``lhs <= c (1 v ||mu|| ||nu||)^kappa rhs_norm^gamma``
    at every n.
    """
    ns = np.asarray(ns)
    lm = cl.local_measures(corr.graph)
    small = _balls(corr, ns, center)
    big = _balls(corr, 2 * ns, center)
    absx = np.abs(corr.chi).max(axis=1)
    lhs = np.array([absx[b].max() / n for n, b in zip(ns, small)])
    rhs = np.array([cl.averaged_norm(absx[b] / n, None, alpha) for n, b in zip(ns, big)])
    mom = np.array([max(1.0, cl.averaged_norm(lm.mu[b], None, p) * cl.averaged_norm(lm.nu[b], None, q))
                    for b in small])
    good = (lhs > 0) & (rhs > 0)
    if good.sum() >= 2:
        gamma = np.polyfit(np.log(rhs[good]), np.log(lhs[good]), 1)[0]
    else:
        gamma = math.nan
    g = 1.0 if not np.isfinite(gamma) else gamma
    with np.errstate(divide="ignore", invalid="ignore"):
        pref = np.where(good, lhs / (mom ** kappa * rhs ** g), 0.0)
    return MaximalReport(ns, lhs, rhs, mom, float(gamma), float(pref.max()) if len(pref) else 0.0, kappa)


@dataclass(frozen=True, eq=False)
class NondegeneracyReport:
    n: int
    position: np.ndarray     # mean |v . x/n| per direction
    corrector: np.ndarray    # mean |v . chi/n| per direction


def nondegeneracy_proxy(corr, n, directions=None, center=None):
    center = corr.anchor if center is None else corr.graph.resolve(center)
    d = corr.dim
    V = np.eye(d) if directions is None else np.atleast_2d(np.asarray(directions, dtype=float))
    b = cl.ball(corr.graph, center, n).vertices
    pos = relative_positions(corr.graph, center)[b] / n
    chi = (corr.chi[b] - corr.chi[center]) / n
    return NondegeneracyReport(int(n), np.abs(pos @ V.T).mean(axis=0), np.abs(chi @ V.T).mean(axis=0))


def check_coverage(corr, vertices):
    vertices = np.asarray(vertices)
    if len(vertices) and (vertices.min() < 0 or vertices.max() >= corr.graph.n):
        raise CoverageError("vertex outside the corrector's graph")
    bad = ~corr.solved[vertices]
    if np.any(bad):
        raise CoverageError(f"vertex {int(vertices[np.argmax(bad)])} has no solved corrector value")


# snapshots -------------------------------------------------------------------

MAGIC = b"RCMX"
VERSION = 1
_MODE_CODE = {"dirichlet-zero": 0, "periodic-mean-zero": 1}
_HEAD = "<4sHBBQQI"


@dataclass(frozen=True, eq=False)
class CorrectorSnapshot:
    mode: str
    anchor: int
    vertex_ids: np.ndarray
    chi: np.ndarray
    iterations: np.ndarray
    residual: np.ndarray
    margin: int


def _ids(graph):
    return graph.vertex_ids if isinstance(graph, cl.ClusterGraph) else np.arange(graph.n)


def dumps_corrector(corr):
    ids = _ids(corr.graph)
    n, d = corr.chi.shape
    head = struct.pack(_HEAD, MAGIC, VERSION, d, _MODE_CODE[corr.mode],
                       int(ids[corr.anchor]), n, int(corr.margin))
    return b"".join([head, ids.astype("<u8").tobytes(), corr.chi.astype("<f8").tobytes(),
                     np.asarray(corr.iterations).astype("<u4").tobytes(),
                     np.asarray(corr.residual).astype("<f8").tobytes()])


def save_corrector(corr, path):
    Path(path).write_bytes(dumps_corrector(corr))


def loads_corrector(data):
    size = struct.calcsize(_HEAD)
    if len(data) < size:
        raise SnapshotIOError("corrector snapshot shorter than its header")
    magic, version, d, mcode, anchor, n, margin = struct.unpack_from(_HEAD, data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic bytes {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported corrector snapshot version {version}")
    modes = {v: k for k, v in _MODE_CODE.items()}
    if mcode not in modes:
        raise FormatError(f"unknown corrector mode code {mcode}")
    need = size + 8 * n + 8 * n * d + 4 * d + 8 * d
    if len(data) != need:
        raise SnapshotIOError(f"corrector snapshot holds {len(data)} bytes, header implies {need}")
    off = size
    ids = np.frombuffer(data, "<u8", n, off).astype(np.int64)
    off += 8 * n
    chi = np.frombuffer(data, "<f8", n * d, off).reshape(n, d).astype(np.float64)
    off += 8 * n * d
    its = np.frombuffer(data, "<u4", d, off).astype(np.int64)
    off += 4 * d
    res = np.frombuffer(data, "<f8", d, off).astype(np.float64)
    return CorrectorSnapshot(modes[mcode], int(anchor), ids, chi, its, res, int(margin))


def load_corrector(path, graph=None):
    """Read a corrector snapshot; with ``graph`` rebuild the full field."""
    snap = loads_corrector(Path(path).read_bytes())
    if graph is None:
        return snap
    ids = _ids(graph)
    if len(ids) != len(snap.vertex_ids) or np.any(ids != snap.vertex_ids):
        raise CoverageError("snapshot vertices do not match the graph")
    anchor = int(np.searchsorted(ids, snap.anchor))
    if snap.mode == "periodic-mean-zero":
        solved = np.ones(graph.n, dtype=bool)
    elif isinstance(graph, cl.ClusterGraph):
        solved = cl.interior_mask(graph, snap.margin)
    else:
        solved = np.ones(graph.n, dtype=bool)
    return CorrectorField(graph, snap.chi, anchor, snap.mode, snap.iterations,
                          snap.residual, DEFAULT_TOL, snap.margin, solved)
