"""Variable and constant speed random walks and the invariance-principle test."""

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import _kernels
from . import cluster as cl
from .corrector import check_coverage, local_covariance
from .errors import DomainError, ParameterError, SampleSizeError
from .rng import check_seed, stream

CHUNK = 4096
MAX_CENSORED = 0.05


@dataclass(frozen=True, eq=False)
class TrajectorySample:
    start: int
    times: np.ndarray        # jump times, strictly increasing
    vertices: np.ndarray     # vertex after each jump (vertices[0] = start at time 0)
    positions: np.ndarray    # unwrapped lattice displacement from the start after each jump
    horizon: float
    seed: int
    index: int = 0
    censored: bool = False
    speed: str = "variable"

    @property
    def n_jumps(self):
        return len(self.vertices) - 1

    def holding_times(self):
        """Time spent at each visited vertex (the last one cut at the horizon)."""
        t = np.r_[0.0, self.times, self.horizon]
        return np.diff(t)

    def vertex_at(self, t):
        k = np.searchsorted(self.times, t, side="right")
        return self.vertices[k]

    def position_at(self, t):
        k = np.searchsorted(self.times, t, side="right")
        return self.positions[k]


class _WalkData:
    """Flat arrays shared by every walk on a graph."""

    def __init__(self, graph, stop=None):
        if graph.disp is None:
            raise ParameterError("graph carries no edge displacements")
        self.graph = graph
        self.mu = graph.mu()
        self.disp = np.ascontiguousarray(graph.disp, dtype=np.int64)
        self.stop = np.zeros(graph.n, dtype=np.bool_) if stop is None else np.asarray(stop, dtype=np.bool_)


def censor_mask(graph, margin=None):
    """Vertices whose entry stops a walk: the margin of an open box (none on a torus)."""
    if isinstance(graph, cl.ClusterGraph) and not graph.box.periodic:
        m = graph.box.default_margin() if margin is None else margin
        return ~cl.interior_mask(graph, m)
    return np.zeros(graph.n, dtype=bool)


def _run(data, start, horizon, rng, record, chunk=CHUNK):
    d = data.disp.shape[1]
    pos = np.zeros(d, dtype=np.int64)
    vertex, t = int(start), 0.0
    ts, vs, ps = [], [], []
    status = 0
    empty_t = np.empty(0)
    empty_v = np.empty(0, dtype=np.int64)
    empty_p = np.empty((0, d), dtype=np.int64)
    while status == 0:
        exps = rng.standard_exponential(chunk)
        unifs = rng.random(chunk)
        if record:
            rt, rv, rp = np.empty(chunk), np.empty(chunk, dtype=np.int64), np.empty((chunk, d), dtype=np.int64)
            nrec = chunk
        else:
            rt, rv, rp, nrec = empty_t, empty_v, empty_p, 0
        status, vertex, t, _, k = _kernels.vsrw_run(
            data.graph.indptr, data.graph.indices, data.graph.weights, data.disp, data.mu,
            data.stop, vertex, t, pos, float(horizon), exps, unifs, rt, rv, rp, nrec)
        if record and k:
            ts.append(rt[:k].copy())
            vs.append(rv[:k].copy())
            ps.append(rp[:k].copy())
    if record:
        times = np.concatenate(ts) if ts else np.empty(0)
        verts = np.concatenate([[start]] + vs).astype(np.int64)
        positions = np.concatenate([np.zeros((1, d), dtype=np.int64)] + ps)
        return status, vertex, t, pos, (times, verts, positions)
    return status, vertex, t, pos, None


def simulate_vsrw(graph, start, horizon, seed, index=0, margin=None, censor=True):
    """Event-driven VSRW path up to ``horizon``.

    Holding times are Exp(mu(x)); the next vertex is y with probability
    w(x,y)/mu(x).  Random numbers come from the counter-based stream
    ``(seed, index)``.  On open boxes a path entering the margin is stopped
    there and flagged as censored.
    """
    start = graph.resolve(start)
    if horizon < 0:
        raise DomainError("horizon must be nonnegative")
    seed = check_seed(seed)
    data = _WalkData(graph, censor_mask(graph, margin) if censor else None)
    status, _, t, _, rec = _run(data, start, horizon, stream(seed, index), True)
    times, verts, positions = rec
    end = horizon if status != 2 else t
    return TrajectorySample(start, times, verts, positions, float(end), seed, int(index), status == 2)


def walk_endpoints(graph, starts, horizon, seed, margin=None, censor=True, first_index=0):
    """Displacements at ``horizon`` of independent walks (one stream per walk).

    Returns ``(displacement (m, d), censored (m,))``.
    """
    data = _WalkData(graph, censor_mask(graph, margin) if censor else None)
    starts = np.asarray(starts, dtype=np.int64)
    d = data.disp.shape[1]
    out = np.zeros((len(starts), d), dtype=np.int64)
    cens = np.zeros(len(starts), dtype=bool)
    for i, s in enumerate(starts):
        status, _, _, pos, _ = _run(data, int(s), horizon, stream(seed, first_index + i), False)
        out[i] = pos
        cens[i] = status == 2
    return out, cens


# time change ---------------------------------------------------------------

def additive_functional(sample, graph, t):
    """``A_t = int_0^t mu(X_s) ds``, exact for the piecewise-constant path."""
    mu = graph.mu()
    t = np.asarray(t, dtype=float)
    knots = np.r_[0.0, sample.times]
    rates = mu[sample.vertices]
    acc = np.r_[0.0, np.cumsum(rates[:-1] * np.diff(knots))]
    k = np.searchsorted(knots, t, side="right") - 1
    return acc[k] + rates[k] * (t - knots[k])


def inverse_additive(sample, graph, s):
    """Right-continuous inverse ``a_s = inf{t : A_t > s}``."""
    mu = graph.mu()
    s = np.asarray(s, dtype=float)
    knots = np.r_[0.0, sample.times]
    rates = mu[sample.vertices]
    acc = np.r_[0.0, np.cumsum(rates[:-1] * np.diff(knots))]
    k = np.searchsorted(acc, s, side="right") - 1
    with np.errstate(divide="ignore", invalid="ignore"):
        step = np.where(rates[k] > 0, (s - acc[k]) / rates[k], 0.0)
    return knots[k] + step


def time_change_csrw(sample, graph):
    """CSRW path ``Y_t = X_{a_t}``: same skeleton, holding times multiplied by mu."""
    if sample.speed != "variable":
        raise ParameterError("expected a variable speed path")
    mu = graph.mu()
    holds = np.diff(np.r_[0.0, sample.times]) * mu[sample.vertices[:-1]]
    times = np.cumsum(holds)
    horizon = float(additive_functional(sample, graph, sample.horizon))
    return TrajectorySample(sample.start, times, sample.vertices, sample.positions, horizon,
                            sample.seed, sample.index, sample.censored, "constant")


def time_change_vsrw(sample, graph):
    """Inverse of :func:`time_change_csrw`."""
    if sample.speed != "constant":
        raise ParameterError("expected a constant speed path")
    mu = graph.mu()
    holds = np.diff(np.r_[0.0, sample.times]) / mu[sample.vertices[:-1]]
    times = np.cumsum(holds)
    last = sample.horizon - (sample.times[-1] if len(sample.times) else 0.0)
    tail = last / mu[sample.vertices[-1]] if mu[sample.vertices[-1]] > 0 else 0.0
    horizon = (times[-1] if len(times) else 0.0) + tail
    return TrajectorySample(sample.start, times, sample.vertices, sample.positions, float(horizon),
                            sample.seed, sample.index, sample.censored, "variable")


# martingale decomposition ----------------------------------------------------

def martingale_part(sample, corr):
    """``M = (X - X_0) - (chi(X) - chi(X_0))`` after every jump."""
    check_coverage(corr, sample.vertices)
    chi = corr.chi[sample.vertices]
    return sample.positions - (chi - chi[0])


def quad_variation(sample, corr, v, t=None):
    """``<v.M>_t = int_0^t sum_y w(X_s, y) (v . dPhi)^2 ds`` along the path."""
    v = np.asarray(v, dtype=float)
    check_coverage(corr, sample.vertices)
    if not np.any(v):
        return 0.0
    q = np.einsum("i,nij,j->n", v, local_covariance(corr), v)
    holds = sample.holding_times()
    if t is not None:
        knots = np.r_[0.0, sample.times]
        holds = np.clip(np.minimum(np.r_[sample.times, sample.horizon], t) - knots, 0.0, None)
    return float(np.sum(holds * q[sample.vertices]))


# trajectory log --------------------------------------------------------------

def write_trajectory_log(samples, path, graph=None):
    """Compact binary log: per path a u64 count, then (time f64, vertex u64) records.

    The start is stored as a record at time 0.  With a cluster graph the
    vertex is the global lattice index.
    """
    ids = graph.vertex_ids if isinstance(graph, cl.ClusterGraph) else None
    rec = np.dtype([("t", "<f8"), ("v", "<u8")])
    with open(path, "wb") as fh:
        for s in samples:
            arr = np.empty(len(s.vertices), dtype=rec)
            arr["t"] = np.r_[0.0, s.times]
            arr["v"] = s.vertices if ids is None else ids[s.vertices]
            fh.write(struct.pack("<Q", len(arr)))
            fh.write(arr.tobytes())


def read_trajectory_log(path):
    data = Path(path).read_bytes()
    rec = np.dtype([("t", "<f8"), ("v", "<u8")])
    out, off = [], 0
    while off < len(data):
        (k,) = struct.unpack_from("<Q", data, off)
        off += 8
        arr = np.frombuffer(data, rec, k, off)
        off += k * rec.itemsize
        out.append((arr["t"].copy(), arr["v"].astype(np.int64)))
    return out


# invariance principle --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class QfcltReport:
    ns: tuple
    T: float
    walks: int
    covariance: dict            # n -> empirical covariance of X_{Tn^2}/n
    reference: np.ndarray       # T * Sigma^2
    directions: np.ndarray      # projection directions (axes first)
    ks_stat: dict               # n -> array of KS distances
    ks_pvalue: dict             # n -> array of p-values
    censored: dict              # n -> censored fraction
    samples: dict = field(repr=False, default=None)


def projection_directions(d, extra, seed):
    rng = stream(seed, 2 ** 63)
    v = rng.standard_normal((extra, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return np.vstack([np.eye(d), v])


def interior_starts(graph, count, rng, margin=None):
    cand = np.flatnonzero(~censor_mask(graph, margin))
    if len(cand) == 0:
        raise SampleSizeError("no interior start vertices")
    return rng.choice(cand, size=count, replace=True)


def qfclt_test(graph, corr, ns, walks, T, seed, sigma=None, extra_directions=8, margin=None,
               max_censored=MAX_CENSORED):
    """Compare ``X_{Tn^2}/n`` with the centered Gaussian of covariance ``T Sigma^2``.

    Starts are uniform over interior cluster vertices.  To compare a lattice
    variable with a continuous law, each coordinate is dithered by an
    independent Uniform(-1/2, 1/2)/n; the reference variance of a projection
    ``v`` is ``T v.Sigma^2 v + |v|^2 / (12 n^2)`` accordingly.  KS tests run on
    the coordinate axes and ``extra_directions`` random unit vectors.
    """
    from .corrector import sigma_estimate
    if sigma is None:
        sigma = sigma_estimate(graph, corr).matrix
    sigma = np.asarray(sigma, dtype=float)
    d = sigma.shape[0]
    dirs = projection_directions(d, extra_directions, seed)
    cov, kss, kps, cens, samples = {}, {}, {}, {}, {}
    for i, n in enumerate(ns):
        n = int(n)
        rng = stream(seed, 2 ** 62 + i)
        starts = interior_starts(graph, walks, rng, margin)
        disp, cflag = walk_endpoints(graph, starts, T * n * n, seed, margin, first_index=i << 40)
        frac = float(cflag.mean())
        cens[n] = frac
        if frac > max_censored:
            raise SampleSizeError(f"{100 * frac:.1f}% of walks censored at n={n}")
        x = disp[~cflag] / n
        x = x + (rng.random(x.shape) - 0.5) / n
        samples[n] = x
        cov[n] = np.cov(x.T, bias=False).reshape(d, d)
        var = T * np.einsum("ki,ij,kj->k", dirs, sigma, dirs) + (dirs ** 2).sum(axis=1) / (12.0 * n * n)
        st, pv = [], []
        for k in range(len(dirs)):
            r = stats.kstest(x @ dirs[k], "norm", args=(0.0, math.sqrt(var[k])))
            st.append(r.statistic)
            pv.append(r.pvalue)
        kss[n] = np.array(st)
        kps[n] = np.array(pv)
    return QfcltReport(tuple(int(n) for n in ns), float(T), int(walks), cov, T * sigma, dirs,
                       kss, kps, cens, samples)
