"""Weighted ergodic averages with a singular radial weight.

Averages ``(1/n^d) sum' phi(tau_x w) / |x/n|^(d-eps)`` over ``x`` in the
ball ``B(0, n)`` minus the origin, on a torus large enough that the ball does
not wrap onto itself.  ``|x|`` is the l1 norm by default; ``norm="l2"``
switches both the ball and the weight to the Euclidean norm.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from . import cluster as cl
from .errors import ParameterError

NORMS = ("l1", "l2")
OBSERVABLES = ("const", "edge", "mu", "indicator")


@dataclass(frozen=True)
class WeightedAverage:
    n: int
    eps: float
    observable: str
    value: float
    reference: float        # integral times E[phi] (the integral alone if E[phi] unknown)
    integral: float
    norm: str = "l1"


def unit_ball_volume(d, norm="l1"):
    if norm == "l1":
        return 2.0 ** d / math.factorial(d)
    if norm == "l2":
        return math.pi ** (d / 2) / special.gamma(d / 2 + 1)
    raise ParameterError(f"norm must be one of {NORMS}")


@lru_cache(maxsize=None)
def reference_integral(d, eps, norm="l1"):
    """``int_{B_1} |x|^-(d-eps) dx`` by quadrature of the radial form.

    The surface measure of the sphere of radius r is ``d V_d r^(d-1)``; the
    radial integrand ``d V_d r^(eps-1)`` is integrated with an algebraic
    endpoint weight so the singularity at 0 is handled exactly.
    """
    _check_eps(eps, d)
    vol = unit_ball_volume(d, norm)
    val, _ = integrate.quad(lambda r: d * vol, 0.0, 1.0, weight="alg", wvar=(eps - 1.0, 0.0),
                            epsabs=1e-10, epsrel=1e-12)
    return val


def _check_eps(eps, d):
    if not 0.0 < eps < d:
        raise ParameterError(f"eps must lie in (0, {d}), got {eps}")


@lru_cache(maxsize=32)
def ball_offsets(d, n, norm="l1"):
    """Lattice points of ``B(0, n)`` without the origin, and their norms."""
    axis = np.arange(-n, n + 1)
    grid = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    if norm == "l1":
        r = np.abs(grid).sum(axis=1).astype(float)
    elif norm == "l2":
        r = np.sqrt((grid.astype(float) ** 2).sum(axis=1))
    else:
        raise ParameterError(f"norm must be one of {NORMS}")
    keep = (r <= n) & (r > 0)
    return grid[keep], r[keep]


def observable_values(field, observable):
    """``phi(tau_x w)`` for every lattice vertex ``x``, shape ``side``."""
    if callable(observable):
        return np.asarray(observable(field), dtype=float)
    if isinstance(observable, np.ndarray):
        return observable.astype(float)
    if observable == "const":
        return np.ones(field.box.side)
    if observable == "edge":
        return field.weights[..., 0].copy()
    if observable == "mu":
        return field.mu()
    if observable == "indicator":
        giant = cl.giant_component(field)
        out = np.zeros(field.box.n_vertices)
        out[giant.vertex_ids] = 1.0
        return out.reshape(field.box.side)
    raise ParameterError(f"unknown observable {observable!r}")


def _gather(field, observable, n, norm):
    box = field.box
    if not box.periodic:
        raise ParameterError("weighted averages need a periodic field")
    if min(box.side) < 2 * n + 1:
        raise ParameterError(f"torus side must be >= 2n+1 = {2 * n + 1}")
    vals = observable_values(field, observable)
    off, r = ball_offsets(box.dim, int(n), norm)
    idx = tuple(np.mod(off, box.side).T)
    return vals[idx], r


def weighted_average(field, observable, n, eps, norm="l1", mean=None):
    d = field.box.dim
    _check_eps(eps, d)
    phi, r = _gather(field, observable, n, norm)
    value = float(np.sum(phi * (r / n) ** -(d - eps)) / n ** d)
    integral = reference_integral(d, float(eps), norm)
    ref = integral if mean is None else integral * mean
    tag = observable if isinstance(observable, str) else "custom"
    return WeightedAverage(int(n), float(eps), tag, value, ref, integral, norm)


def truncated_average(field, observable, n, eps, k, norm="l1"):
    """Same average with the weight capped at ``k``."""
    d = field.box.dim
    _check_eps(eps, d)
    phi, r = _gather(field, observable, n, norm)
    w = np.minimum(k, (r / n) ** -(d - eps))
    return float(np.sum(phi * w) / n ** d)


def ball_constant(d, norm="l1", nmax=64):
    """``sup_n |B(0, n)| / n^d`` (the sup is attained at n = 1 for both norms)."""
    return max((len(ball_offsets(d, m, norm)[0]) + 1) / m ** d for m in range(1, nmax + 1))


def maximal_weighted(phi, r, n, eps, d):
    """``max_{1<=m<=n} |m^-eps sum'_{|x|<=m} phi / |x|^(d-eps)|`` from gathered data."""
    order = np.argsort(r, kind="stable")
    rs, terms = r[order], (phi / r ** (d - eps))[order]
    csum = np.cumsum(terms)
    m = np.arange(1, int(n) + 1)
    last = np.searchsorted(rs, m, side="right") - 1
    partial = np.where(last >= 0, csum[np.maximum(last, 0)], 0.0)
    return float(np.max(np.abs(partial) / m ** eps))


@dataclass(frozen=True)
class TruncationGap:
    lhs: float
    rhs: float
    C: float
    sup_term: float
    k: float

    @property
    def holds(self):
        return self.lhs <= self.rhs * (1 + 1e-12) + 1e-15


def truncation_gap(field, observable, n, eps, k, norm="l1"):
    """Both sides of the truncation estimate.

    LHS: ``n^-d |sum' (|x/n|^-(d-eps) - k ^ |x/n|^-(d-eps)) phi|``.
    RHS: ``C k^(-eps/d) max_{m<=n} |m^-eps sum'_{B(m)} phi/|x|^(d-eps)|`` with
    ``C = sup |B(0,m)|/m^d``.  The sup runs over the scales that exist in the
    sample, which only makes the right side smaller.
    """
    if k < 1:
        raise ParameterError("k must be >= 1")
    d = field.box.dim
    _check_eps(eps, d)
    phi, r = _gather(field, observable, n, norm)
    w = (r / n) ** -(d - eps)
    lhs = abs(float(np.sum((w - np.minimum(k, w)) * phi))) / n ** d
    sup = maximal_weighted(phi, r, n, eps, d)
    C = ball_constant(d, norm)
    return TruncationGap(lhs, C * k ** (-eps / d) * sup, C, sup, float(k))


def shell_sums(field, observable, n):
    """``s_j = sum_{|x|_1 = j} phi(tau_x w)`` for ``j = 1..n``."""
    phi, r = _gather(field, observable, n, "l1")
    return np.bincount(r.astype(np.int64), weights=phi, minlength=n + 1)[1:]


def abel_rearrangement(s, d, eps):
    """Direct and summation-by-parts forms of ``sum_j j^-(d-eps) s_j``.

    With ``T_j = s_1 + ... + s_j`` and ``a_j = j^-(d-eps)`` the identity is
    ``sum a_j s_j = a_n T_n - sum_{j<n} (a_{j+1} - a_j) T_j``.
    """
    s = np.asarray(s, dtype=float)
    j = np.arange(1, len(s) + 1, dtype=float)
    a = j ** -(d - eps)
    T = np.cumsum(s)
    direct = float(np.sum(a * s))
    abel = float(a[-1] * T[-1] - np.sum((a[1:] - a[:-1]) * T[:-1]))
    return direct, abel
