"""Random conductance fields on finite boxes of Z^d.

Weights are stored as an array of shape ``side + (d,)``: ``weights[x, a]`` is
the conductance of the edge ``{x, x + e_a}``.  On open boxes the slots for
edges leaving the box are zero and masked out of every count.
"""

import math
import struct
import warnings
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError, SnapshotIOError, UnsupportedError
from .rng import check_seed

BOUNDARIES = ("open", "periodic")
MODELS = ("iid", "bernoulli", "gff-levelset")
GFF_SCALINGS = ("srw-green", "laplacian")
LEVELSET_VARIANTS = ("excursion", "abs")

MAGIC = b"RCMF"
VERSION = 1
RNG_FAMILY = "pcg64"


class OutsideRegimeWarning(UserWarning):
    """Parameters are valid but lie outside the regime treated in the theory."""


@dataclass(frozen=True)
class LatticeBox:
    dim: int
    side: tuple
    boundary: str = "periodic"

    def __post_init__(self):
        dim = int(self.dim)
        if dim < 2:
            raise ParameterError(f"dimension must be >= 2, got {dim}")
        side = self.side
        if np.isscalar(side):
            side = (int(side),) * dim
        side = tuple(int(s) for s in side)
        if len(side) != dim:
            raise ParameterError(f"need {dim} side lengths, got {len(side)}")
        if any(s < 1 for s in side):
            raise ParameterError(f"side lengths must be >= 1, got {side}")
        if self.boundary not in BOUNDARIES:
            raise ParameterError(f"boundary must be one of {BOUNDARIES}")
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "side", side)

    @property
    def periodic(self):
        return self.boundary == "periodic"

    @property
    def n_vertices(self):
        return math.prod(self.side)

    @property
    def n_edges(self):
        if self.periodic:
            return self.dim * self.n_vertices
        return sum(self.n_vertices // s * (s - 1) for s in self.side)

    def edge_mask(self):
        """Boolean array marking which ``(x, a)`` slots are lattice edges."""
        mask = np.ones(self.side + (self.dim,), dtype=bool)
        if not self.periodic:
            for a in range(self.dim):
                idx = [slice(None)] * self.dim + [a]
                idx[a] = self.side[a] - 1
                mask[tuple(idx)] = False
        return mask

    def index(self, coords):
        coords = np.asarray(coords)
        if self.periodic:
            coords = np.mod(coords, self.side)
        return np.ravel_multi_index(tuple(np.moveaxis(coords, -1, 0)), self.side)

    def coords(self, index):
        return np.stack(np.unravel_index(np.asarray(index), self.side), axis=-1)

    def contains(self, coords):
        coords = np.asarray(coords)
        return bool(np.all(coords >= 0) and np.all(coords < np.array(self.side)))

    def default_margin(self):
        return max(1, min(self.side) // 8)


@dataclass(frozen=True)
class MarginalSpec:
    """Law of a single edge weight.

    ``pareto`` has P[w > t] = t**-alpha on [1, inf); ``inverse-pareto`` is the
    reciprocal law on (0, 1] with P[w < s] = s**beta; ``two-sided`` is the
    product of independent copies of both.  ``inverse-pareto`` with beta = 1
    is uniform on (0, 1].
    """

    family: str
    params: tuple = ()

    FAMILIES = ("constant", "bernoulli", "pareto", "inverse-pareto", "two-sided")

    def __post_init__(self):
        params = tuple(float(p) for p in self.params)
        object.__setattr__(self, "params", params)
        need = {"constant": 1, "bernoulli": 1, "pareto": 1, "inverse-pareto": 1, "two-sided": 2}
        if self.family not in need:
            raise ParameterError(f"unknown marginal family {self.family!r}")
        if len(params) != need[self.family]:
            raise ParameterError(f"{self.family} takes {need[self.family]} parameter(s)")
        if self.family == "bernoulli":
            if not 0.0 < params[0] <= 1.0:
                raise ParameterError(f"p_open must lie in (0, 1], got {params[0]}")
        elif any(not p > 0 or not math.isfinite(p) for p in params):
            raise ParameterError(f"{self.family} parameters must be positive, got {params}")

    @classmethod
    def constant(cls, value=1.0):
        return cls("constant", (value,))

    @classmethod
    def bernoulli(cls, p_open):
        return cls("bernoulli", (p_open,))

    @classmethod
    def pareto(cls, alpha):
        return cls("pareto", (alpha,))

    @classmethod
    def inverse_pareto(cls, beta):
        return cls("inverse-pareto", (beta,))

    @classmethod
    def uniform(cls):
        return cls("inverse-pareto", (1.0,))

    @classmethod
    def two_sided(cls, alpha, beta):
        return cls("two-sided", (alpha, beta))

    def sample(self, rng, size):
        f, p = self.family, self.params
        if f == "constant":
            return np.full(size, p[0])
        if f == "bernoulli":
            return (rng.random(size) < p[0]).astype(float)
        if f == "pareto":
            return (1.0 - rng.random(size)) ** (-1.0 / p[0])
        if f == "inverse-pareto":
            return (1.0 - rng.random(size)) ** (1.0 / p[0])
        upper = (1.0 - rng.random(size)) ** (-1.0 / p[0])
        return upper * (1.0 - rng.random(size)) ** (1.0 / p[1])

    def mean(self):
        f, p = self.family, self.params
        if f == "constant":
            return p[0]
        if f == "bernoulli":
            return p[0]
        upper = p[0] / (p[0] - 1.0) if f in ("pareto", "two-sided") and p[0] > 1 else math.inf
        if f == "pareto":
            return upper
        beta = p[-1]
        lower = beta / (beta + 1.0)
        return lower if f == "inverse-pareto" else upper * lower

    def has_moment(self, p):
        """True iff E[w^p] < inf."""
        if self.family in ("pareto", "two-sided"):
            return p < self.params[0]
        return True

    def has_inverse_moment(self, q):
        """True iff E[w^-q 1{w > 0}] < inf."""
        if self.family in ("inverse-pareto", "two-sided"):
            return q < self.params[-1]
        return True


@dataclass(frozen=True)
class GffSample:
    box: LatticeBox
    values: np.ndarray
    level: float = None
    scaling: str = "srw-green"


@dataclass(frozen=True, eq=False)
class ConductanceField:
    box: LatticeBox
    weights: np.ndarray
    seed: int
    model: str
    rng_family: str = RNG_FAMILY
    gff: GffSample = dc_field(default=None, repr=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.shape != self.box.side + (self.box.dim,):
            raise ParameterError(f"weights shape {w.shape} does not match box")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ParameterError("weights must be finite and nonnegative")
        w[~self.box.edge_mask()] = 0.0
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if self.model not in MODELS:
            raise ParameterError(f"unknown model tag {self.model!r}")

    @property
    def dim(self):
        return self.box.dim

    def edge_weights(self):
        """Weights of the lattice edges, in snapshot order."""
        return self.weights[self.box.edge_mask()]

    def open_fraction(self):
        return float(np.count_nonzero(self.edge_weights() > 0)) / self.box.n_edges

    def mu(self):
        """Per-vertex sum of incident conductances, shape ``side``."""
        w = self.weights
        total = w.sum(axis=-1)
        for a in range(self.dim):
            total = total + np.roll(w[..., a], 1, axis=a) * self._incoming_mask(a)
        return total

    def _incoming_mask(self, a):
        if self.box.periodic:
            return 1.0
        m = np.ones(self.box.side)
        idx = [slice(None)] * self.dim
        idx[a] = 0
        m[tuple(idx)] = 0.0
        return m


def generate_iid(box, spec, seed):
    """I.i.d. field with the given marginal; bernoulli marginals are tagged as such."""
    seed = check_seed(seed)
    rng = np.random.Generator(np.random.PCG64(seed))
    weights = spec.sample(rng, box.side + (box.dim,))
    model = "bernoulli" if spec.family == "bernoulli" else "iid"
    return ConductanceField(box, weights, seed, model)


def laplacian_symbol(side):
    """Eigenvalues of -Delta on the torus with the given side lengths."""
    lam = np.zeros(side)
    for a, L in enumerate(side):
        k = np.arange(L)
        shape = [1] * len(side)
        shape[a] = L
        lam = lam + (2.0 - 2.0 * np.cos(2.0 * np.pi * k / L)).reshape(shape)
    return lam


def gff_spectrum(box, scaling="srw-green"):
    """Covariance eigenvalues of the zero-mode-pinned field."""
    if scaling not in GFF_SCALINGS:
        raise ParameterError(f"scaling must be one of {GFF_SCALINGS}")
    lam = laplacian_symbol(box.side)
    const = 2.0 * box.dim if scaling == "srw-green" else 1.0
    spec = np.zeros_like(lam)
    nz = lam > 1e-12
    spec[nz] = const / lam[nz]
    return spec


def gff_covariance(box, scaling="srw-green"):
    """Dense covariance matrix of the torus field (lexicographic vertex order)."""
    spec = gff_spectrum(box, scaling)
    kernel = np.fft.ifftn(spec).real
    coords = box.coords(np.arange(box.n_vertices))
    diff = np.mod(coords[:, None, :] - coords[None, :, :], box.side)
    return kernel[tuple(np.moveaxis(diff, -1, 0))]


def sample_gff(box, rng, n_samples=None, scaling="srw-green"):
    """Fourier synthesis of the torus GFF.

    White noise is filtered by the square root of the covariance spectrum, so
    the covariance is exactly the pseudo-inverse of -Delta (times ``2d`` for
    the random-walk Green function scaling).  The zero mode is removed, hence
    every sample has spatial mean 0.
    """
    if not box.periodic:
        raise ParameterError("the GFF sampler needs a periodic box")
    shape = box.side if n_samples is None else (int(n_samples),) + box.side
    axes = tuple(range(-box.dim, 0))
    noise = rng.standard_normal(shape)
    amp = np.sqrt(gff_spectrum(box, scaling))
    return np.fft.ifftn(np.fft.fftn(noise, axes=axes) * amp, axes=axes).real


def levelset_weights(phi, level, variant):
    """Conductances ``exp(phi(x) + phi(y))`` on edges whose endpoints clear the level.

    ``excursion`` keeps edges with min(phi(x), phi(y)) >= level; ``abs`` keeps
    edges with min(|phi(x)|, |phi(y)|) >= level.
    """
    if variant not in LEVELSET_VARIANTS:
        raise ParameterError(f"variant must be one of {LEVELSET_VARIANTS}")
    d = phi.ndim
    site = np.abs(phi) if variant == "abs" else phi
    w = np.zeros(phi.shape + (d,))
    for a in range(d):
        nbr = np.roll(phi, -1, axis=a)
        nbr_site = np.roll(site, -1, axis=a)
        keep = np.minimum(site, nbr_site) >= level
        w[..., a] = np.where(keep, np.exp(phi + nbr), 0.0)
    return w


def generate_gff_levelset(box, level, seed, *, variant, scaling="srw-green"):
    """GFF level-set conductances on a periodic box.

    ``variant`` has no default: the two indicator conventions differ and the
    caller has to pick one.
    """
    seed = check_seed(seed)
    if not box.periodic:
        raise ParameterError("GFF level-set fields need a periodic box")
    if box.dim < 3:
        warnings.warn("GFF level sets are only treated for d >= 3", OutsideRegimeWarning, stacklevel=2)
    rng = np.random.Generator(np.random.PCG64(seed))
    phi = sample_gff(box, rng, scaling=scaling)
    weights = levelset_weights(phi, float(level), variant)
    sample = GffSample(box, phi, float(level), scaling)
    return ConductanceField(box, weights, seed, "gff-levelset", gff=sample)


def shift(field, z):
    """The shifted environment ``(tau_z w)({x, y}) = w({x + z, y + z})``."""
    if not field.box.periodic:
        raise UnsupportedError("shifts are only exact on periodic boxes")
    z = tuple(int(c) for c in np.asarray(z).ravel())
    if len(z) != field.dim:
        raise ParameterError(f"shift vector must have {field.dim} entries")
    w = np.roll(field.weights, tuple(-c for c in z), axis=tuple(range(field.dim)))
    return ConductanceField(field.box, w, field.seed, field.model, field.rng_family)


# snapshot format -----------------------------------------------------------

_BOUNDARY_CODE = {"open": 0, "periodic": 1}
_MODEL_CODE = {"iid": 0, "bernoulli": 1, "gff-levelset": 2}


def _header(field):
    box = field.box
    head = struct.pack("<4sHBB", MAGIC, VERSION, box.dim, _BOUNDARY_CODE[box.boundary])
    head += struct.pack(f"<{box.dim}I", *box.side)
    head += struct.pack("<BQ", _MODEL_CODE[field.model], field.seed)
    return head


def dumps(field):
    return _header(field) + field.edge_weights().astype("<f8").tobytes()


def save(field, path):
    Path(path).write_bytes(dumps(field))


def loads(data):
    fixed = struct.calcsize("<4sHBB")
    if len(data) < fixed:
        raise SnapshotIOError("snapshot shorter than its header")
    magic, version, dim, bcode = struct.unpack_from("<4sHBB", data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic bytes {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported snapshot version {version}")
    if bcode not in (0, 1) or dim < 2:
        raise FormatError("corrupt box descriptor")
    offset = fixed
    need = offset + 4 * dim + struct.calcsize("<BQ")
    if len(data) < need:
        raise SnapshotIOError("snapshot shorter than its header")
    side = struct.unpack_from(f"<{dim}I", data, offset)
    offset += 4 * dim
    mcode, seed = struct.unpack_from("<BQ", data, offset)
    offset += struct.calcsize("<BQ")
    models = {v: k for k, v in _MODEL_CODE.items()}
    if mcode not in models:
        raise FormatError(f"unknown model code {mcode}")
    try:
        box = LatticeBox(dim, side, "open" if bcode == 0 else "periodic")
    except ParameterError as exc:
        raise SnapshotIOError(f"corrupt length header: {exc}") from None
    payload = len(data) - offset
    if payload != 8 * box.n_edges:
        raise SnapshotIOError(
            f"payload holds {payload} bytes, header implies {8 * box.n_edges}")
    values = np.frombuffer(data, dtype="<f8", offset=offset).astype(np.float64)
    weights = np.zeros(box.side + (dim,))
    weights[box.edge_mask()] = values
    return ConductanceField(box, weights, seed, models[mcode])


def load(path):
    return loads(Path(path).read_bytes())
