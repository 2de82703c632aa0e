"""Experiment configuration, batch execution and result aggregation."""

import configparser
import csv
import hashlib
import io
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cluster as cl
from . import corrector as co
from . import environment as env
from . import ergodic as er
from . import geometry as geo
from . import sobolev as sb
from . import walk as wk
from .errors import RcmError, ValidationError
from .rng import check_seed, derive_seed, map_ordered

MODULES = ("cluster", "geom", "corr", "walk", "ineq", "ergodic")
HEADER = ("config_hash", "realization", "seed", "module", "metric", "value", "stderr")
FAIL_LIMIT = 0.10

log = logging.getLogger("rcmlab")


@dataclass(frozen=True)
class ResultRow:
    config_hash: str
    realization: int
    seed: int
    module: str
    metric: str
    value: float
    stderr: float = None


def fmt(x):
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


def _floats(text):
    return [float(t) for t in str(text).replace(",", " ").split()]


def _ints(text):
    return [int(t) for t in str(text).replace(",", " ").split()]


# configuration ---------------------------------------------------------------

@dataclass
class ExperimentConfig:
    text: str
    master_seed: int
    realizations: int
    output_dir: Path
    modules: tuple
    box: env.LatticeBox = None
    model: dict = field(default_factory=dict)
    snapshot: Path = None
    params: dict = field(default_factory=dict)

    @property
    def hash(self):
        return config_hash(self.text)


def config_hash(text):
    """sha256 of the config with comments, blank lines and key spacing normalized."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(text)
    lines = []
    for sec in sorted(parser.sections()):
        lines.append(f"[{sec}]")
        for key in sorted(parser[sec]):
            lines.append(f"{key}={parser[sec][key].strip()}")
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]


_DEFAULTS = {
    "corr": {"mode": "dirichlet", "tol": "1e-10", "n_grid": "8 16", "margin": ""},
    "walk": {"n_grid": "4 8", "walks": "500", "t": "1.0"},
    "geom": {"n": "8", "theta": "0.5", "cv": "1.0", "criso": "0.25", "cw": "2.0", "max_centers": "8"},
    "ineq": {"which": "anchored-riso", "n": "3", "eps": "0.5", "theta": "0.5", "c2": "0.5",
             "cbar": "2.0", "exponent": ""},
    "ergodic": {"obs": "edge", "eps": "1.0", "n_grid": "8 16", "norm": "l1"},
}


def load_config(path=None, text=None, base_dir=None):
    """Parse and fully validate an experiment config; raises ValidationError."""
    if text is None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from None
        base_dir = Path(path).parent if base_dir is None else base_dir
    base_dir = Path(".") if base_dir is None else Path(base_dir)
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ValidationError(f"malformed config: {exc}") from None
    try:
        return _build_config(parser, text, base_dir)
    except ValidationError:
        raise
    except (ValueError, KeyError, RcmError) as exc:
        raise ValidationError(f"invalid config: {exc}") from None


def _build_config(parser, text, base_dir):
    if "experiment" not in parser:
        raise ValidationError("missing [experiment] section")
    ex = parser["experiment"]
    master = check_seed(int(ex.get("master_seed", "0")))
    count = int(ex.get("realizations", "1"))
    if count < 0:
        raise ValidationError("realizations must be >= 0")
    out = Path(ex.get("output_dir", "results"))
    out = out if out.is_absolute() else base_dir / out
    modules = tuple(m.strip() for m in ex.get("modules", "cluster").replace(",", " ").split())
    bad = [m for m in modules if m not in MODULES]
    if bad:
        raise ValidationError(f"unknown modules {bad}")
    model = dict(parser["model"]) if "model" in parser else {"family": "bernoulli", "params": "0.7"}
    snapshot = None
    box = None
    if model.get("snapshot"):
        snapshot = Path(model["snapshot"])
        snapshot = snapshot if snapshot.is_absolute() else base_dir / snapshot
        if not snapshot.is_file():
            raise ValidationError(f"snapshot file {snapshot} does not exist")
    else:
        if "box" not in parser:
            raise ValidationError("missing [box] section")
        b = parser["box"]
        side = _ints(b.get("side", "32"))
        dim = int(b.get("dim", "2"))
        box = env.LatticeBox(dim, side[0] if len(side) == 1 else tuple(side), b.get("boundary", "open"))
        _model_builder(model)  # validates family and parameters
    params = {}
    for sec, defaults in _DEFAULTS.items():
        merged = dict(defaults)
        if sec in parser:
            merged.update({k: v for k, v in parser[sec].items()})
        params[sec] = merged
    _validate_params(params, modules, box)
    return ExperimentConfig(text, master, count, out, modules, box, model, snapshot, params)


def _model_builder(model):
    family = model.get("family", "bernoulli")
    if family == "gff-levelset":
        level = float(model.get("level", "0.0"))
        variant = model.get("variant")
        if variant not in env.LEVELSET_VARIANTS:
            raise ValidationError(f"gff-levelset needs variant in {env.LEVELSET_VARIANTS}")
        scaling = model.get("scaling", "srw-green")
        if scaling not in env.GFF_SCALINGS:
            raise ValidationError(f"unknown GFF scaling {scaling!r}")
        return lambda box, seed: env.generate_gff_levelset(box, level, seed, variant=variant, scaling=scaling)
    params = _floats(model.get("params", ""))
    if family == "uniform":
        spec = env.MarginalSpec.uniform()
    else:
        spec = env.MarginalSpec(family, tuple(params))
    return lambda box, seed: env.generate_iid(box, spec, seed)


def _validate_params(params, modules, box):
    c = params["corr"]
    if c["mode"] not in co.MODES:
        raise ValidationError(f"unknown corrector mode {c['mode']!r}")
    if float(c["tol"]) <= 0:
        raise ValidationError("corr tol must be positive")
    for sec in ("corr", "walk", "ergodic"):
        grid = _ints(params[sec]["n_grid"])
        if not grid or min(grid) < 1:
            raise ValidationError(f"[{sec}] n_grid must list positive integers")
    if int(params["walk"]["walks"]) < 1 or float(params["walk"]["t"]) <= 0:
        raise ValidationError("walk needs walks >= 1 and t > 0")
    g = params["geom"]
    geo.MomentProfile(1.0, 1.0, float(g["theta"]), 2)
    if float(g["cw"]) < 1:
        raise ValidationError("geom cw must be >= 1")
    i = params["ineq"]
    if i["which"] not in ("iso", "sobolev", "anchored-riso", "anchored-sobolev"):
        raise ValidationError(f"unknown inequality {i['which']!r}")
    if not 0 < float(i["eps"]) < 1:
        raise ValidationError("ineq eps must lie in (0, 1)")
    e = params["ergodic"]
    if e["obs"] not in er.OBSERVABLES:
        raise ValidationError(f"unknown observable {e['obs']!r}")
    if e["norm"] not in er.NORMS:
        raise ValidationError(f"unknown norm {e['norm']!r}")
    if "ergodic" in modules and box is not None:
        if not box.periodic or min(box.side) < 2 * max(_ints(e["n_grid"])) + 1:
            raise ValidationError("ergodic averages need a periodic box with side >= 2n+1")


# execution -------------------------------------------------------------------

def _metric(name, **tags):
    if not tags:
        return name
    return name + "[" + ",".join(f"{k}={v}" for k, v in tags.items()) + "]"


def _realization(cfg, index):
    seed = derive_seed(cfg.master_seed, index)
    rows = []

    def emit(module, metric, value, stderr=None):
        rows.append(ResultRow(cfg.hash, index, seed, module, metric, float(value), stderr))

    if cfg.snapshot is not None:
        field_ = env.load(cfg.snapshot)
    else:
        field_ = _model_builder(cfg.model)(cfg.box, seed)
    giant = cl.giant_component(field_)
    p = cfg.params
    x = cl.center_vertex(giant)
    if "cluster" in cfg.modules:
        sizes = cl.component_sizes(field_)
        emit("cluster", "giant_fraction", len(giant) / field_.box.n_vertices)
        emit("cluster", "components", len(sizes))
        emit("cluster", "open_fraction", field_.open_fraction())
    if "geom" in cfg.modules:
        g = p["geom"]
        n = int(g["n"])
        rep = geo.check_regular(giant, x, n, float(g["cv"]), float(g["criso"]), float(g["cw"]))
        emit("geom", _metric("volume_ratio", n=n), rep.volume_ratio)
        emit("geom", _metric("riso_lower", n=n), rep.lower)
        emit("geom", _metric("riso_upper", n=n), rep.upper)
        th = geo.theta_very_regular(giant, x, n, float(g["theta"]), float(g["cv"]), float(g["criso"]),
                                    float(g["cw"]), max_centers=int(g["max_centers"]), seed=seed)
        emit("geom", _metric("theta_very_regular", n=n), float(th.passed))
    corr = None
    if {"corr", "walk"} & set(cfg.modules):
        c = p["corr"]
        margin = int(c["margin"]) if c["margin"].strip() else None
        corr = co.solve_corrector(giant, c["mode"], float(c["tol"]), margin=margin)
    if "corr" in cfg.modules:
        grid = _ints(p["corr"]["n_grid"])
        sig = co.sigma_estimate(giant, corr)
        d = field_.dim
        for i in range(d):
            for j in range(i, d):
                emit("corr", _metric("sigma2", i=i + 1, j=j + 1), sig.matrix[i, j], sig.stderr[i, j])
        l1 = co.sublinearity_l1(corr, grid)
        linf = co.sublinearity_linf(corr, grid)
        for k, n in enumerate(grid):
            emit("corr", _metric("chi_l1", n=n), l1.values[k].max())
            emit("corr", _metric("chi_linf", n=n), linf.values[k].max())
    if "walk" in cfg.modules:
        w = p["walk"]
        rep = wk.qfclt_test(giant, corr, _ints(w["n_grid"]), int(w["walks"]), float(w["t"]), seed)
        for n in rep.ns:
            emit("walk", _metric("cov11", n=n), rep.covariance[n][0, 0])
            emit("walk", _metric("ks_min_p", n=n), rep.ks_pvalue[n].min())
            emit("walk", _metric("censored", n=n), rep.censored[n])
    if "ineq" in cfg.modules:
        for metric, value in _ineq_rows(giant, x, p["ineq"], seed):
            emit("ineq", metric, value)
    if "ergodic" in cfg.modules:
        e = p["ergodic"]
        for n in _ints(e["n_grid"]):
            avg = er.weighted_average(field_, e["obs"], n, float(e["eps"]), e["norm"])
            emit("ergodic", _metric("weighted_avg", n=n), avg.value)
    return rows


def _ineq_rows(graph, x, q, seed):
    n = int(q["n"])
    eps = float(q["eps"])
    d = graph.box.dim
    which = q["which"]
    expo = float(q["exponent"]) if q["exponent"].strip() else None
    prof = sb.WeightProfile(n, eps, x, d, exponent=expo)
    if which == "anchored-riso":
        cert = sb.anchored_riso(graph, x, n, eps, prof, C2=float(q["c2"]))
    elif which == "anchored-sobolev":
        cert = sb.anchored_sobolev_exhaustive(graph, x, n, prof, C_bar=float(q["cbar"]))
    elif which == "iso":
        theta = float(q["theta"])
        zeta = sb.max_zeta(theta, d)
        cert = sb.effective_dim_iso(graph, x, n, theta, zeta, C_iso=1.0,
                                    C_reg=len(cl.ball(graph, x, n)) / n ** d, seed=seed)
    else:
        theta = float(q["theta"])
        zeta = sb.max_zeta(theta, d)
        cert = sb.sobolev_batch(graph, x, n, zeta, C_S1=sb.sobolev_constant(1.0, 5.0, zeta, d), seed=seed)
    return [(f"{which}_value[n={n}]", cert.value), (f"{which}_margin[n={n}]", cert.margin)]


@dataclass
class RunResult:
    rows: list
    failures: list
    realizations: int

    @property
    def failed_fraction(self):
        return len(self.failures) / self.realizations if self.realizations else 0.0

    @property
    def exit_code(self):
        return 3 if self.failed_fraction > FAIL_LIMIT else 0


def run(cfg, threads=None, events=None):
    """Run every realization; a failing realization is logged and skipped."""
    events = [] if events is None else events

    def task(i):
        t0 = time.time()
        try:
            rows = _realization(cfg, i)
            events.append((time.time(), i, "ok", time.time() - t0, ""))
            return rows, None
        except (RcmError, ArithmeticError, ValueError) as exc:
            events.append((time.time(), i, "failed", time.time() - t0, repr(exc)))
            return [], (i, repr(exc))

    results = map_ordered(task, range(cfg.realizations), threads)
    rows = [r for chunk, _ in results for r in chunk]
    failures = [f for _, f in results if f is not None]
    return RunResult(rows, failures, cfg.realizations)


# CSV -------------------------------------------------------------------------

def rows_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for r in rows:
        w.writerow([r.config_hash, r.realization, r.seed, r.module, r.metric, fmt(r.value), fmt(r.stderr)])
    buf.write(f"#end rows={len(rows)}\n")
    return buf.getvalue()


def write_results(rows, path):
    """Write atomically: the footer is the last line, written only on completion."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".partial")
    tmp.write_text(rows_to_csv(rows), encoding="utf-8")
    tmp.replace(path)


def read_results(path):
    """Parse a result CSV, refusing files without a matching footer."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or not lines[-1].startswith("#end rows="):
        raise ValidationError(f"{path} is incomplete (no footer)")
    expected = int(lines[-1].split("=", 1)[1])
    reader = csv.reader(lines[:-1])
    header = next(reader, None)
    if tuple(header or ()) != HEADER:
        raise ValidationError(f"{path} has an unexpected header")
    rows = []
    for rec in reader:
        rows.append(ResultRow(rec[0], int(rec[1]), int(rec[2]), rec[3], rec[4], float(rec[5]),
                              float(rec[6]) if rec[6] else None))
    if len(rows) != expected:
        raise ValidationError(f"{path} holds {len(rows)} rows, footer says {expected}")
    return rows


def write_log(events, path, cfg, result):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# config {cfg.hash} master_seed {cfg.master_seed} realizations {cfg.realizations}\n")
        for stamp, i, status, dt, msg in sorted(events, key=lambda e: e[1]):
            fh.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S', time.localtime(stamp))} "
                     f"realization={i} status={status} seconds={dt:.3f} {msg}\n")
        fh.write(f"# failed {len(result.failures)} of {result.realizations}\n")


# report ------------------------------------------------------------------------

@dataclass(frozen=True)
class SummaryRow:
    module: str
    metric: str
    count: int
    mean: float
    stderr: float = None


@dataclass
class Summary:
    rows: list
    slopes: list          # (module, base metric, slope, points)
    note: str = ""


def _split_metric(metric):
    """``name[n=32,j=1]`` -> (``name[j=1]``, 32); metrics without n give (metric, None)."""
    if "[" not in metric or not metric.endswith("]"):
        return metric, None
    base, tags = metric[:-1].split("[", 1)
    n, rest = None, []
    for tag in tags.split(","):
        key, _, val = tag.partition("=")
        if key == "n":
            n = float(val)
        else:
            rest.append(tag)
    return (base + ("[" + ",".join(rest) + "]" if rest else "")), n


def report(rows, metrics=None):
    """Mean, standard error and log-log trend slope over n for every metric."""
    if metrics:
        rows = [r for r in rows if r.metric in metrics or _split_metric(r.metric)[0] in metrics
                or r.metric.split("[", 1)[0] in metrics]
    if not rows:
        return Summary([], [], "no data")
    hashes = {r.config_hash for r in rows}
    if len(hashes) > 1:
        raise ValidationError(f"refusing to aggregate rows from {len(hashes)} different configs")
    groups = {}
    for r in rows:
        groups.setdefault((r.module, r.metric), []).append(r.value)
    out = []
    for (module, metric), vals in groups.items():
        v = np.asarray(vals)
        se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else None
        out.append(SummaryRow(module, metric, len(v), float(v.mean()), se))
    curves = {}
    for s in out:
        base, n = _split_metric(s.metric)
        if n is not None:
            curves.setdefault((s.module, base), []).append((n, s.mean))
    slopes = []
    for (module, base), pts in curves.items():
        pts.sort()
        ns = np.array([p[0] for p in pts])
        ms = np.array([p[1] for p in pts])
        if len(pts) >= 2 and np.all(ms > 0) and np.all(ns > 0):
            slope = float(np.polyfit(np.log(ns), np.log(ms), 1)[0])
            slopes.append((module, base, slope, len(pts)))
    return Summary(out, slopes)


def summary_to_csv(summary):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if summary.note:
        buf.write(f"# {summary.note}\n")
    w.writerow(("module", "metric", "count", "mean", "stderr"))
    for s in summary.rows:
        w.writerow((s.module, s.metric, s.count, fmt(s.mean), fmt(s.stderr)))
    if summary.slopes:
        w.writerow(())
        w.writerow(("module", "metric", "loglog_slope", "points"))
        for module, base, slope, k in summary.slopes:
            w.writerow((module, base, fmt(slope), k))
    return buf.getvalue()
