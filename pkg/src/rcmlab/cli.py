"""Command line entry point: ``rcm <group> [<action>] --flags``."""

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import cluster as cl
from . import corrector as co
from . import environment as env
from . import ergodic as er
from . import experiment as ex
from . import geometry as geo
from . import sobolev as sb
from . import walk as wk
from .errors import FormatError, RcmError, SnapshotIOError, ValidationError
from .rng import thread_count

EXIT_OK, EXIT_VALIDATION, EXIT_PARTIAL, EXIT_IO = 0, 2, 3, 4


def _posint(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("grid entries must be positive")
    return v


def _field_flags(p):
    g = p.add_argument_group("environment")
    g.add_argument("--snapshot", type=Path, help="load the environment from an RCMF file")
    g.add_argument("--dim", type=int, default=2)
    g.add_argument("--side", type=_posint, nargs="+", default=[64], help="one side or one per axis")
    g.add_argument("--boundary", choices=env.BOUNDARIES, default="periodic")
    g.add_argument("--family", default="bernoulli",
                   choices=env.MarginalSpec.FAMILIES + ("uniform", "gff-levelset"))
    g.add_argument("--params", type=float, nargs="+", default=[0.7])
    g.add_argument("--level", type=float, default=0.0)
    g.add_argument("--variant", choices=env.LEVELSET_VARIANTS)
    g.add_argument("--scaling", choices=env.GFF_SCALINGS, default="srw-green")
    g.add_argument("--seed", type=int, default=0)


def _out_flag(p):
    p.add_argument("--out", type=Path, help="output file (default: stdout)")


def _field(a):
    if a.snapshot is not None:
        return env.load(a.snapshot)
    side = a.side[0] if len(a.side) == 1 else tuple(a.side)
    box = env.LatticeBox(a.dim, side, a.boundary)
    if a.family == "gff-levelset":
        if a.variant is None:
            raise ValidationError("gff-levelset requires --variant")
        return env.generate_gff_levelset(box, a.level, a.seed, variant=a.variant, scaling=a.scaling)
    spec = env.MarginalSpec.uniform() if a.family == "uniform" else env.MarginalSpec(a.family, tuple(a.params))
    return env.generate_iid(box, spec, a.seed)


def _emit(text, out):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _table(header, rows):
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(ex.fmt(v) if isinstance(v, (float, np.floating)) else str(v) for v in r))
    return "\n".join(lines) + "\n"


# handlers --------------------------------------------------------------------

def cmd_env_gen(a):
    f = _field(a)
    if a.out is None:
        raise ValidationError("env gen needs --out")
    env.save(f, a.out)
    return EXIT_OK


def cmd_env_info(a):
    f = _field(a)
    info = {"dim": f.box.dim, "side": list(f.box.side), "boundary": f.box.boundary, "model": f.model,
            "seed": f.seed, "vertices": f.box.n_vertices, "edges": f.box.n_edges,
            "open_fraction": f.open_fraction(), "mean_weight": float(f.edge_weights().mean())}
    _emit(json.dumps(info, indent=2) + "\n", a.out)
    return EXIT_OK


def cmd_cluster_stats(a):
    f = _field(a)
    sizes = cl.component_sizes(f)
    rows = [("vertices", f.box.n_vertices), ("components", len(sizes)), ("giant", int(sizes[0]) if len(sizes) else 0),
            ("giant_fraction", float(sizes[0] / f.box.n_vertices) if len(sizes) else 0.0),
            ("second", int(sizes[1]) if len(sizes) > 1 else 0), ("open_fraction", f.open_fraction())]
    size, count = np.unique(sizes, return_counts=True)
    rows += [(f"hist[size={s}]", int(c)) for s, c in zip(size.tolist(), count.tolist())]
    _emit(_table(("metric", "value"), rows), a.out)
    return EXIT_OK


def _center(a, g):
    return g.resolve(tuple(a.center)) if a.center else cl.center_vertex(g)


def cmd_geom_audit(a):
    g = cl.giant_component(_field(a))
    x = _center(a, g)
    rows = []
    for n in a.n:
        r = geo.check_regular(g, x, n, a.cv, a.criso, a.cw, seed=a.seed)
        th = geo.theta_very_regular(g, x, n, a.theta, a.cv, a.criso, a.cw, max_centers=a.max_centers, seed=a.seed)
        rows.append((n, r.volume_ratio, r.lower, r.upper, r.method, int(r.volume_ok), int(r.iso_ok),
                     int(r.certified), int(th.passed), th.checked))
    _emit(_table(("n", "volume_ratio", "riso_lower", "riso_upper", "method", "volume_ok", "iso_ok",
                  "certified", "theta_very_regular", "balls_checked"), rows), a.out)
    return EXIT_OK


def _solve(a, g):
    return co.solve_corrector(g, a.mode, a.tol, margin=a.margin)


def cmd_corr_solve(a):
    g = cl.giant_component(_field(a))
    c = _solve(a, g)
    if a.out is None:
        raise ValidationError("corr solve needs --out")
    co.save_corrector(c, a.out)
    res = co.harmonicity_residual(c)
    sys.stderr.write(f"iterations {c.iterations.tolist()} residual {float(np.max(res)):.3e}\n")
    return EXIT_OK


def cmd_corr_sigma(a):
    g = cl.giant_component(_field(a))
    c = _solve(a, g)
    s = co.sigma_estimate(g, c)
    d = s.matrix.shape[0]
    rows = [(i + 1, j + 1, s.matrix[i, j], s.stderr[i, j]) for i in range(d) for j in range(d)]
    _emit(_table(("i", "j", "sigma2", "stderr"), rows), a.out)
    return EXIT_OK


def cmd_corr_sublin(a):
    g = cl.giant_component(_field(a))
    c = _solve(a, g)
    l1 = co.sublinearity_l1(c, a.n_grid)
    li = co.sublinearity_linf(c, a.n_grid)
    d = l1.values.shape[1]
    rows = [(n, k + 1, l1.values[i, k], li.values[i, k]) for i, n in enumerate(a.n_grid) for k in range(d)]
    _emit(_table(("n", "coordinate", "chi_l1", "chi_linf"), rows), a.out)
    return EXIT_OK


def cmd_walk_sim(a):
    g = cl.giant_component(_field(a))
    start = _center(a, g)
    samples = [wk.simulate_vsrw(g, start, a.horizon, a.walk_seed, index=i, censor=False) for i in range(a.walks)]
    if a.log is not None:
        wk.write_trajectory_log(samples, a.log, g)
    rows = [(i, s.index, len(s.times), *[int(v) for v in s.positions[-1]]) for i, s in enumerate(samples)]
    d = g.box.dim
    _emit(_table(("walk", "index", "jumps") + tuple(f"x{k + 1}" for k in range(d)), rows), a.out)
    return EXIT_OK


def cmd_walk_qfclt(a):
    g = cl.giant_component(_field(a))
    c = co.solve_corrector(g, a.mode)
    rep = wk.qfclt_test(g, c, a.n_grid, a.walks, a.horizon, a.walk_seed)
    d = rep.reference.shape[0]
    rows = []
    for n in rep.ns:
        for i in range(d):
            for j in range(d):
                rows.append((n, f"cov{i + 1}{j + 1}", rep.covariance[n][i, j], rep.reference[i, j]))
        for k, pv in enumerate(rep.ks_pvalue[n]):
            rows.append((n, f"ks_p[dir={k}]", float(pv), math.nan))
        rows.append((n, "censored", rep.censored[n], 0.0))
    _emit(_table(("n", "metric", "value", "reference"), rows), a.out)
    return EXIT_OK


def cmd_ineq_check(a):
    g = cl.giant_component(_field(a))
    x = _center(a, g)
    d = g.box.dim
    out = []
    for n in a.n:
        expo = float(d - 1) if a.exponent is None else a.exponent
        prof = sb.WeightProfile(n, a.eps, x, d, exponent=expo)
        if a.which == "anchored-riso":
            cert = sb.anchored_riso(g, x, n, a.eps, prof, C2=a.constant, C_W=a.cw)
        elif a.which == "anchored-sobolev":
            cert = sb.anchored_sobolev_exhaustive(g, x, n, prof, C_bar=a.constant, C_W=a.cw)
        elif a.which == "iso":
            zeta = sb.max_zeta(a.theta, d) if a.zeta is None else a.zeta
            c_reg = len(cl.ball(g, x, n)) / n ** d
            cert = sb.effective_dim_iso(g, x, n, a.theta, zeta, C_iso=a.constant or 1.0, C_reg=c_reg, seed=a.seed)
        else:
            zeta = sb.max_zeta(a.theta, d) if a.zeta is None else a.zeta
            c_reg = len(cl.ball(g, x, n)) / n ** d
            cs1 = a.constant or sb.sobolev_constant(1.0, c_reg, zeta, d)
            cert = sb.sobolev_batch(g, x, n, zeta, cs1, seed=a.seed)
        row = cert.as_row()
        row["n"] = n
        out.append(row)
    _emit("\n".join(json.dumps(r, sort_keys=True) for r in out) + "\n", a.out)
    return EXIT_OK


def cmd_ergodic_avg(a):
    f = _field(a)
    mean = a.mean
    rows = []
    for n in a.n_grid:
        w = er.weighted_average(f, a.obs, n, a.eps, a.norm, mean)
        rows.append((n, w.value, w.reference, w.integral))
    _emit(_table(("n", "value", "reference", "integral"), rows), a.out)
    return EXIT_OK


def cmd_run(a):
    cfg = ex.load_config(a.config)
    out_dir = cfg.output_dir if a.output_dir is None else a.output_dir
    events = []
    result = ex.run(cfg, threads=thread_count(), events=events)
    try:
        ex.write_results(result.rows, Path(out_dir) / "results.csv")
        ex.write_log(events, Path(out_dir) / "run.log", cfg, result)
    except OSError as exc:
        raise SnapshotIOError(str(exc)) from None
    for i, msg in result.failures:
        logging.getLogger("rcmlab").warning("realization %d failed: %s", i, msg)
    return result.exit_code


def cmd_report(a):
    rows = []
    for path in a.input:
        rows.extend(ex.read_results(path))
    summary = ex.report(rows, a.metric)
    _emit(ex.summary_to_csv(summary), a.out)
    return EXIT_OK


# parser ------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="rcm", description="Random conductance model experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    top = p.add_subparsers(dest="group", required=True)

    def action(group, name, fn, field=True, help=None):
        sp = group.add_parser(name, help=help)
        if field:
            _field_flags(sp)
        _out_flag(sp)
        sp.set_defaults(fn=fn)
        return sp

    e = top.add_parser("env", help="generate or inspect environments").add_subparsers(dest="action", required=True)
    action(e, "gen", cmd_env_gen, help="sample an environment and write a snapshot")
    action(e, "info", cmd_env_info, help="summary of an environment")

    c = top.add_parser("cluster", help="component statistics").add_subparsers(dest="action", required=True)
    action(c, "stats", cmd_cluster_stats)

    g = top.add_parser("geom", help="regularity audit").add_subparsers(dest="action", required=True)
    sp = action(g, "audit", cmd_geom_audit)
    sp.add_argument("--n", type=_posint, nargs="+", default=[8])
    sp.add_argument("--theta", type=float, default=0.5)
    sp.add_argument("--cv", type=float, default=1.0)
    sp.add_argument("--criso", type=float, default=0.25)
    sp.add_argument("--cw", type=float, default=2.0)
    sp.add_argument("--max-centers", type=int, default=16)
    sp.add_argument("--center", type=int, nargs="+")

    k = top.add_parser("corr", help="corrector computations").add_subparsers(dest="action", required=True)
    for name, fn in (("solve", cmd_corr_solve), ("sigma", cmd_corr_sigma), ("sublin", cmd_corr_sublin)):
        sp = action(k, name, fn)
        sp.add_argument("--mode", choices=sorted(co.MODES), default="dirichlet")
        sp.add_argument("--tol", type=float, default=co.DEFAULT_TOL)
        sp.add_argument("--margin", type=int)
        if name == "sublin":
            sp.add_argument("--n-grid", type=_posint, nargs="+", default=[8, 16, 32])

    w = top.add_parser("walk", help="random walk simulation").add_subparsers(dest="action", required=True)
    sp = action(w, "sim", cmd_walk_sim)
    sp.add_argument("--horizon", type=float, default=100.0)
    sp.add_argument("--walks", type=int, default=1)
    sp.add_argument("--walk-seed", type=int, default=0)
    sp.add_argument("--center", type=int, nargs="+")
    sp.add_argument("--log", type=Path, help="binary trajectory log")
    sp = action(w, "qfclt", cmd_walk_qfclt)
    sp.add_argument("--n-grid", type=_posint, nargs="+", default=[8, 16])
    sp.add_argument("--walks", type=int, default=2000)
    sp.add_argument("--horizon", type=float, default=1.0, help="macroscopic time T")
    sp.add_argument("--walk-seed", type=int, default=0)
    sp.add_argument("--mode", choices=sorted(co.MODES), default="dirichlet")

    i = top.add_parser("ineq", help="functional inequality checks").add_subparsers(dest="action", required=True)
    sp = action(i, "check", cmd_ineq_check)
    sp.add_argument("--which", choices=("iso", "sobolev", "anchored-riso", "anchored-sobolev"), required=True)
    sp.add_argument("--n", type=_posint, nargs="+", default=[3])
    sp.add_argument("--eps", type=float, default=0.5)
    sp.add_argument("--theta", type=float, default=0.5)
    sp.add_argument("--zeta", type=float)
    sp.add_argument("--exponent", type=float, help="weight exponent (default d-1)")
    sp.add_argument("--constant", type=float, help="constant to test against")
    sp.add_argument("--cw", type=float, default=1.0)
    sp.add_argument("--center", type=int, nargs="+")

    r = top.add_parser("ergodic", help="weighted ergodic averages").add_subparsers(dest="action", required=True)
    sp = action(r, "avg", cmd_ergodic_avg)
    sp.add_argument("--obs", choices=er.OBSERVABLES, default="edge")
    sp.add_argument("--eps", type=float, default=1.0)
    sp.add_argument("--n-grid", type=_posint, nargs="+", default=[16, 32])
    sp.add_argument("--norm", choices=er.NORMS, default="l1")
    sp.add_argument("--mean", type=float, help="E[phi] for the reference value")

    sp = top.add_parser("run", help="run a configured batch experiment")
    sp.add_argument("--config", type=Path, required=True)
    sp.add_argument("--output-dir", type=Path)
    sp.set_defaults(fn=cmd_run)

    sp = top.add_parser("report", help="aggregate result CSVs")
    sp.add_argument("--input", type=Path, nargs="+", required=True)
    sp.add_argument("--metric", nargs="*", help="restrict to these metrics")
    _out_flag(sp)
    sp.set_defaults(fn=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return a.fn(a)
    except (SnapshotIOError, FormatError, OSError) as exc:
        sys.stderr.write(f"rcm: I/O error: {exc}\n")
        return EXIT_IO
    except (ValidationError, ValueError, RcmError) as exc:
        sys.stderr.write(f"rcm: {exc}\n")
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
