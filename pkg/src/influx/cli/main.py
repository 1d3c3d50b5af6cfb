"""``influx`` command line.

Every subcommand writes a JSON run manifest next to its outputs (inputs and
outputs with SHA-256 digests, flags, seeds, version, per-phase timings), and
``influx rerun`` replays one. Exit codes: 0 success, 2 bad input, 3
numerical failure, 4 resource refusal.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .. import __version__
from ..curves import InfluenceCurve, read_curve, write_curve, write_table
from ..errors import FormatError, InfluxError, ResourceError, SpecError
from ..graph import format_float, read_edge_list, write_edge_list, write_node_attributes

__all__ = ["main", "build_parser"]


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _size_list(text):
    try:
        return [int(float(x)) for x in text.split(",") if x.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated sizes, got {text!r}")


def _matrix(text):
    try:
        return [[float(x) for x in row.split(",")] for row in text.split(";")]
    except ValueError:
        raise argparse.ArgumentTypeError("matrix rows are ';'-separated, entries ','-separated")


def _positive(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


GLOBALS = {"seed": 0, "workers": 1, "out_dir": ".", "manifest": None}


def _add_globals(p, suppress):
    d = (lambda k: argparse.SUPPRESS) if suppress else (lambda k: GLOBALS[k])
    p.add_argument("--seed", type=int, default=d("seed"), help="master RNG seed")
    p.add_argument("--workers", type=int, default=d("workers"), help="worker threads")
    p.add_argument("--out-dir", default=d("out_dir"), help="directory for relative output paths")
    p.add_argument("--manifest", default=d("manifest"),
                   help="manifest path (default: next to the primary output)")


def _add_net(p):
    p.add_argument("--net", required=True, help="edge list 'src,dst,rate'")
    p.add_argument("--attributes", help="node attribute file 'node,beta,gamma'")
    p.add_argument("--nodes", type=int, help="node count (default: from header or ids)")
    p.add_argument("--sources", type=_int_list, default=[], help="comma-separated source ids")


def _add_grid(p, t_max=10.0, points=200):
    p.add_argument("--t-max", type=_positive, default=t_max)
    p.add_argument("--t-points", type=int, default=points)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="influx", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"influx {__version__}")
    _add_globals(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _add_globals(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="random network with uniform rates")
    g.add_argument("--family", required=True, help="er, small_world, scale_free or kronecker")
    g.add_argument("--nodes", type=int, default=0)
    g.add_argument("--avg-degree", type=float)
    g.add_argument("--ring-degree", type=int)
    g.add_argument("--rewire-prob", type=float, default=0.1)
    g.add_argument("--attach", type=int)
    g.add_argument("--seed-matrix", type=_matrix, help="Kronecker seed, e.g. '0.9,0.5;0.5,0.3'")
    g.add_argument("--power", type=int)
    g.add_argument("--rate-lo", type=float, default=0.0)
    g.add_argument("--rate-hi", type=float, default=1.0)
    g.add_argument("--beta", type=float, default=0.0, help="self-activation rate of every node")
    g.add_argument("--gamma", type=float, default=0.0, help="recovery rate of every node")
    g.add_argument("--out", required=True)

    s = sub.add_parser("simulate", parents=[common], help="Monte-Carlo cascade ensemble")
    _add_net(s)
    _add_grid(s)
    s.add_argument("--cascades", type=int, default=5000)
    s.add_argument("--out", required=True, help="influence curve CSV 't,sigma'")
    s.add_argument("--emit-density", nargs="?", const="density.csv")
    s.add_argument("--emit-rates", nargs="?", const="rates.csv")
    s.add_argument("--emit-cascades", nargs="?", const="cascades.txt")

    p = sub.add_parser("predict", parents=[common], help="forward-equation influence prediction")
    _add_net(p)
    _add_grid(p)
    p.add_argument("--method", choices=("dist", "tree"), default="dist")
    p.add_argument("--tree-width", type=int, default=64)
    p.add_argument("--solver", choices=("auto", "rk4", "expm", "closed_form"), default="auto")
    p.add_argument("--step", type=_positive, help="RK4 step (default: 0.1 / max rate)")
    p.add_argument("--out", required=True)
    p.add_argument("--emit-density", nargs="?", const="density.csv")
    p.add_argument("--emit-rates", nargs="?", const="rates.csv")

    o = sub.add_parser("oracle", parents=[common], help="exact solution on all 2^K configurations")
    _add_net(o)
    _add_grid(o, 5.0, 100)
    o.add_argument("--limit", type=int, default=16)
    o.add_argument("--out", default="oracle.csv")
    o.add_argument("--emit-density", nargs="?", const="oracle_density.csv")
    o.add_argument("--emit-rates", nargs="?", const="oracle_rates.csv")

    v = sub.add_parser("verify-bounds", parents=[common], help="check the influence error bounds")
    _add_net(v)
    _add_grid(v, 5.0, 100)
    v.add_argument("--eps", type=float, required=True)
    v.add_argument("--method", choices=("dist", "tree"), default="dist")
    v.add_argument("--tree-width", type=int, default=64)
    v.add_argument("--rates", help="rate profile CSV to check instead of an estimator")
    v.add_argument("--limit", type=int, default=16)
    v.add_argument("--out", help="write the JSON report here instead of stdout")

    c = sub.add_parser("compare", parents=[common], help="relative error of curve A against B")
    c.add_argument("curve_a")
    c.add_argument("curve_b", help="reference curve")
    c.add_argument("--out", help="metrics JSON (default: stdout)")
    c.add_argument("--series", help="per-time CSV 't,reference,value,rel_error'")

    b = sub.add_parser("bench", parents=[common], help="timing table of the predictor")
    b.add_argument("--sizes", type=_size_list, default=[10 ** 4, 10 ** 5])
    b.add_argument("--family", default="er")
    b.add_argument("--avg-degree", type=float, default=4.0)
    b.add_argument("--solver", choices=("rk4", "expm"), default="rk4")
    b.add_argument("--steps", type=int, default=200)
    b.add_argument("--t-max", type=_positive, default=10.0)
    b.add_argument("--memory-limit", type=float, help="bytes (default: available memory)")
    b.add_argument("--out", default="bench.csv")

    pl = sub.add_parser("plot", parents=[common], help="SVG line chart of CSV curves")
    pl.add_argument("inputs", nargs="+")
    pl.add_argument("--out", required=True)
    pl.add_argument("--title")
    pl.add_argument("--width", type=int, default=640)
    pl.add_argument("--height", type=int, default=400)

    r = sub.add_parser("rerun", parents=[common], help="replay a run manifest")
    r.add_argument("manifest_file")
    r.add_argument("--check", action="store_true", help="exit 1 when an output differs")
    return parser


class _Run:
    """Per-invocation context: output paths and the manifest."""

    def __init__(self, args, argv):
        from .manifest import RunManifest

        self.args = args
        self.out_dir = Path(args.out_dir)
        flags = dict(vars(args))
        self.manifest = RunManifest(args.command, list(argv), flags, cwd=os.getcwd())
        self.manifest.seeds["seed"] = args.seed

    def out(self, name) -> Path:
        p = Path(name)
        if not p.is_absolute():
            p = self.out_dir / p
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def manifest_path(self, primary=None) -> Path:
        if self.args.manifest:
            return self.out(self.args.manifest)
        if primary is not None:
            primary = Path(primary)
            return primary.with_name(primary.name + ".manifest.json")
        return self.out(f"{self.args.command}.manifest.json")

    def tag(self, primary=None):
        """Comment line tying an output file to its manifest."""
        return f"manifest={self.manifest_path(primary).name}"

    def finish(self, primary=None):
        path = self.manifest_path(primary)
        self.manifest.write(path)
        return path


def _load_net(run, args):
    run.manifest.add_input(args.net)
    if args.attributes:
        run.manifest.add_input(args.attributes)
    return read_edge_list(args.net, node_count=args.nodes, attributes=args.attributes)


def _grid(args):
    if args.t_points < 2:
        raise SpecError("--t-points must be >= 2")
    return np.linspace(0.0, args.t_max, args.t_points)


def _stable_provenance(prov):
    # timings vary run to run; they live in the manifest instead
    return {k: v for k, v in prov.items() if not k.endswith("_seconds")}


def _write_curve(run, curve, path, primary):
    prov = _stable_provenance(curve.provenance)
    prov["manifest"] = run.manifest_path(primary).name
    write_curve(InfluenceCurve(curve.times, curve.sigma, prov), path)
    run.manifest.add_output(path)


# -- subcommands -------------------------------------------------------------

def cmd_generate(run, args):
    from ..gen import GeneratorSpec, generate, sample_rates

    out = run.out(args.out)
    with run.manifest.phase("generate"):
        spec = GeneratorSpec(args.family, args.nodes, seed=args.seed, avg_degree=args.avg_degree,
                             ring_degree=args.ring_degree, rewire_prob=args.rewire_prob,
                             attach=args.attach, seed_matrix=args.seed_matrix, power=args.power)
        net = sample_rates(generate(spec), args.seed, args.rate_lo, args.rate_hi)
        if args.beta or args.gamma:
            K = net.node_count
            net = net.with_rates(self_rates=np.full(K, args.beta),
                                 recovery_rates=np.full(K, args.gamma))
    meta = {"spec": spec.to_dict(), "rate_lo": args.rate_lo, "rate_hi": args.rate_hi,
            "rate_stream": 1, "nodes": net.node_count, "edges": net.edge_count,
            "edge_list": out.name, "manifest": run.manifest_path(out).name}
    write_edge_list(net, out, header=[f"spec={spec.to_json()}", run.tag(out)])
    run.manifest.add_output(out)
    if args.beta or args.gamma:
        attrs = out.with_name(out.stem + ".nodes.csv")
        write_node_attributes(net, attrs)
        meta["attributes"] = attrs.name
        run.manifest.add_output(attrs)
    side = out.with_name(out.stem + ".json")
    with open(side, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    run.manifest.add_output(side)
    run.manifest.seeds.update({"topology_stream": 0, "rate_stream": 1})
    return out


def cmd_simulate(run, args):
    from ..sim import (RNG_ALGORITHM, empirical_density, empirical_influence, empirical_rates,
                       run_ensemble, write_cascades, write_density)
    from ..fpe.profile import write_rates

    net = _load_net(run, args)
    grid = _grid(args)
    out = run.out(args.out)
    with run.manifest.phase("simulate"):
        ens = run_ensemble(net, args.sources, args.t_max, args.cascades, args.seed,
                           workers=args.workers)
    with run.manifest.phase("aggregate"):
        dens = empirical_density(ens, grid)
        curve = empirical_influence(ens, grid)
    run.manifest.seeds["rng"] = RNG_ALGORITHM
    _write_curve(run, curve, out, out)
    tag = [run.tag(out)]
    if args.emit_density:
        p = run.out(args.emit_density)
        write_density(p, dens, tag)
        run.manifest.add_output(p)
    if args.emit_rates:
        p = run.out(args.emit_rates)
        write_rates(p, empirical_rates(dens), tag)
        run.manifest.add_output(p)
    if args.emit_cascades:
        p = run.out(args.emit_cascades)
        write_cascades(p, ens, tag)
        run.manifest.add_output(p)
    return out


def cmd_predict(run, args):
    from ..fpe import estimate_rates, run_prediction, write_rates
    from ..sim import write_density

    net = _load_net(run, args)
    grid = _grid(args)
    out = run.out(args.out)
    with run.manifest.phase("rates"):
        rates = estimate_rates(net, args.sources, args.method, args.tree_width)
    with run.manifest.phase("solve"):
        pred = run_prediction(net, args.sources, grid, args.method, args.tree_width,
                              args.solver, args.step, rates=rates,
                              keep_density=bool(args.emit_density))
    _write_curve(run, pred.curve, out, out)
    tag = [run.tag(out)]
    if args.emit_density:
        p = run.out(args.emit_density)
        write_density(p, pred.trajectory, tag)
        run.manifest.add_output(p)
    if args.emit_rates:
        p = run.out(args.emit_rates)
        write_rates(p, rates, tag)
        run.manifest.add_output(p)
    return out


def cmd_oracle(run, args):
    from ..fpe import write_rates
    from ..oracle import exact_density, exact_rates
    from ..sim import write_density

    net = _load_net(run, args)
    grid = _grid(args)
    out = run.out(args.out)
    with run.manifest.phase("solve"):
        dens = exact_density(net, args.sources, grid, limit=args.limit)
    curve = InfluenceCurve(grid, dens.sigma, {"method": "exact", "node_count": net.node_count,
                                              "source_count": len(set(args.sources))})
    _write_curve(run, curve, out, out)
    tag = [run.tag(out)]
    if args.emit_density:
        p = run.out(args.emit_density)
        write_density(p, dens, tag)
        run.manifest.add_output(p)
    if args.emit_rates:
        with run.manifest.phase("rates"):
            rates = exact_rates(net, args.sources, grid, density=dens)
        p = run.out(args.emit_rates)
        write_rates(p, rates, tag)
        run.manifest.add_output(p)
    return out


def cmd_verify_bounds(run, args):
    from ..fpe import estimate_rates, read_rates
    from ..oracle import verify_bounds

    net = _load_net(run, args)
    grid = _grid(args)
    if args.rates:
        run.manifest.add_input(args.rates)
        q_hat = read_rates(args.rates)
    else:
        q_hat = estimate_rates(net, args.sources, args.method, args.tree_width)
    with run.manifest.phase("verify"):
        report = verify_bounds(net, args.sources, q_hat, args.eps, grid, limit=args.limit)
    data = report.to_dict()
    if args.out:
        out = run.out(args.out)
        data["manifest"] = run.manifest_path(out).name
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(data, fh, indent=1)
            fh.write("\n")
        run.manifest.add_output(out)
        return out
    sys.stdout.write(json.dumps(data) + "\n")
    return None


def cmd_compare(run, args):
    from .compare import compare_curves

    run.manifest.add_input(args.curve_a)
    run.manifest.add_input(args.curve_b)
    a, b = read_curve(args.curve_a), read_curve(args.curve_b)
    m = compare_curves(a, b)
    summary = {k: m[k] for k in ("linf_rel", "mean_rel", "linf_abs", "points")}
    summary.update({"curve": args.curve_a, "reference": args.curve_b})
    primary = None
    if args.series:
        p = run.out(args.series)
        write_table(p, ["t", "reference", "value", "rel_error"],
                    [m["times"], m["reference"], m["value"], m["rel_error"]], [run.tag(p)])
        run.manifest.add_output(p)
        primary = p
    if args.out:
        p = run.out(args.out)
        summary["manifest"] = run.manifest_path(p).name
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        run.manifest.add_output(p)
        primary = p
    else:
        sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")
    return primary


def cmd_bench(run, args):
    from .bench import loglog_slope, run_bench

    out = run.out(args.out)

    def progress(row):
        sys.stderr.write(f"K={row['nodes']}: rates {row['rates_s']:.3f}s "
                         f"solve {row['solve_s']:.3f}s\n")

    with run.manifest.phase("bench"):
        rows, aborted = run_bench(args.sizes, args.family, args.avg_degree, args.solver,
                                  args.steps, args.t_max, args.seed, args.memory_limit, progress)
    comments = [run.tag(out)]
    if len(rows) >= 2:
        comments.append("solve_slope=" + format_float(
            loglog_slope([r["nodes"] for r in rows], [r["solve_s"] for r in rows])))
    if aborted:
        comments.append(f"aborted: {aborted}")
    cols = ("nodes", "edges", "generate_s", "rates_s", "solve_s", "step")
    write_table(out, list(cols), [[r[c] for r in rows] for c in cols], comments)
    run.manifest.add_output(out)
    run.manifest.notes["aborted"] = aborted
    if aborted:
        # keep the partial table and its manifest, then report the refusal
        run.finish(out)
        raise ResourceError(f"bench stopped early: {aborted}")
    return out


def cmd_plot(run, args):
    from .plot import load_series, render_svg

    series = []
    xlabel = ylabel = None
    for path in args.inputs:
        run.manifest.add_input(path)
        s, xl, yl = load_series(path)
        series.extend(s)
        xlabel = xlabel or xl
        ylabel = yl if ylabel in (None, yl) else "value"
    out = run.out(args.out)
    svg = render_svg(series, xlabel, ylabel, args.title, args.width, args.height)
    svg = svg.replace("\n", f"\n<!-- {run.tag(out)} -->\n", 1)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(svg)
    run.manifest.add_output(out)
    return out


def cmd_rerun(run, args):
    from .manifest import file_digest, load_manifest

    data = load_manifest(args.manifest_file)
    if data["subcommand"] == "rerun":
        raise SpecError("refusing to replay a rerun manifest")
    cwd = data.get("cwd")
    here = os.getcwd()
    if cwd and os.path.isdir(cwd):
        os.chdir(cwd)
    try:
        code = main(list(data["argv"]))
        if code != 0:
            return code
        differs = []
        for path, digest in data.get("outputs", {}).items():
            now = file_digest(path) if os.path.exists(path) else None
            same = now == digest
            sys.stdout.write(f"{'identical' if same else 'differs'}: {path}\n")
            if not same:
                differs.append(path)
    finally:
        os.chdir(here)
    if differs and args.check:
        return 1
    return 0


COMMANDS = {
    "generate": cmd_generate, "simulate": cmd_simulate, "predict": cmd_predict,
    "oracle": cmd_oracle, "verify-bounds": cmd_verify_bounds, "compare": cmd_compare,
    "bench": cmd_bench, "plot": cmd_plot, "rerun": cmd_rerun,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    for k, v in GLOBALS.items():
        if not hasattr(args, k):
            setattr(args, k, v)
    try:
        if args.workers < 1:
            raise SpecError("--workers must be >= 1")
        run = _Run(args, argv)
        primary = COMMANDS[args.command](run, args)
        if args.command == "rerun":
            return primary
        run.finish(primary)
        return 0
    except InfluxError as exc:
        sys.stderr.write(f"influx: error: {exc}\n")
        return exc.exit_code
    except FileNotFoundError as exc:
        sys.stderr.write(f"influx: error: {exc.strerror}: {exc.filename}\n")
        return FormatError.exit_code
    except MemoryError:
        sys.stderr.write("influx: error: out of memory\n")
        return 4


if __name__ == "__main__":
    sys.exit(main())
