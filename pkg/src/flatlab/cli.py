"""Command line front-end.

Exit codes: 0 ok, 2 infeasible parameters (including a failed hypothesis),
3 invariant violation, 4 bad input.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import InfeasibleParameters, InvariantViolation

EXIT_OK, EXIT_INFEASIBLE, EXIT_INVARIANT, EXIT_BAD_INPUT = 0, 2, 3, 4
CONFIG_SCHEMA = 1


class ConfigError(ValueError):
    pass


# -- config -----------------------------------------------------------------------

@dataclass
class ChartConfig:
    resolution: int = 32
    stencil: int = 2
    quadrature: int = 2
    cells_per_radius: int = 2


@dataclass
class FamilyConfig:
    name: str = "ilmanen"
    j: list = field(default_factory=lambda: [1, 2, 4, 8])
    rho: float | None = None
    R: float = 1.0


@dataclass
class PipelineConfig:
    kappas: list = field(default_factory=lambda: [2, 4, 8])
    lambdas: list = field(default_factory=lambda: [0.2, 0.4, 0.8])
    landmarks: int = 96
    seed: int = 0
    almost: bool = False


@dataclass
class ExperimentConfig:
    schema_version: int = CONFIG_SCHEMA
    chart: ChartConfig = field(default_factory=ChartConfig)
    family: FamilyConfig = field(default_factory=FamilyConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    output: str = "out"
    cache_dir: str | None = None

    @classmethod
    def from_dict(cls, d) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a mapping")
        if d.get("schema_version") != CONFIG_SCHEMA:
            raise ConfigError(f"schema_version must be {CONFIG_SCHEMA}, got {d.get('schema_version')!r}")
        nested = {"chart": ChartConfig, "family": FamilyConfig, "pipeline": PipelineConfig}
        kw = {}
        for key, val in d.items():
            if key not in {f.name for f in fields(cls)}:
                raise ConfigError(f"unknown config key {key!r}")
            kw[key] = _build(nested[key], val, key) if key in nested else val
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        from .metrics import FAMILIES
        if self.family.name not in FAMILIES:
            raise ConfigError(f"unknown family {self.family.name!r}")
        if not self.family.j or any(int(j) != j or j < 1 for j in self.family.j):
            raise ConfigError("family.j must be a nonempty list of positive integers")
        if self.chart.resolution < 8:
            raise ConfigError("chart.resolution must be at least 8")
        if not self.pipeline.kappas or not self.pipeline.lambdas:
            raise ConfigError("parameter grids must be nonempty")


def _build(cls, val, where):
    if not isinstance(val, dict):
        raise ConfigError(f"{where} must be a mapping")
    names = {f.name for f in fields(cls)}
    for key in val:
        if key not in names:
            raise ConfigError(f"unknown config key {where}.{key}")
    return cls(**val)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return ExperimentConfig.from_dict(data)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)


# -- output -------------------------------------------------------------------------

def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def to_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, default=_jsonable)


def write_outputs(out_dir, files: dict) -> None:
    """Write every file into a temporary sibling, then move each into place."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(dir=out, prefix=f".{name}.")
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            staged.append((tmp, out / name))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, dest in staged:
        os.replace(tmp, dest)


def _emit(payload, out_dir=None, name="report.json"):
    text = to_json(payload)
    if out_dir:
        write_outputs(out_dir, {name: text})
    print(text)


# -- experiment run -------------------------------------------------------------------

def run(cfg: ExperimentConfig) -> dict:
    """Optimized pipeline bound for every ``j``; writes report, series and summary."""
    from .flatbound import family_context, optimize_params, series_csv
    reports = []
    for j in cfg.family.j:
        ctx = family_context(cfg.family.name, int(j), cfg.chart.resolution, cfg.pipeline.landmarks,
                             cfg.chart.stencil, rho=cfg.family.rho, R=cfg.family.R,
                             almost=cfg.pipeline.almost, cells_per_radius=cfg.chart.cells_per_radius)
        reports.append(optimize_params(ctx, cfg.pipeline.kappas, cfg.pipeline.lambdas))
    payload = {"schema_version": CONFIG_SCHEMA, "version": __version__, "config": cfg.to_dict(),
               "reports": [r.to_dict() for r in reports]}
    lines = [f"family {cfg.family.name}, resolution {cfg.chart.resolution}"]
    for r in reports:
        lines.append(f"j={r.j:<3d} bound={r.bound:.6g} kappa={r.kappa} lambda'={r.lambda_prime} "
                     f"delta={r.delta:.4g} |dVol|={abs(r.volj - r.vol0):.4g}")
    write_outputs(cfg.output, {"report.json": to_json(payload), "series.csv": series_csv(reports),
                               "summary.txt": "\n".join(lines) + "\n"})
    return payload


# -- subcommands ----------------------------------------------------------------------

def _family_setup(args):
    from .flatbound import chart_for
    from .metrics import family_field, reference_field
    chart = chart_for(args.family, args.j, args.resolution, cells_per_radius=args.cells_per_radius)
    return chart, family_field(args.family, args.j), reference_field(args.family)


def _points(text):
    pts = []
    for chunk in text.split(";"):
        try:
            u, v = (float(x) for x in chunk.split(","))
        except ValueError as exc:
            raise ConfigError(f"bad point {chunk!r}; expected 'u,v'") from exc
        pts.append((u, v))
    return pts


def cmd_mesh_build(args):
    from .mesh import build_chart, cached_graph, content_hash
    from .metrics import reference_field
    metric = reference_field(args.family) if args.family else None
    kind = reference_field(args.family).kind if args.family else args.kind
    graph = cached_graph(kind, args.resolution, k=args.stencil, cache_dir=args.cache_dir, metric=metric)
    c = graph.chart
    _emit({"kind": c.kind, "resolution": list(c.resolution), "nodes": c.n_nodes,
           "edges": int(len(graph.src)), "stencil": graph.k, "widened": graph.widened,
           "hash": content_hash(c.descriptor())}, args.out)


def cmd_dist(args):
    from .geodesy import distances, edge_lengths
    from .mesh import build_graph
    chart, g_j, g_0 = _family_setup(args)
    graph = build_graph(chart, args.stencil, metric=g_0)
    pts = _points(args.points)
    ids = np.array([chart.nearest_node(p) for p in pts])
    out = {"points": [chart.nodes[i].tolist() for i in ids]}
    for name, field_ in (("d_j", g_j), ("d_0", g_0)):
        dm = distances(graph, edge_lengths(graph, field_, args.quadrature), ids,
                       threads=args.threads, cache_dir=args.cache_dir)
        out[name] = dm.values[:, ids]
    _emit(out, args.out)


def cmd_volume(args):
    from .geodesy import volume
    chart, g_j, g_0 = _family_setup(args)
    vj, v0 = volume(chart, g_j), volume(chart, g_0)
    _emit({"family": args.family, "j": args.j, "vol_j": vj, "vol_0": v0, "difference": vj - v0}, args.out)


def _context(args):
    from .flatbound import family_context
    return family_context(args.family, args.j, args.resolution, args.landmarks, args.stencil,
                          cells_per_radius=args.cells_per_radius, almost=args.almost)


def cmd_goodset(args):
    from .goodset import verify_good_set
    ctx = _context(args)
    kappa, lam = args.kappa[0], args.lambda_prime[0]
    sel = ctx.good_set(kappa, lam)
    payload = sel.to_dict()
    if sel.kappa * sel.eps < 0.5:
        payload["verification"] = verify_good_set(sel, ctx.square(ctx.dj_rows), ctx.square(ctx.d0_rows),
                                                  lam, ctx.pairs, 2 * ctx.tau * ctx.D)
    _emit(payload, args.out, "goodset.json")


def cmd_zspace(args):
    from .geodesy import edge_lengths
    from .mesh import build_graph
    from .zspace import certify
    ctx = _context(args)
    sel = ctx.good_set(args.kappa[0], args.lambda_prime[0])
    graph = build_graph(ctx.chart, args.stencil, metric=ctx.g_0)
    rep = certify(graph, edge_lengths(graph, ctx.g_j, args.quadrature),
                  edge_lengths(graph, ctx.g_0, args.quadrature), sel.W_nodes,
                  levels=args.levels, h_scale=args.h_scale, seed=args.seed)
    _emit(rep, args.out, "zspace.json")


def cmd_flatbound(args):
    from .flatbound import family_context, optimize_params, series_csv
    reports = []
    for j in args.j_list:
        ctx = family_context(args.family, j, args.resolution, args.landmarks, args.stencil,
                             cells_per_radius=args.cells_per_radius, almost=args.almost)
        reports.append(optimize_params(ctx, args.kappa, args.lambda_prime))
    payload = {"schema_version": CONFIG_SCHEMA, "reports": [r.to_dict() for r in reports]}
    if args.out:
        write_outputs(args.out, {"report.json": to_json(payload), "series.csv": series_csv(reports)})
    print(to_json(payload))


def cmd_tubes(args):
    from .metrics import chart_kind, family_field, reference_field
    from .tubes import build_symmetric_tube, tube_check
    tube = build_symmetric_tube(chart_kind(args.family), args.leaves, args.along, args.across,
                                max_cell=args.max_cell)
    rep = tube_check(family_field(args.family, args.j), reference_field(args.family), tube)
    if not args.leaf_table:
        rep.pop("leaves")
    _emit(rep, args.out, "tubes.json")


def finsler_limit(s: float, theta: float, width: float = 5.0) -> float:
    """Limit distance for displacement ``(s, theta)`` on the densely cinched torus."""
    s, theta = abs(s), abs(theta)
    return min(math.hypot(s, width * theta), s * math.sqrt(width * width - 1.0) / width + theta)


FINSLER_PAIRS = (((0.0, 0.0), (0.0, math.pi)), ((0.0, 0.0), (math.pi / 2, 0.0)),
                 ((0.0, 0.0), (math.pi / 2, math.pi / 2)), ((0.0, 0.0), (0.5, 0.5)))


def cmd_example(args):
    from .geodesy import distances, edge_lengths
    from .mesh import build_graph
    if args.name == "ilmanen":
        ctx = _context(args)
        c = ctx.chart
        payload = {"family": "ilmanen", "j": args.j}
        if args.j >= 2:
            lm = list(ctx.landmarks)
            pole = float(ctx.dj_rows[lm.index(int(c.poles[0])), int(c.poles[1])])
            target = math.pi + 2.0 * ctx.g_j.depth
            payload["pole_distance"] = {"d_j": pole, "limit": target,
                                        "relative_error": abs(pole - target) / target}
        from .flatbound import optimize_params
        payload["bound"] = optimize_params(ctx, args.kappa, args.lambda_prime).to_dict()
        _emit(payload, args.out, "example.json")
        return
    args.family = "finsler-torus"
    chart, g_j, g_0 = _family_setup(args)
    graph = build_graph(chart, args.stencil)
    lj, l0 = edge_lengths(graph, g_j, args.quadrature), edge_lengths(graph, g_0, args.quadrature)
    rows = []
    for p, q in FINSLER_PAIRS:
        a, b = chart.nearest_node(p), chart.nearest_node(q)
        pa, pb = chart.nodes[a], chart.nodes[b]
        dj = float(distances(graph, lj, [a]).values[0, b])
        d0 = float(distances(graph, l0, [a]).values[0, b])
        rows.append({"p": pa.tolist(), "q": pb.tolist(), "d_j": dj, "d_0": d0,
                     "d_limit": finsler_limit(pb[0] - pa[0], pb[1] - pa[1])})
    _emit({"family": "finsler-torus", "j": args.j, "nodes": chart.n_nodes, "pairs": rows},
          args.out, "example.json")


def cmd_run(args):
    cfg = load_config(args.config)
    if args.out:
        cfg.output = args.out
    payload = run(cfg)
    print(Path(cfg.output, "summary.txt").read_text(), end="")
    return payload


# -- parser -------------------------------------------------------------------------------

def _common(p, family=True):
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--stencil", type=int, default=2, choices=(1, 2, 3))
    p.add_argument("--quadrature", type=int, default=2, choices=(1, 2, 4))
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--cells-per-radius", type=int, default=2)
    if family:
        p.add_argument("--family", default="ilmanen")
        p.add_argument("--j", type=int, default=2)


def _pipeline(p):
    p.add_argument("--kappa", type=float, nargs="+", default=[2.0, 4.0, 8.0])
    p.add_argument("--lambda-prime", type=float, nargs="+", default=[0.2, 0.4, 0.8])
    p.add_argument("--landmarks", type=int, default=96)
    p.add_argument("--almost", action="store_true", help="allow domination up to 1/(2j) and rescale")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flatlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh-build", help="build (and cache) a chart graph")
    _common(p, family=False)
    p.add_argument("--kind", choices=("sphere", "torus"), default="sphere")
    p.add_argument("--family", default=None, help="widen the stencil for this family's reference metric")
    p.set_defaults(func=cmd_mesh_build)

    p = sub.add_parser("dist", help="graph distances between points under g_j and g_0")
    _common(p)
    p.add_argument("--points", required=True, help="'u,v;u,v;...' in chart coordinates")
    p.set_defaults(func=cmd_dist)

    p = sub.add_parser("volume", help="total volumes under g_j and g_0")
    _common(p)
    p.set_defaults(func=cmd_volume)

    p = sub.add_parser("goodset", help="good-set selection and its lemma checks")
    _common(p)
    _pipeline(p)
    p.set_defaults(func=cmd_goodset)

    p = sub.add_parser("zspace-verify", help="certify the embeddings into the glued space")
    _common(p)
    _pipeline(p)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--h-scale", type=float, default=1.0, help="multiply the required slab height")
    p.set_defaults(func=cmd_zspace, resolution=16)

    p = sub.add_parser("flatbound", help="optimized pipeline bound over a j-range")
    _common(p)
    _pipeline(p)
    p.add_argument("--j-list", type=int, nargs="+", default=[1, 2, 4, 8])
    p.set_defaults(func=cmd_flatbound)

    p = sub.add_parser("tubes", help="volume versus leaf-length chain on a symmetric tube")
    _common(p)
    p.add_argument("--leaves", choices=("meridian", "torus-r", "torus-theta"), default="meridian")
    p.add_argument("--along", type=float, nargs=2, default=[0.3, math.pi - 0.3])
    p.add_argument("--across", type=float, nargs=2, default=[-0.2, 0.2])
    p.add_argument("--max-cell", type=float, default=0.01)
    p.add_argument("--leaf-table", action="store_true")
    p.set_defaults(func=cmd_tubes)

    p = sub.add_parser("example", help="worked families: ilmanen | finsler-torus")
    _common(p, family=False)
    _pipeline(p)
    p.add_argument("name", choices=("ilmanen", "finsler-torus"))
    p.add_argument("--j", type=int, default=4)
    p.set_defaults(func=cmd_example, family="ilmanen")

    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_run)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_BAD_INPUT
    try:
        args.func(args)
    except InfeasibleParameters as exc:
        details = getattr(exc, "details", {})
        print(to_json({"error": "infeasible", "message": str(exc), "details": details}), file=sys.stderr)
        return EXIT_INFEASIBLE
    except InvariantViolation as exc:
        print(to_json({"error": "invariant violation", "message": str(exc)}), file=sys.stderr)
        return EXIT_INVARIANT
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(to_json({"error": "bad input", "message": str(exc)}), file=sys.stderr)
        return EXIT_BAD_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
