"""Parameter charts for the sphere and torus, and wide-stencil graphs on them.

Two chart kinds are supported:

* ``"sphere"``: polar coordinates ``(r, theta)`` with ``r`` in ``[0, pi]`` and
  ``theta`` periodic on ``[0, 2 pi)``.  The two poles are kept as single
  distinguished vertices joined to every node of the adjacent ring.
* ``"torus"``: the square ``[-pi, pi)^2``, periodic in both axes.

Grids are tensor products of two 1-D axes.  Each axis can be refined inside
bands, with a graded transition so that spacing at most doubles between
adjacent cells.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from math import gcd
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

TWO_PI = 2.0 * math.pi
KINDS = ("sphere", "torus")
MIN_RESOLUTION = 8


@dataclass(frozen=True)
class Band:
    """A 1-D refinement band: cells meeting ``[center - half_width, center + half_width]``
    on ``axis`` are subdivided ``factor`` times."""

    axis: int
    center: float
    half_width: float
    factor: int

    def to_dict(self) -> dict:
        return {"axis": self.axis, "center": self.center,
                "half_width": self.half_width, "factor": self.factor}


def _axis_bounds(kind: str, axis: int) -> tuple[float, float, bool]:
    if kind == "torus":
        return -math.pi, math.pi, True
    if axis == 0:
        return 0.0, math.pi, False
    return 0.0, TWO_PI, True


def _periodic_gap(a: float, b: float, period: float) -> float:
    d = abs(a - b) % period
    return min(d, period - d)


def _validate_bands(kind: str, bands: tuple[Band, ...]) -> None:
    for b in bands:
        if b.axis not in (0, 1):
            raise ValueError(f"band axis must be 0 or 1, got {b.axis}")
        if b.factor < 2:
            raise ValueError(f"refinement factor must be >= 2, got {b.factor}")
        if not b.half_width > 0:
            raise ValueError("band half-width must be positive")
        lo, hi, periodic = _axis_bounds(kind, b.axis)
        if not periodic and not (lo <= b.center <= hi):
            raise ValueError(f"band center {b.center} outside [{lo}, {hi}]")
    for axis in (0, 1):
        lo, hi, periodic = _axis_bounds(kind, axis)
        on_axis = [b for b in bands if b.axis == axis]
        for i, a in enumerate(on_axis):
            for b in on_axis[i + 1:]:
                gap = _periodic_gap(a.center, b.center, hi - lo) if periodic else abs(a.center - b.center)
                if gap < a.half_width + b.half_width:
                    raise ValueError(f"overlapping refinement bands on axis {axis}: "
                                     f"centers {a.center} and {b.center}")


def _cell_factors(lo: float, hi: float, n: int, periodic: bool, bands) -> np.ndarray:
    h = (hi - lo) / n
    left = lo + h * np.arange(n)
    right = left + h
    factors = np.ones(n, dtype=np.int64)
    period = hi - lo
    for b in bands:
        shifts = (-period, 0.0, period) if periodic else (0.0,)
        hit = np.zeros(n, dtype=bool)
        for s in shifts:
            c = b.center + s
            hit |= (left < c + b.half_width) & (right > c - b.half_width)
        idx = np.flatnonzero(hit)
        if idx.size == 0:
            continue
        # distance in cells from the nearest hit cell
        cells = np.arange(n)
        diff = np.abs(cells[:, None] - idx[None, :])
        if periodic:
            diff = np.minimum(diff, n - diff)
        dist = diff.min(axis=1)
        demand = np.ones(n, dtype=np.int64)
        f = b.factor
        m = 0
        while f > 1:
            demand[dist == m] = f
            f = math.ceil(f / 2)
            m += 1
        factors = np.maximum(factors, demand)
    return factors


def _build_axis(lo: float, hi: float, n: int, periodic: bool, bands) -> np.ndarray:
    factors = _cell_factors(lo, hi, n, periodic, bands)
    h = (hi - lo) / n
    pieces = []
    for k in range(n):
        f = int(factors[k])
        pieces.append(lo + h * k + (h / f) * np.arange(f))
    if not periodic:
        pieces.append(np.array([hi]))
    return np.concatenate(pieces)


def _dual_lengths(x: np.ndarray, period: float | None) -> np.ndarray:
    if period is not None:
        nxt = np.roll(x, -1)
        nxt[-1] += period
        prv = np.roll(x, 1)
        prv[0] -= period
        return 0.5 * (nxt - prv)
    out = np.empty_like(x)
    out[1:-1] = 0.5 * (x[2:] - x[:-2])
    out[0] = 0.5 * (x[1] - x[0])
    out[-1] = 0.5 * (x[-1] - x[-2])
    return out


@dataclass(frozen=True, eq=False)
class ParamChart:
    """A discretized parameter chart.

    Node ids ``i * nv + j`` address grid node ``(u_axis[i], v_axis[j])``.  On the
    sphere, ``u_axis`` holds only interior radii and the north and south poles
    get ids ``nu * nv`` and ``nu * nv + 1``.
    """

    kind: str
    resolution: tuple[int, int]
    u_axis: np.ndarray
    v_axis: np.ndarray
    nodes: np.ndarray
    areas: np.ndarray
    periodic: tuple[bool, bool]
    refinement: tuple[Band, ...] = field(default_factory=tuple)
    pole_ring_u: tuple[float, float] = (0.0, 0.0)

    @property
    def nu(self) -> int:
        return len(self.u_axis)

    @property
    def nv(self) -> int:
        return len(self.v_axis)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def domain_area(self) -> float:
        return TWO_PI * TWO_PI if self.kind == "torus" else math.pi * TWO_PI

    @property
    def poles(self) -> tuple[int, int] | None:
        if self.kind != "sphere":
            return None
        base = self.nu * self.nv
        return base, base + 1

    def grid_index(self, i: int, j: int) -> int:
        return i * self.nv + j

    def nearest_node(self, point) -> int:
        """Id of the chart node closest in parameter coordinates to ``point``."""
        u, v = float(point[0]), float(point[1])
        if self.kind == "sphere":
            if u <= 0.5 * self.u_axis[0]:
                return self.poles[0]
            if u >= 0.5 * (math.pi + self.u_axis[-1]):
                return self.poles[1]
        lo_u, hi_u, per_u = _axis_bounds(self.kind, 0)
        lo_v, hi_v, per_v = _axis_bounds(self.kind, 1)

        def closest(axis, x, lo, hi, periodic):
            d = np.abs(axis - x)
            if periodic:
                d = np.minimum(d % (hi - lo), (hi - lo) - d % (hi - lo))
            return int(np.argmin(d))

        i = closest(self.u_axis, u, lo_u, hi_u, per_u)
        j = closest(self.v_axis, v, lo_v, hi_v, per_v)
        return self.grid_index(i, j)

    def descriptor(self) -> dict:
        return {
            "kind": self.kind,
            "resolution": list(self.resolution),
            "refinement": [b.to_dict() for b in self.refinement],
        }


def build_chart(kind: str, resolution, refinement=()) -> ParamChart:
    """Build a chart.

    ``resolution`` is ``(n_u, n_v)`` or a single int.  For the torus these are node
    counts per axis.  For the sphere ``n_u`` is the number of cells along a
    meridian (``n_u - 1`` interior rings plus the two poles) and a single int
    ``n`` means ``(n, 2 n)``.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown chart kind {kind!r}; expected one of {KINDS}")
    if isinstance(resolution, (int, np.integer)):
        n = int(resolution)
        resolution = (n, 2 * n) if kind == "sphere" else (n, n)
    n_u, n_v = (int(x) for x in resolution)
    if min(n_u, n_v) < MIN_RESOLUTION:
        raise ValueError(f"resolution must be >= {MIN_RESOLUTION} per axis, got {(n_u, n_v)}")
    bands = tuple(b if isinstance(b, Band) else Band(**b) for b in refinement)
    _validate_bands(kind, bands)

    axes = []
    for axis, n in ((0, n_u), (1, n_v)):
        lo, hi, periodic = _axis_bounds(kind, axis)
        axes.append(_build_axis(lo, hi, n, periodic, [b for b in bands if b.axis == axis]))
    u_full, v = axes

    dv = _dual_lengths(v, TWO_PI)
    if kind == "torus":
        u = u_full
        du = _dual_lengths(u, TWO_PI)
        pole_ring = (0.0, 0.0)
    else:
        du_full = _dual_lengths(u_full, None)
        u = u_full[1:-1]
        du = du_full[1:-1]
        pole_ring = (float(du_full[0]), float(du_full[-1]))

    uu, vv = np.meshgrid(u, v, indexing="ij")
    nodes = np.column_stack([uu.ravel(), vv.ravel()])
    areas = np.outer(du, dv).ravel()
    if kind == "sphere":
        nodes = np.vstack([nodes, [[0.0, 0.0], [math.pi, 0.0]]])
        areas = np.concatenate([areas, [pole_ring[0] * TWO_PI, pole_ring[1] * TWO_PI]])

    chart = ParamChart(kind=kind, resolution=(n_u, n_v), u_axis=u, v_axis=v,
                       nodes=nodes, areas=areas,
                       periodic=(kind == "torus", True), refinement=bands,
                       pole_ring_u=pole_ring)
    total = areas.sum()
    if not np.all(areas > 0) or abs(total - chart.domain_area) > 1e-12 * chart.domain_area:
        raise RuntimeError("dual areas do not partition the parameter domain")
    return chart


def refine_near(chart: ParamChart, centers, half_width: float, factor: int, axis: int = 0) -> ParamChart:
    """Return a new chart refined by ``factor`` in bands around ``centers`` on ``axis``."""
    if factor < 2:
        raise ValueError(f"refinement factor must be >= 2, got {factor}")
    centers = [float(c) for c in centers]
    if not centers:
        return chart
    new = tuple(Band(axis, c, float(half_width), int(factor)) for c in centers)
    return build_chart(chart.kind, chart.resolution, chart.refinement + new)


def stencil_directions(k: int) -> list[tuple[int, int]]:
    """Primitive index offsets within Chebyshev radius ``k``, one per undirected direction."""
    if k not in (1, 2, 3):
        raise ValueError(f"stencil order must be 1, 2 or 3, got {k}")
    dirs = []
    for di in range(0, k + 1):
        for dj in range(-k, k + 1):
            if di == 0 and dj <= 0:
                continue
            if gcd(di, abs(dj)) != 1:
                continue
            dirs.append((di, dj))
    return dirs


@dataclass(frozen=True, eq=False)
class MeshGraph:
    """Undirected graph over chart nodes.

    Every edge stores its start point and parameter displacement so that its
    length under any metric is the integral along the straight parameter
    segment ``start + t * disp``.
    """

    chart: ParamChart
    k: int
    src: np.ndarray
    dst: np.ndarray
    start: np.ndarray
    disp: np.ndarray
    widened: bool = False

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def degrees(self) -> np.ndarray:
        return np.bincount(np.concatenate([self.src, self.dst]), minlength=self.chart.n_nodes)

    def adjacency(self, weights: np.ndarray):
        n = self.chart.n_nodes
        rows = np.concatenate([self.src, self.dst])
        cols = np.concatenate([self.dst, self.src])
        data = np.concatenate([weights, weights])
        return coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()

    def is_connected(self) -> bool:
        ncomp, _ = connected_components(self.adjacency(np.ones(self.n_edges)), directed=False)
        return ncomp == 1


def _row_aspect(chart: ParamChart, metric) -> np.ndarray:
    """Per-row ratio of the physical length of one u-step to one v-step under ``metric``."""
    du = _dual_lengths(chart.u_axis, TWO_PI) if chart.periodic[0] else np.gradient(chart.u_axis)
    dv = float(np.median(np.diff(np.concatenate([chart.v_axis, [chart.v_axis[0] + TWO_PI]]))))
    pts = np.column_stack([chart.u_axis, np.full(chart.nu, chart.v_axis[0])])
    g = metric.eval(pts)
    return np.sqrt(g[:, 0, 0]) * du / (np.sqrt(g[:, 1, 1]) * dv)


def build_graph(chart: ParamChart, k: int = 2, metric=None) -> MeshGraph:
    """Connect grid nodes along every primitive index offset of Chebyshev length <= k.

    With ``metric`` given, the stencil is widened row by row so that it stays
    about as rich in *physical* directions as the plain stencil is on an
    isotropic grid: where one u-step is ``a`` times longer than one v-step,
    offsets up to ``ceil(k a)`` in v are added (and symmetrically in u).  This
    matters near the poles of the polar chart, where v-steps shrink to nothing.
    """
    stencil_directions(k)  # validates k
    nu, nv = chart.nu, chart.nv
    u, v = chart.u_axis, chart.v_axis
    if metric is None:
        di_max = np.full(nu, k)
        dj_max = np.full(nu, k)
    else:
        ratio = _row_aspect(chart, metric)
        di_max = np.maximum(k, np.ceil(k / ratio - 1e-9)).astype(np.int64)
        dj_max = np.maximum(k, np.ceil(k * ratio - 1e-9)).astype(np.int64)
    di_cap = (nu - 1) // 2 if chart.periodic[0] else nu - 1
    dj_cap = (nv - 1) // 2
    di_max = np.minimum(di_max, di_cap)
    dj_max = np.minimum(dj_max, dj_cap)
    ii, jj = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    srcs, dsts, starts, disps = [], [], [], []
    for di in range(0, int(di_max.max()) + 1):
        for dj in range(-int(dj_max.max()), int(dj_max.max()) + 1):
            if (di == 0 and dj <= 0) or gcd(di, abs(dj)) != 1:
                continue
            ti = ii + di
            du_shift = np.zeros(ti.shape)
            if chart.periodic[0]:
                du_shift = np.where(ti >= nu, TWO_PI, 0.0)
                ti = ti % nu
                ok = np.ones(ti.shape, dtype=bool)
            else:
                ok = ti < nu
            tic = np.where(ok, ti, 0)
            # symmetric admissibility in the two end rows
            ok &= (di <= np.minimum(di_max[ii], di_max[tic])) & \
                (abs(dj) <= np.maximum(dj_max[ii], dj_max[tic]))
            if not np.any(ok):
                continue
            tj = jj + dj
            dv_shift = np.where(tj >= nv, TWO_PI, np.where(tj < 0, -TWO_PI, 0.0))
            tj = tj % nv
            a_i, a_j, b_i, b_j = ii[ok], jj[ok], ti[ok], tj[ok]
            srcs.append(a_i * nv + a_j)
            dsts.append(b_i * nv + b_j)
            starts.append(np.column_stack([u[a_i], v[a_j]]))
            disps.append(np.column_stack([u[b_i] - u[a_i] + du_shift[ok],
                                          v[b_j] - v[a_j] + dv_shift[ok]]))
    if chart.kind == "sphere":
        north, south = chart.poles
        ring = np.arange(nv)
        srcs += [np.full(nv, north), np.full(nv, south)]
        dsts += [ring, (nu - 1) * nv + ring]
        starts += [np.column_stack([np.zeros(nv), v]), np.column_stack([np.full(nv, math.pi), v])]
        disps += [np.column_stack([np.full(nv, u[0]), np.zeros(nv)]),
                  np.column_stack([np.full(nv, u[-1] - math.pi), np.zeros(nv)])]
    src = np.concatenate(srcs).astype(np.int64)
    dst = np.concatenate(dsts).astype(np.int64)
    start = np.concatenate(starts)
    disp = np.concatenate(disps)
    lo = np.minimum(src, dst)
    hi = np.maximum(src, dst)
    keys = lo * chart.n_nodes + hi
    if len(np.unique(keys)) != len(keys) or np.any(src == dst):
        raise RuntimeError("duplicate or self edges in stencil graph; resolution too small for stencil")
    if np.any(np.abs(disp).sum(axis=1) == 0):
        raise RuntimeError("zero-displacement edge")
    graph = MeshGraph(chart=chart, k=k, src=src, dst=dst, start=start, disp=disp,
                      widened=metric is not None)
    if not graph.is_connected():
        raise RuntimeError("stencil graph is disconnected")
    return graph


# -- binary cache -------------------------------------------------------------

def content_hash(descriptor: dict) -> str:
    blob = json.dumps(descriptor, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:24]


def atomic_savez(path: Path, **arrays) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _graph_descriptor(chart: ParamChart, k: int, metric=None) -> dict:
    return dict(chart.descriptor(), stencil=k,
                widen=None if metric is None else metric.descriptor())


def save_graph(graph: MeshGraph, cache_dir, metric=None) -> Path:
    """Write chart and graph to ``cache_dir`` under a content-hash name.  ``metric`` is
    the field the stencil was widened for, if any; it is part of the key."""
    desc = _graph_descriptor(graph.chart, graph.k, metric)
    path = Path(cache_dir) / f"mesh-{content_hash(desc)}.npz"
    c = graph.chart
    atomic_savez(path, descriptor=np.array(json.dumps(desc, sort_keys=True)),
                 u_axis=c.u_axis, v_axis=c.v_axis, nodes=c.nodes, areas=c.areas,
                 pole_ring_u=np.array(c.pole_ring_u),
                 src=graph.src, dst=graph.dst, start=graph.start, disp=graph.disp)
    return path


def load_graph(path) -> MeshGraph:
    with np.load(path) as z:
        desc = json.loads(str(z["descriptor"]))
        bands = tuple(Band(**b) for b in desc["refinement"])
        chart = ParamChart(kind=desc["kind"], resolution=tuple(desc["resolution"]),
                           u_axis=z["u_axis"], v_axis=z["v_axis"], nodes=z["nodes"],
                           areas=z["areas"], periodic=(desc["kind"] == "torus", True),
                           refinement=bands, pole_ring_u=tuple(z["pole_ring_u"].tolist()))
        return MeshGraph(chart=chart, k=desc["stencil"], src=z["src"], dst=z["dst"],
                         start=z["start"], disp=z["disp"], widened=desc.get("widen") is not None)


def cached_graph(kind: str, resolution, refinement=(), k: int = 2, cache_dir=None,
                 metric=None) -> MeshGraph:
    """Build a chart and graph, reusing a cache file when ``cache_dir`` is given."""
    chart = build_chart(kind, resolution, refinement)
    if cache_dir is None:
        return build_graph(chart, k, metric)
    path = Path(cache_dir) / f"mesh-{content_hash(_graph_descriptor(chart, k, metric))}.npz"
    if path.exists():
        return load_graph(path)
    graph = build_graph(chart, k, metric)
    save_graph(graph, cache_dir, metric)
    return graph
