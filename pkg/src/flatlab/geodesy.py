"""Edge lengths, graph geodesic distances, diameters and volumes."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.sparse.csgraph import dijkstra

from .mesh import MeshGraph, ParamChart, atomic_savez, build_chart, build_graph, content_hash
from .metrics import MetricField, RoundSphere, sphere_distance

QUAD_ORDERS = (1, 2, 4)
_CHUNK = 200_000


def gauss_rule(q: int) -> tuple[np.ndarray, np.ndarray]:
    """``q``-point Gauss-Legendre nodes and weights on ``[0, 1]``."""
    if q not in QUAD_ORDERS:
        raise ValueError(f"quadrature order must be one of {QUAD_ORDERS}, got {q}")
    x, w = leggauss(q)
    return 0.5 * (x + 1.0), 0.5 * w


def segment_lengths(field_: MetricField, start: np.ndarray, disp: np.ndarray, q: int = 2) -> np.ndarray:
    """Length of each straight parameter segment ``start + t * disp`` under ``field_``."""
    t, w = gauss_rule(q)
    out = np.zeros(len(start))
    for lo in range(0, len(start), _CHUNK):
        s = start[lo:lo + _CHUNK]
        d = disp[lo:lo + _CHUNK]
        acc = np.zeros(len(s))
        for tk, wk in zip(t, w):
            g = field_.eval(s + tk * d)
            quad = np.einsum("ni,nij,nj->n", d, g, d)
            if not np.all(np.isfinite(quad)):
                bad = int(np.flatnonzero(~np.isfinite(quad))[0])
                raise FloatingPointError(f"non-finite metric at point {(s[bad] + tk * d[bad]).tolist()}")
            acc += wk * np.sqrt(np.clip(quad, 0.0, None))
        out[lo:lo + _CHUNK] = acc
    return out


def metric_hash(field_: MetricField) -> str:
    return content_hash(field_.descriptor())


@dataclass(frozen=True, eq=False)
class EdgeLengths:
    graph: MeshGraph
    values: np.ndarray
    metric_id: str
    q: int

    def adjacency(self):
        return self.graph.adjacency(self.values)


def edge_lengths(graph: MeshGraph, field_: MetricField, q: int = 2) -> EdgeLengths:
    vals = segment_lengths(field_, graph.start, graph.disp, q)
    if not np.all(vals > 0):
        raise RuntimeError("non-positive edge length")
    return EdgeLengths(graph=graph, values=vals, metric_id=metric_hash(field_), q=q)


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    """Rows of graph distances: ``values[a, b]`` is the distance from ``sources[a]`` to ``targets[b]``."""

    sources: np.ndarray
    targets: np.ndarray
    values: np.ndarray
    metric_id: str = ""
    tau_mesh: float = 0.0

    def restrict(self, targets) -> "DistanceMatrix":
        targets = np.asarray(targets)
        return DistanceMatrix(self.sources, targets, self.values[:, targets],
                              self.metric_id, self.tau_mesh)

    def square(self) -> np.ndarray:
        """Distances among the sources, assuming targets cover every node."""
        return self.values[:, self.sources]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["source", "target", "distance"])
            for a, s in enumerate(self.sources):
                for b, t in enumerate(self.targets):
                    w.writerow([int(s), int(t), repr(float(self.values[a, b]))])

    def save(self, path) -> None:
        desc = {"metric_id": self.metric_id, "tau_mesh": self.tau_mesh}
        atomic_savez(Path(path), descriptor=np.array(json.dumps(desc)), sources=self.sources,
                     targets=self.targets, values=self.values)

    @classmethod
    def load(cls, path) -> "DistanceMatrix":
        with np.load(path) as z:
            desc = json.loads(str(z["descriptor"]))
            return cls(z["sources"], z["targets"], z["values"], desc["metric_id"], desc["tau_mesh"])


def distances(graph: MeshGraph, lengths: EdgeLengths, sources, threads: int = 1,
              cache_dir=None) -> DistanceMatrix:
    """Exact shortest-path distances on the weighted graph from each source to every node."""
    sources = np.atleast_1d(np.asarray(sources, dtype=np.int64))
    n = graph.chart.n_nodes
    if np.any(sources < 0) or np.any(sources >= n):
        raise ValueError("source id outside graph")
    path = None
    if cache_dir is not None:
        edges = hashlib.sha256(graph.src.tobytes() + graph.dst.tobytes()).hexdigest()[:16]
        key = content_hash({"mesh": dict(graph.chart.descriptor(), stencil=graph.k, edges=edges),
                            "metric": lengths.metric_id, "q": lengths.q,
                            "sources": sources.tolist()})
        path = Path(cache_dir) / f"dist-{key}.npz"
        if path.exists():
            return DistanceMatrix.load(path)
    adj = lengths.adjacency()
    if threads > 1 and len(sources) > 1:
        chunks = np.array_split(sources, threads)
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda c: dijkstra(adj, directed=True, indices=c), chunks))
        vals = np.vstack(parts)
    else:
        vals = dijkstra(adj, directed=True, indices=sources)
    vals = np.atleast_2d(vals)
    if not np.all(np.isfinite(vals)):
        raise RuntimeError("graph is disconnected: unreachable nodes")
    dm = DistanceMatrix(sources=sources, targets=np.arange(n), values=vals, metric_id=lengths.metric_id)
    if path is not None:
        dm.save(path)
    return dm


@dataclass(frozen=True, eq=False)
class DiameterEstimate:
    """Largest eccentricity over farthest-point landmarks.  This is a lower bound on
    the graph diameter; graph distances themselves overestimate continuum ones by
    at most about ``tau_mesh`` in relative terms."""

    value: float
    landmarks: np.ndarray
    rows: DistanceMatrix = field(repr=False)


def farthest_point_landmarks(graph: MeshGraph, lengths: EdgeLengths, count: int,
                             start: int = 0) -> DistanceMatrix:
    """Greedy farthest-point sampling; returns distance rows from the chosen landmarks."""
    adj = lengths.adjacency()
    n = graph.chart.n_nodes
    count = min(count, n)
    chosen = [int(start)]
    rows = [dijkstra(adj, directed=True, indices=chosen[0])]
    nearest = rows[0].copy()
    while len(chosen) < count:
        nxt = int(np.argmax(nearest))
        if nearest[nxt] == 0:
            break
        chosen.append(nxt)
        row = dijkstra(adj, directed=True, indices=nxt)
        rows.append(row)
        np.minimum(nearest, row, out=nearest)
    return DistanceMatrix(sources=np.array(chosen), targets=np.arange(n), values=np.vstack(rows),
                          metric_id=lengths.metric_id)


def diameter(graph: MeshGraph, lengths: EdgeLengths, landmark_count: int, start: int = 0) -> DiameterEstimate:
    if landmark_count < 2:
        raise ValueError("diameter needs at least 2 landmarks")
    rows = farthest_point_landmarks(graph, lengths, landmark_count, start)
    return DiameterEstimate(value=float(rows.values.max()), landmarks=rows.sources, rows=rows)


def node_volumes(chart: ParamChart, field_: MetricField) -> np.ndarray:
    """Per-node Riemannian volume: ``sqrt(det g)`` times the dual-cell parameter area."""
    g = field_.eval(chart.nodes)
    det = g[:, 0, 0] * g[:, 1, 1] - g[:, 0, 1] * g[:, 1, 0]
    return np.sqrt(np.clip(det, 0.0, None)) * chart.areas


def volume(chart: ParamChart, field_: MetricField, mask=None) -> float:
    vols = node_volumes(chart, field_)
    if mask is None:
        return float(vols.sum())
    mask = np.asarray(mask)
    if mask.dtype == bool:
        return float(vols[mask].sum())
    return float(vols[mask.astype(np.int64)].sum())


def curve_length(field_: MetricField, polyline, q: int = 4, subdivide: int = 1) -> float:
    """Length of a parameter polyline, each segment split into ``subdivide`` pieces."""
    pts = np.asarray(polyline, dtype=float).reshape(-1, 2)
    if len(pts) < 2:
        return 0.0
    if subdivide > 1:
        t = np.linspace(0.0, 1.0, subdivide + 1)
        segs = [a + t[:, None] * (b - a) for a, b in zip(pts[:-1], pts[1:])]
        pts = np.vstack([s[:-1] for s in segs] + [pts[-1:]])
    return float(segment_lengths(field_, pts[:-1], pts[1:] - pts[:-1], q).sum())


# -- mesh error calibration ---------------------------------------------------

def sphere_oracle_error(resolution: int, k: int = 2, q: int = 2, landmark_points=None) -> float:
    """Largest relative error of graph distances against great-circle distances on
    the unit sphere, over all pairs of ``landmark_points`` (polar-chart coordinates)."""
    chart = build_chart("sphere", resolution)
    graph = build_graph(chart, k, metric=RoundSphere())
    lengths = edge_lengths(graph, RoundSphere(), q)
    if landmark_points is None:
        landmark_points = calibration_points()
    ids = np.array([chart.nearest_node(p) for p in landmark_points])
    rows = distances(graph, lengths, ids).values[:, ids]
    pts = chart.nodes[ids]
    exact = sphere_distance(np.repeat(pts, len(pts), 0), np.tile(pts, (len(pts), 1))).reshape(len(pts), -1)
    off = exact > 1e-9
    return float(np.max(np.abs(rows[off] - exact[off]) / exact[off]))


@lru_cache(maxsize=None)
def _calibration_points(count: int) -> np.ndarray:
    chart = build_chart("sphere", 32)
    graph = build_graph(chart, 2, metric=RoundSphere())
    rows = farthest_point_landmarks(graph, edge_lengths(graph, RoundSphere()), count,
                                    start=int(chart.poles[0]))
    return chart.nodes[rows.sources]


def calibration_points(count: int = 32) -> np.ndarray:
    """Farthest-point landmarks of the resolution-32 sphere chart, starting at the
    north pole.  They are nodes of every uniform chart whose resolution is a
    multiple of 32, so the same points are compared at every resolution."""
    return _calibration_points(count).copy()


@lru_cache(maxsize=None)
def tau_mesh(resolution: int, k: int = 2, q: int = 2) -> float:
    """Calibrated relative mesh error for a uniform chart of this resolution and stencil."""
    return sphere_oracle_error(resolution, k, q)
