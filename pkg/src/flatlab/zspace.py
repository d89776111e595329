"""The glued space Z = M_0 + slab + M_j as a graph, and embedding checks.

Layout of node ids for a chart with ``N`` nodes and ``L`` slab levels:

* ``l * N + p`` is point ``p`` at slab height ``l * h / (L - 1)``; level 0 is the
  copy of ``M_0``.
* Points of ``M_j`` inside the good set ``W`` are the top-level slab nodes
  themselves.  Points outside ``W`` get fresh ids ``L * N + rank`` and touch
  the slab only through neighbours in ``W``.

Slab moves between adjacent levels along a mesh edge cost
``sqrt(len_j^2 + dz^2)``; together with vertical and horizontal moves this
lets slab paths approximate slanted straight lines of the product metric.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

from .geodesy import EdgeLengths
from .mesh import MeshGraph

EXACT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ZSpaceGraph:
    graph: MeshGraph
    W: np.ndarray
    h: float
    levels: int
    n_nodes: int
    adjacency: object
    mj_ids: np.ndarray
    flags: tuple = ()

    @property
    def dz(self) -> float:
        return self.h / (self.levels - 1)

    def base_id(self, p):
        return np.asarray(p)

    def slab_id(self, p, level: int):
        return level * self.graph.chart.n_nodes + np.asarray(p)

    def phi_0(self, p):
        return self.base_id(p)

    def phi_j(self, p):
        return self.mj_ids[np.asarray(p)]

    def height(self, level: int) -> float:
        return level * self.dz

    def components(self) -> int:
        n, _ = connected_components(self.adjacency, directed=False)
        return int(n)

    def outside_reaches_slab_only_through_W(self) -> bool:
        """Structural check: every edge leaving an outside-W ``M_j`` node ends at an
        ``M_j`` node (fresh id or a W top node)."""
        N = self.graph.chart.n_nodes
        fresh_lo = self.levels * N
        adj = self.adjacency.tocoo()
        from_fresh = adj.row >= fresh_lo
        targets = adj.col[from_fresh]
        top_lo = (self.levels - 1) * N
        ok_fresh = targets >= fresh_lo
        top = (targets >= top_lo) & (targets < fresh_lo)
        ok_top = np.zeros_like(top)
        ok_top[top] = self.W[targets[top] - top_lo]
        return bool(np.all(ok_fresh | ok_top))


def build_z(graph: MeshGraph, lengths_j: EdgeLengths, lengths_0: EdgeLengths, W, h: float,
            levels: int = 3) -> ZSpaceGraph:
    if not h > 0:
        raise ValueError("slab height must be positive")
    if levels < 2:
        raise ValueError("need at least two slab levels")
    N = graph.chart.n_nodes
    W = np.asarray(W, dtype=bool)
    if W.shape != (N,):
        raise ValueError("W must be a node mask")
    dz = h / (levels - 1)
    a, b = graph.src, graph.dst
    lj, l0 = lengths_j.values, lengths_0.values
    rows, cols, vals = [a], [b], [l0]                       # base copy of M_0
    for lev in range(1, levels):                            # horizontal slab edges
        rows.append(lev * N + a)
        cols.append(lev * N + b)
        vals.append(lj)
    allp = np.arange(N)
    slant = np.sqrt(lj * lj + dz * dz)
    for lev in range(levels - 1):
        rows += [lev * N + allp, lev * N + a, lev * N + b]
        cols += [(lev + 1) * N + allp, (lev + 1) * N + b, (lev + 1) * N + a]
        vals += [np.full(N, dz), slant, slant]
    top = (levels - 1) * N
    outside = np.flatnonzero(~W)
    mj_ids = top + allp
    mj_ids[outside] = levels * N + np.arange(len(outside))
    touch = ~(W[a] & W[b])                                  # M_j edges not already on the slab top
    rows.append(mj_ids[a[touch]])
    cols.append(mj_ids[b[touch]])
    vals.append(lj[touch])
    n_total = levels * N + len(outside)
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    v = np.concatenate(vals)
    adj = coo_matrix((np.concatenate([v, v]), (np.concatenate([r, c]), np.concatenate([c, r]))),
                     shape=(n_total, n_total)).tocsr()
    flags = ()
    if not W.any():
        flags = ("empty good set: M_j is detached from the slab",)
    return ZSpaceGraph(graph=graph, W=W, h=float(h), levels=levels, n_nodes=n_total,
                       adjacency=adj, mj_ids=mj_ids, flags=flags)


def z_distance(Z: ZSpaceGraph, sources, targets=None) -> np.ndarray:
    """Shortest-path distances in Z (``inf`` where unreachable)."""
    sources = np.atleast_1d(np.asarray(sources, dtype=np.int64))
    d = np.atleast_2d(dijkstra(Z.adjacency, directed=True, indices=sources))
    if targets is None:
        return d
    return d[:, np.asarray(targets, dtype=np.int64)]


def good_set_gap(W, sources, dj_rows: np.ndarray, d0_rows: np.ndarray) -> float:
    """Half the largest ``d_j - d_0`` over pairs of good points: the smallest ``delta``
    with ``d_j <= d_0 + 2 delta`` on those pairs."""
    W = np.asarray(W, dtype=bool)
    sources = np.asarray(sources)
    src_ok = W[sources]
    if not src_ok.any() or not W.any():
        return 0.0
    gap = dj_rows[np.ix_(src_ok, W)] - d0_rows[np.ix_(src_ok, W)]
    return max(0.0, 0.5 * float(gap.max()))


def h_required(delta: float, D: float) -> float:
    return math.sqrt(2.0 * delta * D + delta * delta)


def verify_embedding(Z: ZSpaceGraph, sample, dj_rows: np.ndarray, d0_rows: np.ndarray,
                     delta: float, D: float, tol: float = EXACT_TOL, slab_levels_checked=None) -> dict:
    """Certify that the base copy and the ``M_j`` copy sit in Z without shortcuts.

    ``dj_rows`` and ``d0_rows`` are graph distance rows from ``sample`` to every
    chart node.  The slack budget is numerical only (``tol``): with ``delta``
    certified on the good set and ``h`` at least the required height, the
    graph-level argument is exact.
    """
    sample = np.asarray(sample, dtype=np.int64)
    needed = h_required(delta, D)
    applicable = Z.h >= needed - 1e-12
    dj = dj_rows[:, sample]
    d0 = d0_rows[:, sample]

    zb = z_distance(Z, Z.phi_0(sample), Z.phi_0(sample))
    phi0_err = float(np.max(np.abs(zb - d0)))

    zj = z_distance(Z, Z.phi_j(sample), Z.phi_j(sample))
    short = dj - zj
    lower_viol = int(np.sum(short > tol))
    upper_viol = int(np.sum(zj - dj > tol))
    worst = np.unravel_index(np.argmax(short), short.shape)

    sandwich = {"checked": 0, "lower_violations": 0, "upper_violations": 0}
    levels = slab_levels_checked if slab_levels_checked is not None else range(Z.levels)
    for la in levels:
        srcs = Z.slab_id(sample, la)
        drows = z_distance(Z, srcs)
        for lb in levels:
            zd = drows[:, Z.slab_id(sample, lb)]
            dh = abs(Z.height(la) - Z.height(lb))
            lo = np.sqrt(d0 ** 2 + dh ** 2)
            hi = np.sqrt(dj ** 2 + dh ** 2)
            sandwich["checked"] += zd.size
            sandwich["lower_violations"] += int(np.sum(zd < lo - tol))
            # a graph path may climb then walk: allow one vertical traversal on top
            sandwich["upper_violations"] += int(np.sum(zd > hi + dh + tol))
    return {
        "h": Z.h, "levels": Z.levels, "delta": delta, "D": D, "h_required": needed,
        "hypothesis_holds": bool(applicable),
        "lemma_applicable": bool(applicable),
        "n_sample": int(len(sample)),
        "phi_0": {"max_abs_error": phi0_err, "exact": phi0_err <= tol},
        "phi_j": {
            "violations": lower_viol if applicable else None,
            "shortcuts_detected": lower_viol,
            "upper_violations": upper_viol,
            "worst_shortfall": float(short[worst]),
            "worst_pair": [int(sample[worst[0]]), int(sample[worst[1]])],
        },
        "sandwich": sandwich,
        "slack_budget": {"numerical": tol, "vertical_upper": "one slab traversal"},
        "components": Z.components(),
        "outside_W_attached_only_through_W": Z.outside_reaches_slab_only_through_W(),
        "flags": list(Z.flags),
    }


def report_json(report: dict) -> str:
    return json.dumps(report, indent=1, sort_keys=True)


def certify(graph: MeshGraph, lengths_j: EdgeLengths, lengths_0: EdgeLengths, W, levels: int = 3,
            h_scale: float = 1.0, sample_size: int = 60, seed: int = 0, max_nodes: int = 6000) -> dict:
    """Build Z at ``h_scale`` times the required height and certify the embeddings.

    ``delta`` is the exact half-gap over all pairs of good nodes, so every chart
    node is a Dijkstra source; charts above ``max_nodes`` are refused.  The
    sample always contains the pair that attains the gap.
    """
    N = graph.chart.n_nodes
    if N > max_nodes:
        raise ValueError(f"chart has {N} nodes; exact gap needs all pairs (limit {max_nodes})")
    W = np.asarray(W, dtype=bool)
    d0 = dijkstra(lengths_0.adjacency(), directed=True)
    dj = dijkstra(lengths_j.adjacency(), directed=True)
    D = float(max(d0.max(), dj.max()))
    delta = good_set_gap(W, np.arange(N), dj, d0)
    h_valid = h_required(delta, D)
    if h_valid == 0.0:
        h_valid = 1e-9 * max(D, 1.0)        # identical metrics on W: any positive slab works
    rng = np.random.default_rng(seed)
    sample = [rng.choice(N, size=min(sample_size, N), replace=False)]
    if W.any():
        gap = np.where(np.outer(W, W), dj - d0, -np.inf)
        sample.append(np.unravel_index(np.argmax(gap), gap.shape))
    if graph.chart.kind == "sphere":
        sample.append(graph.chart.poles)
    sample = np.unique(np.concatenate([np.ravel(s) for s in sample]))
    Z = build_z(graph, lengths_j, lengths_0, W, h_scale * h_valid, levels)
    rep = verify_embedding(Z, sample, dj[sample], d0[sample], delta, D,
                           slab_levels_checked=[0, levels - 1])
    rep["h_scale"] = h_scale
    rep["W_fraction_nodes"] = float(W.mean())
    return rep
