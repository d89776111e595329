"""Volume versus leaf-length excess on tubes foliated by minimizing g_0-geodesics.

A tube is a coordinate rectangle swept by straight parameter lines that are
g_0-minimizing by symmetry: meridian arcs on the round sphere, and r-lines or
theta-lines on the flat warped torus.  For ``g_j >= g_0`` the volume gained by
the tube bounds the averaged length gained by its leaves:

    Vol_j(T) - Vol_0(T) >= A h0 * integral over N of (L_j - L_0)

Leaf lengths and tube volumes are computed with one shared tensor Gauss rule,
so the inequality holds leaf by leaf at the discrete level, not only in the
limit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import HypothesisFailure
from .metrics import DOMINATION_TOL, MetricField, relative_eigenvalues

TUBE_FAMILIES = ("meridian", "torus-r", "torus-theta")
ROUNDOFF = 1e-12


def composite_gauss(lo: float, hi: float, cells: int, q: int = 4) -> tuple[np.ndarray, np.ndarray]:
    x, w = leggauss(q)
    edges = np.linspace(lo, hi, cells + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


@dataclass(frozen=True, eq=False)
class TubeSpec:
    """Leaves are the lines ``across = leaf_coords[i]``, parametrized by ``along``.

    ``leaf_weights`` are the transversal measure of each leaf (parameter weight
    times ``scale``, the g_0 density of the transversal).  ``A`` is the smallest
    transversal Jacobian relative to that density.
    """

    family: str
    along: tuple[float, float]
    across: tuple[float, float]
    along_nodes: np.ndarray
    along_weights: np.ndarray
    leaf_coords: np.ndarray
    leaf_weights: np.ndarray
    scale: float
    A: float
    h0: float = 1.0
    q: int = 4

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_coords)

    def points(self) -> np.ndarray:
        """All quadrature points in chart coordinates, shape ``(n_leaves, n_along, 2)``."""
        t = np.broadcast_to(self.along_nodes[None, :], (self.n_leaves, len(self.along_nodes)))
        s = np.broadcast_to(self.leaf_coords[:, None], t.shape)
        if self.family == "torus-theta":
            return np.stack([s, t], axis=-1)
        return np.stack([t, s], axis=-1)

    @property
    def along_axis(self) -> int:
        return 1 if self.family == "torus-theta" else 0

    def leaf_endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.along
        p = np.full((self.n_leaves, 2), 0.0)
        q = np.full((self.n_leaves, 2), 0.0)
        ax, tx = self.along_axis, 1 - self.along_axis
        p[:, ax], q[:, ax] = a, b
        p[:, tx] = q[:, tx] = self.leaf_coords
        return p, q


def build_symmetric_tube(chart_kind: str, family: str, along, across, max_cell: float = 0.05,
                         q: int = 4, torus_width: float = 5.0) -> TubeSpec:
    """Tube swept by ``family`` leaves over the rectangle ``along x across``.

    ``max_cell`` bounds the composite-rule cell size on both axes; pick it below
    the smallest feature of the metrics to be checked.
    """
    if family not in TUBE_FAMILIES:
        raise ValueError(f"unsupported leaf family {family!r}; expected one of {TUBE_FAMILIES}")
    a, b = map(float, along)
    c, d = map(float, across)
    if not (b > a and d > c):
        raise ValueError("empty tube band")
    if not max_cell > 0:
        raise ValueError("max_cell must be positive")
    if family == "meridian":
        if chart_kind != "sphere":
            raise ValueError("meridian leaves live on the sphere chart")
        if not (0.0 < a and b < math.pi):
            raise ValueError("meridian arcs must stay off the poles so that A > 0")
        if d - c >= 2 * math.pi:
            raise ValueError("azimuthal band must be shorter than a full turn")
        scale = 1.0
        # transversal Jacobian sin r is smallest at an end of [a, b] or largest inside
        A = min(math.sin(a), math.sin(b))
    else:
        if chart_kind != "torus":
            raise ValueError("r- and theta-lines live on the torus chart")
        if b - a > math.pi:
            raise ValueError("torus leaves longer than pi are not minimizing")
        # dr^2 + w^2 dtheta^2: r-lines have transversal density w, theta-lines density 1
        scale = torus_width if family == "torus-r" else 1.0
        A = 1.0
    n_along = max(1, math.ceil((b - a) / max_cell))
    n_across = max(1, math.ceil((d - c) / max_cell))
    t, wt = composite_gauss(a, b, n_along, q)
    s, ws = composite_gauss(c, d, n_across, q)
    return TubeSpec(family=family, along=(a, b), across=(c, d), along_nodes=t, along_weights=wt,
                    leaf_coords=s, leaf_weights=ws * scale, scale=scale, A=A, q=q)


def _sqrt_det(g: np.ndarray) -> np.ndarray:
    return np.sqrt(np.clip(g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] * g[..., 1, 0], 0.0, None))


def tube_check(g_j: MetricField, g_0: MetricField, tube: TubeSpec, refine_check: bool = True) -> dict:
    """Volumes, per-leaf lengths and the averaged chain on one tube.

    The quadrature slack is the change of the chain's two sides when every cell
    is halved; violations are counted beyond it (plus round-off).
    """
    out = _chain(g_j, g_0, tube)
    slack = 0.0
    if refine_check:
        fine = _halved(tube)
        f = _chain(g_j, g_0, fine)
        slack = abs(f["vol_gain"] - out["vol_gain"]) + abs(f["rhs"] - out["rhs"])
        out["fine"] = {"vol_gain": f["vol_gain"], "rhs": f["rhs"], "residual": f["residual"]}
    tol = slack + ROUNDOFF * max(1.0, out["vol_0"])
    out["quadrature_slack"] = slack
    out["chain_violations"] = int(out["residual"] < -tol)
    return out


def _halved(tube: TubeSpec) -> TubeSpec:
    t, wt = composite_gauss(*tube.along, 2 * len(tube.along_nodes) // tube.q, tube.q)
    s, ws = composite_gauss(*tube.across, 2 * len(tube.leaf_coords) // tube.q, tube.q)
    return replace(tube, along_nodes=t, along_weights=wt, leaf_coords=s, leaf_weights=ws * tube.scale)


def _chain(g_j: MetricField, g_0: MetricField, tube: TubeSpec) -> dict:
    pts = tube.points()
    shape = pts.shape[:2]
    flat = pts.reshape(-1, 2)
    gj = g_j.eval(flat)
    g0 = g_0.eval(flat)
    lo, hi = relative_eigenvalues(g0, gj)
    bad = lo < 1.0 - DOMINATION_TOL * np.maximum(1.0, hi)
    if bad.any():
        raise HypothesisFailure(f"g_j does not dominate g_0 at {int(bad.sum())} tube points",
                                {"first": flat[bad][:5].tolist()})
    ax = tube.along_axis
    speed_j = np.sqrt(gj[:, ax, ax]).reshape(shape)
    speed_0 = np.sqrt(g0[:, ax, ax]).reshape(shape)
    dens_j = _sqrt_det(gj).reshape(shape)
    dens_0 = _sqrt_det(g0).reshape(shape)
    wa = tube.along_weights
    wl = tube.leaf_weights / tube.scale           # parameter weights across
    L_j = speed_j @ wa
    L_0 = speed_0 @ wa
    excess = L_j - L_0
    vol_j = float(wl @ (dens_j @ wa))
    vol_0 = float(wl @ (dens_0 @ wa))
    leaf_gain = (dens_j - dens_0) @ wa            # volume gained per unit parameter width
    leaf_rhs = tube.A * tube.h0 * tube.scale * excess
    measure = float(tube.leaf_weights.sum())
    rhs = float(tube.A * tube.h0 * (tube.leaf_weights @ excess))
    worst = int(np.argmax(excess))
    return {
        "family": tube.family, "along": list(tube.along), "across": list(tube.across),
        "A": tube.A, "h0": tube.h0, "n_leaves": tube.n_leaves,
        "vol_j": vol_j, "vol_0": vol_0, "vol_gain": vol_j - vol_0,
        "rhs": rhs, "residual": (vol_j - vol_0) - rhs,
        "mean_excess": float(tube.leaf_weights @ excess) / measure,
        "max_excess": float(excess[worst]), "max_excess_leaf": float(tube.leaf_coords[worst]),
        "leaf_violations": int(np.sum(leaf_gain < leaf_rhs - ROUNDOFF * np.maximum(1.0, leaf_gain))),
        "leaves": [{"leaf": i, "coord": float(c), "L_0": float(a), "L_j": float(b), "excess": float(b - a)}
                   for i, (c, a, b) in enumerate(zip(tube.leaf_coords, L_0, L_j))],
    }


def leaf_ordering(report: dict, dj_endpoints: np.ndarray, d0_endpoints: np.ndarray,
                  mesh_slack: float) -> dict:
    """Check ``L_j >= d_j >= d_0 = L_0`` per leaf against graph distances, each step
    allowed ``mesh_slack`` relative error (graph distances overestimate)."""
    L_j = np.array([r["L_j"] for r in report["leaves"]])
    L_0 = np.array([r["L_0"] for r in report["leaves"]])
    s = mesh_slack
    v1 = int(np.sum(L_j < dj_endpoints * (1 - s) - ROUNDOFF))
    v2 = int(np.sum(dj_endpoints < d0_endpoints - 1e-12))
    v3 = int(np.sum(np.abs(d0_endpoints - L_0) > s * L_0 + ROUNDOFF))
    return {"L_j_below_d_j": v1, "d_j_below_d_0": v2, "d_0_off_L_0": v3,
            "violations": v1 + v2 + v3, "mesh_slack": s}


def report_json(report: dict) -> str:
    return json.dumps(report, indent=1)
