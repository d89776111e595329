"""Good-set selection on sampled pairs.

Pairs of landmarks carry product weights.  A pair set of weight above
``(1 - eps)`` of the total is chosen by keeping the smallest distance gaps;
slice volumes then pick out the landmarks that are well behaved against
almost every partner.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvariantViolation
from .geodesy import node_volumes
from .mesh import ParamChart
from .metrics import MetricField

LEMMA_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PairSample:
    """All unordered landmark pairs with product weights.

    ``pairs[k] = (a, b)`` with ``a < b`` indexes into ``landmarks``.  Each unordered
    pair stands for both orders, so its weight counts twice in totals.  Diagonal
    pairs have zero gap and are always retained.
    """

    landmarks: np.ndarray
    weights: np.ndarray
    pairs: np.ndarray
    pair_weights: np.ndarray
    seed: int = 0
    symmetric: bool = True

    @property
    def diag_weight(self) -> float:
        return float(np.sum(self.weights ** 2))

    @property
    def total_weight(self) -> float:
        return self.diag_weight + 2.0 * float(self.pair_weights.sum())

    @property
    def total_volume(self) -> float:
        return float(self.weights.sum())

    def pair_values(self, square: np.ndarray) -> np.ndarray:
        """Gather ``square[a, b]`` for every sampled pair."""
        return square[self.pairs[:, 0], self.pairs[:, 1]]


def voronoi_cells(d0_rows: np.ndarray) -> np.ndarray:
    """Index of the nearest landmark (by row) for every node; ties go to the lower index."""
    return np.argmin(d0_rows, axis=0)


def sample_pairs(chart: ParamChart, g_0: MetricField, landmarks=None, count: int | None = None,
                 seed: int = 0, cells=None) -> PairSample:
    """Weighted pair sample over a landmark set.

    Either give ``landmarks`` (node ids) or ``count`` landmarks are drawn at random
    with ``seed``.  Landmark weights are the g_0 volumes of their cells: the
    Voronoi cells in ``cells`` (landmark index per node) if given, else the
    landmark's own dual cell.
    """
    vols = node_volumes(chart, g_0)
    if landmarks is None:
        if count is None:
            raise ValueError("give landmarks or count")
        n_land = int(count)
        if n_land * (n_land - 1) // 2 < 100:
            raise ValueError("random sampling needs at least 100 pairs (count >= 15)")
        rng = np.random.default_rng(seed)
        landmarks = np.sort(rng.choice(chart.n_nodes, size=n_land, replace=False))
    landmarks = np.asarray(landmarks, dtype=np.int64)
    if len(landmarks) < 2:
        raise ValueError("need at least two landmarks")
    if cells is not None:
        w = np.bincount(np.asarray(cells), weights=vols, minlength=len(landmarks))
    else:
        w = vols[landmarks]
    a, b = np.triu_indices(len(landmarks), k=1)
    pairs = np.column_stack([a, b])
    return PairSample(landmarks=landmarks, weights=w, pairs=pairs, pair_weights=w[a] * w[b], seed=seed)


@dataclass(frozen=True, eq=False)
class PairSelection:
    mask: np.ndarray
    delta: float
    cutoff_index: int
    retained_weight: float


def select_S_epsilon(d_j, d_0, pairs: PairSample, eps: float) -> PairSelection:
    """Keep the smallest-gap pairs until their weight first exceeds ``(1 - eps)`` of
    the total; every pair tied with the last one kept is kept too."""
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    gaps = np.abs(np.asarray(d_j, dtype=float) - np.asarray(d_0, dtype=float))
    target = (1.0 - eps) * pairs.total_weight
    order = np.argsort(gaps, kind="stable")
    cum = pairs.diag_weight + 2.0 * np.cumsum(pairs.pair_weights[order])
    mask = np.zeros(len(gaps), dtype=bool)
    if pairs.diag_weight > target:
        return PairSelection(mask=mask, delta=0.0, cutoff_index=-1, retained_weight=pairs.diag_weight)
    m = int(np.searchsorted(cum, target, side="right"))
    m = min(m, len(order) - 1)
    cutoff = gaps[order[m]]
    mask = gaps <= cutoff
    retained = pairs.diag_weight + 2.0 * float(pairs.pair_weights[mask].sum())
    # keeping every pair is the whole product; only rounding can put it under target
    if not (retained > target or mask.all()):
        raise InvariantViolation("retained pair weight does not exceed (1 - eps) of the total")
    delta = float(gaps[mask].max()) if mask.any() else 0.0
    return PairSelection(mask=mask, delta=delta, cutoff_index=m, retained_weight=retained)


def retained_matrix(mask: np.ndarray, pairs: PairSample) -> np.ndarray:
    """Symmetric boolean landmark-by-landmark matrix of retained pairs, diagonal included."""
    n = len(pairs.landmarks)
    A = np.eye(n, dtype=bool)
    sel = pairs.pairs[mask]
    A[sel[:, 0], sel[:, 1]] = True
    A[sel[:, 1], sel[:, 0]] = True
    return A


def slice_volumes(mask: np.ndarray, pairs: PairSample) -> np.ndarray:
    """Weight of the partners retained with each landmark, the landmark itself included."""
    A = retained_matrix(mask, pairs)
    sv = A.astype(float) @ pairs.weights
    # averaged form: sum_p w_p * slice_p equals the retained product weight
    total = pairs.total_weight
    avg = float(pairs.weights @ sv)
    retained = pairs.diag_weight + 2.0 * float(pairs.pair_weights[mask].sum())
    if abs(avg - retained) > 1e-9 * total:
        raise InvariantViolation("slice volumes do not integrate to the retained weight")
    return sv


@dataclass(eq=False)
class GoodSetSelection:
    eps: float
    kappa: float
    delta: float
    pair_mask: np.ndarray
    slice_volumes: np.ndarray
    W_landmarks: np.ndarray
    vol0_total: float
    vol0_W: float
    W_nodes: np.ndarray | None = None
    volj_outside: float | None = None
    volj_total: float | None = None
    flags: list = field(default_factory=list)
    landmarks: np.ndarray | None = None

    def lemma_checks(self) -> dict:
        out = {"vol0_W_lower_bound": (self.kappa - 1) / self.kappa * self.vol0_total,
               "vol0_W": self.vol0_W,
               "vol0_W_ok": self.vol0_W > (self.kappa - 1) / self.kappa * self.vol0_total}
        if self.volj_outside is not None:
            cap = self.vol0_total / self.kappa + abs(self.volj_total - self.vol0_total)
            out.update(volj_outside=self.volj_outside, volj_outside_cap=cap,
                       volj_outside_ok=self.volj_outside <= cap + LEMMA_TOL * max(1.0, cap))
        return out

    def to_dict(self) -> dict:
        d = {
            "eps": self.eps, "kappa": self.kappa, "delta": self.delta,
            "landmarks": None if self.landmarks is None else self.landmarks.tolist(),
            "retained_pairs": np.flatnonzero(self.pair_mask).tolist(),
            "slice_volumes": self.slice_volumes.tolist(),
            "W_landmarks": np.flatnonzero(self.W_landmarks).tolist(),
            "W_nodes": None if self.W_nodes is None else np.flatnonzero(self.W_nodes).tolist(),
            "vol0_total": self.vol0_total, "vol0_W": self.vol0_W,
            "volj_total": self.volj_total, "volj_outside": self.volj_outside,
            "flags": list(self.flags), "lemmas": self.lemma_checks(),
        }
        return d

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1, default=_json_default)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _json_default(o):
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    raise TypeError(type(o))


def select_W(slice_vols: np.ndarray, kappa: float, eps: float, pairs: PairSample,
             pair_selection: PairSelection | None = None, cells=None,
             node_vol0=None, node_volj=None) -> GoodSetSelection:
    """Landmarks whose slice volume exceeds ``(1 - kappa eps)`` of the total.

    With ``cells`` and per-node volumes given, the selection is extended to nodes
    through the landmark cells and the g_j volume outside it is measured.
    """
    if not kappa > 1:
        raise ValueError("kappa must exceed 1")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if kappa * eps >= 1:
        raise ValueError(f"kappa * eps = {kappa * eps:.4g} must be below 1")
    flags = []
    if kappa * eps >= 0.5:
        flags.append("kappa*eps >= 1/2: slices of two good points may be disjoint")
    total = pairs.total_volume
    W = slice_vols > (1.0 - kappa * eps) * total
    vol0_W = float(pairs.weights[W].sum())
    sel = GoodSetSelection(eps=eps, kappa=kappa,
                           delta=pair_selection.delta if pair_selection else float("nan"),
                           pair_mask=pair_selection.mask if pair_selection else np.zeros(0, bool),
                           slice_volumes=slice_vols, W_landmarks=W, vol0_total=total,
                           vol0_W=vol0_W, flags=flags, landmarks=pairs.landmarks)
    if not vol0_W > (kappa - 1) / kappa * total:
        raise InvariantViolation(f"good set too small: {vol0_W} <= {(kappa - 1) / kappa * total}")
    if cells is not None:
        cells = np.asarray(cells)
        sel.W_nodes = W[cells]
        if node_volj is not None:
            sel.volj_total = float(np.sum(node_volj))
            sel.volj_outside = float(np.sum(node_volj[~sel.W_nodes]))
            checks = sel.lemma_checks()
            if not checks["volj_outside_ok"]:
                raise InvariantViolation("g_j volume outside the good set exceeds its bound")
    return sel


def ball_volumes(d0_rows: np.ndarray, node_vol0: np.ndarray, radius: float) -> np.ndarray:
    return (d0_rows <= radius).astype(float) @ node_vol0


def epsilon_from_lambda(node_vol0: np.ndarray, d0_rows: np.ndarray, lambda_prime: float, kappa: float) -> float:
    """``min_x Vol_0(B(x, lambda')) / (2 kappa Vol_0(M))`` over the landmark rows."""
    if not lambda_prime > 0:
        raise ValueError("lambda' must be positive")
    if not kappa > 1:
        raise ValueError("kappa must exceed 1")
    total = float(node_vol0.sum())
    return float(ball_volumes(d0_rows, node_vol0, lambda_prime).min() / (2.0 * kappa * total))


def sphere_cap_epsilon(lambda_prime: float, kappa: float) -> float:
    """Closed-form value on the unit sphere: cap fraction ``(1 - cos lambda') / 2`` over ``2 kappa``."""
    return (1.0 - math.cos(min(lambda_prime, math.pi))) / 2.0 / (2.0 * kappa)


def verify_good_set(selection: GoodSetSelection, dj_square: np.ndarray, d0_square: np.ndarray,
                    lambda_prime: float, pairs: PairSample, mesh_slack: float = 0.0) -> dict:
    """Check the slice-intersection and uniform-gap bounds on all pairs of good landmarks.

    ``mesh_slack`` is added to ``2 lambda' + 2 delta`` (callers pass ``2 tau_mesh D``).
    """
    k_eps = selection.kappa * selection.eps
    if k_eps >= 0.5:
        raise ValueError("verification needs kappa * eps < 1/2")
    A = retained_matrix(selection.pair_mask, pairs).astype(float)
    inter = (A * pairs.weights) @ A.T
    W = np.flatnonzero(selection.W_landmarks)
    sub_inter = inter[np.ix_(W, W)]
    bound_inter = (1.0 - 2.0 * k_eps) * pairs.total_volume
    inter_viol = int(np.sum(sub_inter <= bound_inter))
    gap = np.abs(dj_square - d0_square)[np.ix_(W, W)]
    bound_gap = 2.0 * lambda_prime + 2.0 * selection.delta
    worst = float(gap.max()) if gap.size else 0.0
    viol = int(np.sum(gap >= bound_gap + mesh_slack))
    return {
        "n_good": int(len(W)),
        "intersection_bound": bound_inter,
        "intersection_min": float(sub_inter.min()) if sub_inter.size else None,
        "intersection_violations": inter_viol,
        "gap_bound": bound_gap,
        "mesh_slack": mesh_slack,
        "gap_worst": worst,
        "gap_violations": viol,
        "gap_violations_without_slack": int(np.sum(gap >= bound_gap)),
        "passed": inter_viol == 0 and viol == 0,
    }
