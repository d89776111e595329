"""Explicit upper bounds on the intrinsic flat distance between ``g_0`` and ``g_j``.

Three formulas are exposed as plain arithmetic (``h_min``, ``bound_basic``,
``hls_bound``).  ``bound_pipeline`` runs the whole chain on a chart: graph
distances, diameter and volumes, the good set, and the slab height, and
returns a ``FlatBoundReport`` that can recompute its own bound.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import HypothesisFailure, InfeasibleParameters
from .geodesy import edge_lengths, farthest_point_landmarks, node_volumes, tau_mesh
from .goodset import (GoodSetSelection, epsilon_from_lambda, sample_pairs, select_S_epsilon,
                      select_W, slice_volumes, voronoi_cells)
from .mesh import ParamChart, build_chart, build_graph, refine_near
from .metrics import (DyadicCinches, IlmanenWells, MetricField, ScaledField, check_dominates,
                      chart_kind, family_field, reference_field)
from scipy.sparse.csgraph import dijkstra

SCHEMA_VERSION = 1
RECOMPUTE_TOL = 1e-12


def _nonneg(**kw):
    for name, val in kw.items():
        if not val >= 0:
            raise ValueError(f"{name} must be non-negative, got {val}")


def h_min(delta: float, D: float) -> float:
    """Smallest slab height that keeps the good part of ``M_j`` embedded isometrically."""
    _nonneg(delta=delta)
    if not D > 0:
        raise ValueError(f"D must be positive, got {D}")
    return math.sqrt(2.0 * delta * D + delta * delta)


def bound_basic(V_j: float, h: float, V: float) -> float:
    _nonneg(V_j=V_j, h=h, V=V)
    return 2.0 * V_j + h * V


def pipeline_formula(kappa: float, vol0: float, volj: float, h: float, V: float) -> float:
    return (2.0 / kappa) * vol0 + 2.0 * abs(volj - vol0) + h * V


def hls_bound(eps_uniform: float, lam: float, vol0: float, n: int) -> float:
    """``2^((n+1)/2) lam^(n+1) 2 eps Vol_0`` for a ``lam``-biLipschitz pair of metrics
    whose distances differ by at most ``eps_uniform`` everywhere."""
    _nonneg(eps_uniform=eps_uniform, vol0=vol0)
    if not lam >= 1:
        raise ValueError("biLipschitz constant must be >= 1")
    return 2.0 ** ((n + 1) / 2.0) * lam ** (n + 1) * 2.0 * eps_uniform * vol0


@dataclass(frozen=True)
class BilipschitzCertificate:
    """Worst distance ratio and worst absolute gap over every sampled pair."""

    lam: float
    eps_uniform: float
    n_pairs: int

    @classmethod
    def from_distances(cls, dj: np.ndarray, d0: np.ndarray) -> "BilipschitzCertificate":
        off = d0 > 0
        if not off.any():
            raise ValueError("no off-diagonal pairs to certify")
        ratio = dj[off] / d0[off]
        lam = float(max(ratio.max(), (1.0 / ratio).max()))
        return cls(lam=lam, eps_uniform=float(np.abs(dj - d0).max()), n_pairs=int(off.sum()))


def hls_from_certificate(cert: BilipschitzCertificate | None, vol0: float, n: int = 2) -> float:
    if cert is None:
        raise HypothesisFailure("the biLipschitz bound needs a verified certificate")
    return hls_bound(cert.eps_uniform, cert.lam, vol0, n)


# -- reports --------------------------------------------------------------------

@dataclass
class FlatBoundReport:
    family: str
    j: int | None
    formula: str                 # basic | pipeline | hls
    D: float
    V: float
    vol0: float
    volj: float
    V_j: float
    delta: float
    eps: float | None
    kappa: float | None
    lambda_prime: float | None
    h: float
    bound: float
    tau_mesh: float
    tau_source: str
    n_landmarks: int = 0
    rescale: float = 1.0
    hls: dict | None = None
    extras: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def recompute(self) -> float:
        if self.formula == "basic":
            return bound_basic(self.V_j, self.h, self.V)
        if self.formula == "pipeline":
            return pipeline_formula(self.kappa, self.vol0, self.volj, self.h, self.V)
        if self.formula == "hls":
            return hls_bound(self.hls["eps_uniform"], self.hls["lam"], self.vol0, self.hls["n"])
        raise ValueError(f"unknown formula {self.formula!r}")

    def check(self) -> None:
        if abs(self.recompute() - self.bound) > RECOMPUTE_TOL * max(1.0, abs(self.bound)):
            raise AssertionError("stored bound does not match its own fields")
        if self.formula == "pipeline":
            need = h_min(self.lambda_prime + self.delta, self.D)
        else:
            need = h_min(self.delta, self.D)
        if self.formula != "hls" and self.h < need - 1e-12:
            raise AssertionError("slab height below the required minimum")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "FlatBoundReport":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {d.get('schema_version')!r}")
        return cls(**d)


SERIES_COLUMNS = ("j", "delta", "V_j", "h", "bound")


def series_csv(reports, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(SERIES_COLUMNS)
    for r in reports:
        w.writerow([r.j, repr(r.delta), repr(r.V_j), repr(r.h), repr(r.bound)])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


# -- pipeline -------------------------------------------------------------------

def _start_node(chart: ParamChart) -> int:
    return int(chart.poles[0]) if chart.kind == "sphere" else 0


def _tau_for(chart: ParamChart, k: int) -> tuple[float, str]:
    # the sphere calibration chart whose meridian step matches this chart's base step
    step = (math.pi if chart.kind == "sphere" else 2.0 * math.pi) / chart.resolution[0]
    res = max(8, int(round(math.pi / step)))
    return tau_mesh(res, k), f"round-sphere oracle, resolution {res}, stencil {k}"


@dataclass(eq=False)
class PipelineContext:
    """Everything in the pipeline that does not depend on ``(kappa, lambda')``."""

    family: str
    j: int | None
    chart: ParamChart
    g_j: MetricField
    g_0: MetricField
    landmarks: np.ndarray
    d0_rows: np.ndarray
    dj_rows: np.ndarray
    cells: np.ndarray
    node_vol0: np.ndarray
    node_volj: np.ndarray
    pairs: object
    D: float
    tau: float
    tau_source: str
    rescale: float = 1.0
    domination: dict = field(default_factory=dict)

    @property
    def vol0(self) -> float:
        return float(self.node_vol0.sum())

    @property
    def volj(self) -> float:
        return float(self.node_volj.sum())

    def square(self, rows: np.ndarray) -> np.ndarray:
        return rows[:, self.landmarks]

    def certificate(self) -> BilipschitzCertificate:
        return BilipschitzCertificate.from_distances(self.square(self.dj_rows), self.square(self.d0_rows))

    def good_set(self, kappa: float, lambda_prime: float) -> GoodSetSelection:
        eps = epsilon_from_lambda(self.node_vol0, self.d0_rows, lambda_prime, kappa)
        # a ball holding every node sums its volume in another order than the total
        if kappa * eps >= 0.5 * (1.0 - 1e-12):
            raise InfeasibleParameters(f"kappa * eps = {kappa * eps:.4g} >= 1/2 for "
                                       f"kappa={kappa}, lambda'={lambda_prime}")
        if not eps > 0:
            raise InfeasibleParameters(f"eps = 0 for lambda'={lambda_prime}: balls contain no volume")
        pv = self.pairs.pair_values
        sel = select_S_epsilon(pv(self.square(self.dj_rows)), pv(self.square(self.d0_rows)), self.pairs, eps)
        return select_W(slice_volumes(sel.mask, self.pairs), kappa, eps, self.pairs, sel,
                        cells=self.cells, node_vol0=self.node_vol0, node_volj=self.node_volj)

    def evaluate(self, kappa: float, lambda_prime: float, with_hls: bool = False) -> FlatBoundReport:
        good = self.good_set(kappa, lambda_prime)
        eps = good.eps
        h = h_min(lambda_prime + good.delta, self.D)
        V = max(self.vol0, self.volj)
        hls = None
        if with_hls:
            cert = self.certificate()
            hls = dict(asdict(cert), n=2, bound=hls_from_certificate(cert, self.vol0))
        rep = FlatBoundReport(
            family=self.family, j=self.j, formula="pipeline", D=self.D, V=V, vol0=self.vol0,
            volj=self.volj, V_j=float(good.volj_outside), delta=good.delta, eps=eps, kappa=kappa,
            lambda_prime=lambda_prime, h=h, bound=pipeline_formula(kappa, self.vol0, self.volj, h, V),
            tau_mesh=self.tau, tau_source=self.tau_source, n_landmarks=int(len(self.landmarks)),
            rescale=self.rescale, hls=hls,
            extras={"vol0_W": good.vol0_W, "W_fraction": good.vol0_W / good.vol0_total,
                    "lemmas": _plain(good.lemma_checks()), "flags": list(good.flags),
                    "domination": self.domination})
        rep.check()
        return rep


def _plain(d: dict) -> dict:
    return {k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v)) for k, v in d.items()}


def prepare(g_j: MetricField, g_0: MetricField, chart: ParamChart, landmarks: int = 96, k: int = 2,
            q: int = 2, family: str = "custom", j: int | None = None,
            almost: bool = False) -> PipelineContext:
    """Check the hypothesis, then compute distances, diameter and volumes once.

    With ``almost`` the domination test uses slack ``1/(2j)`` and ``g_j`` is rescaled
    by ``1 / (1 - 1/(2j))`` before anything else.
    """
    rescale = 1.0
    if almost:
        if j is None:
            raise ValueError("almost-domination needs the family index j")
        slack = 1.0 / (2.0 * j)
        dom = check_dominates(g_j, g_0, chart, slack)
        if not dom.passed:
            raise HypothesisFailure("g_j does not almost dominate g_0", dom.summary())
        rescale = 1.0 / (1.0 - slack)
        g_j = ScaledField(g_j, rescale)
    dom = check_dominates(g_j, g_0, chart)
    if not dom.passed:
        raise HypothesisFailure(
            f"g_j does not dominate g_0 at {len(dom.violations)} nodes "
            f"(smallest relative eigenvalue {dom.min_lambda:.4g})", dom.summary())
    graph = build_graph(chart, k, metric=g_0)
    l0 = edge_lengths(graph, g_0, q)
    lj = edge_lengths(graph, g_j, q)
    # half the landmarks spread out under g_0, half under g_j: the second half
    # lands inside regions g_j stretches, so those get small cells of their own
    start = _start_node(chart)
    by0 = farthest_point_landmarks(graph, l0, landmarks - landmarks // 2, start=start).sources
    byj = farthest_point_landmarks(graph, lj, landmarks // 2, start=start).sources
    lm = np.unique(np.concatenate([by0, byj]))
    d0_rows = np.atleast_2d(dijkstra(l0.adjacency(), directed=True, indices=lm))
    dj_rows = np.atleast_2d(dijkstra(lj.adjacency(), directed=True, indices=lm))
    if not (np.all(np.isfinite(dj_rows)) and np.all(np.isfinite(d0_rows))):
        raise RuntimeError("graph is disconnected")
    # cells by g_j distance: a point's gap function moves by at most twice its g_j
    # displacement, so these cells keep stretched regions apart from the rest
    cells = voronoi_cells(dj_rows)
    tau, tau_src = _tau_for(chart, k)
    D = max(float(d0_rows.max()), float(dj_rows.max())) * (1.0 + tau)
    pairs = sample_pairs(chart, g_0, landmarks=lm, cells=cells)
    return PipelineContext(family=family, j=j, chart=chart, g_j=g_j, g_0=g_0, landmarks=lm,
                           d0_rows=d0_rows, dj_rows=dj_rows, cells=cells,
                           node_vol0=node_volumes(chart, g_0), node_volj=node_volumes(chart, g_j),
                           pairs=pairs, D=D, tau=tau, tau_source=tau_src, rescale=rescale,
                           domination=dom.summary())


def bound_pipeline(g_j: MetricField, g_0: MetricField, chart: ParamChart, kappa: float,
                   lambda_prime: float, landmarks: int = 96, **kw) -> FlatBoundReport:
    with_hls = kw.pop("with_hls", False)
    return prepare(g_j, g_0, chart, landmarks, **kw).evaluate(kappa, lambda_prime, with_hls)


def optimize_params(context: PipelineContext, kappas, lambdas) -> FlatBoundReport:
    """Grid search for the smallest bound; ties go to smaller lambda', then smaller kappa."""
    kappas, lambdas = list(kappas), list(lambdas)
    if not kappas or not lambdas:
        raise ValueError("empty parameter grid")
    best, best_key, failures = None, None, []
    for lam in sorted(lambdas):
        for kap in sorted(kappas):
            try:
                rep = context.evaluate(kap, lam)
            except (InfeasibleParameters, ValueError) as exc:
                failures.append({"kappa": kap, "lambda_prime": lam, "reason": str(exc)})
                continue
            key = (rep.bound, lam, kap)
            if best is None or key < best_key:
                best, best_key = rep, key
    if best is None:
        raise InfeasibleParameters(f"every grid point is infeasible: {failures}")
    best.extras["grid"] = {"kappas": kappas, "lambdas": lambdas, "infeasible": failures}
    return best


def report_basic(V_j: float, delta: float, D: float, V: float, h: float | None = None,
                 family: str = "custom", j=None) -> FlatBoundReport:
    """Bound for a user-supplied good set with its own ``delta`` and volume outside it."""
    h = h_min(delta, D) if h is None else h
    if h < h_min(delta, D) - 1e-12:
        raise HypothesisFailure("slab height below the required minimum")
    rep = FlatBoundReport(family=family, j=j, formula="basic", D=D, V=V, vol0=float("nan"),
                          volj=float("nan"), V_j=V_j, delta=delta, eps=None, kappa=None,
                          lambda_prime=None, h=h, bound=bound_basic(V_j, h, V), tau_mesh=0.0,
                          tau_source="user supplied")
    rep.check()
    return rep


# -- family charts --------------------------------------------------------------

def chart_for(family: str, j: int | None, resolution: int, rho=None, cells_per_radius: int = 4) -> ParamChart:
    """A chart fine enough to resolve member ``j`` of a named family.

    Ilmanen wells get bands around them refined until the step is at most the
    well radius over ``cells_per_radius`` (equatorial wells on both axes); the dyadic torus gets its
    cinch bands refined the same way.
    """
    kind = chart_kind(family)
    chart = build_chart(kind, resolution)
    if family == "ilmanen" and j is not None:
        well = IlmanenWells(j, rho=rho)
        step = math.pi / resolution
        if step > well.rho / cells_per_radius:
            factor = 2 ** math.ceil(math.log2(step * cells_per_radius / well.rho))
            poles = [c[0] for c in well.centers if c[0] in (0.0, math.pi)]
            inner = [c for c in well.centers if c[0] not in (0.0, math.pi)]
            chart = refine_near(chart, poles + ([0.5 * math.pi] if inner else []), well.rho, factor)
            chart = refine_near(chart, [c[1] for c in inner], well.rho, factor, axis=1)
    elif family == "finsler-torus" and j is not None:
        prof = DyadicCinches(j)
        step = 2.0 * math.pi / resolution
        if step > prof.half_width / cells_per_radius:
            factor = 2 ** math.ceil(math.log2(step * cells_per_radius / prof.half_width))
            chart = refine_near(chart, list(prof.centers), prof.half_width, factor)
    return chart


def family_context(family: str, j: int, resolution: int, landmarks: int = 96, k: int = 2,
                   rho=None, R: float = 1.0, almost: bool = False,
                   cells_per_radius: int = 4) -> PipelineContext:
    chart = chart_for(family, j, resolution, rho, cells_per_radius)
    return prepare(family_field(family, j, rho=rho, R=R), reference_field(family), chart,
                   landmarks=landmarks, k=k, family=family, j=j, almost=almost)
