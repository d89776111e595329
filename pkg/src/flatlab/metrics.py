"""Metric tensor fields on the sphere and torus charts, and pointwise comparisons.

Every field evaluates to an array of symmetric 2x2 matrices at an array of
parameter points.  Fields are immutable and pure.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .mesh import ParamChart

# absolute tolerance on relative eigenvalues when deciding domination
DOMINATION_TOL = 1e-12


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    return pts.reshape(-1, 2)


def _diag(a, b) -> np.ndarray:
    out = np.zeros(a.shape + (2, 2))
    out[..., 0, 0] = a
    out[..., 1, 1] = b
    return out


def smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def cinch(x, h0: float):
    """Even cinch profile: ``h0`` at 0, rising with zero slope to 1 at ``|x| >= 1``."""
    return h0 + (1.0 - h0) * smoothstep(np.abs(x))


class MetricField:
    """Base class.  Subclasses implement ``_eval(points) -> (n, 2, 2)`` and carry a
    ``kind`` naming the chart they live on."""

    def eval(self, points) -> np.ndarray:
        pts = _as_points(points)
        g = self._eval(pts)
        if np.asarray(points).ndim == 1:
            return g[0]
        return g

    def _eval(self, pts: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def descriptor(self) -> dict:  # pragma: no cover - abstract
        raise NotImplementedError


def evaluate(field: MetricField, point) -> np.ndarray:
    """Metric matrix at a single point (or stacked matrices for an array of points)."""
    return field.eval(point)


# -- radial profiles ------------------------------------------------------------

@dataclass(frozen=True)
class ConstantProfile:
    value: float = 1.0

    def __call__(self, r):
        return np.full(np.shape(r), float(self.value))

    def descriptor(self) -> dict:
        return {"profile": "constant", "value": self.value}


@dataclass(frozen=True)
class EquatorCinch:
    """Conformal factor equal to 1 except on ``|r - pi/2| < 1/j`` where it dips to ``h0``."""

    j: int
    h0: float = 0.5

    def __post_init__(self):
        if self.j < 1 or not 0 < self.h0 < 1:
            raise ValueError("cinch needs j >= 1 and h0 in (0, 1)")

    def __call__(self, r):
        return cinch(self.j * (np.asarray(r) - 0.5 * math.pi), self.h0)

    def descriptor(self) -> dict:
        return {"profile": "equator-cinch", "j": self.j, "h0": self.h0}


@dataclass(frozen=True)
class EquatorCollar:
    """Conformal factor rising to ``1 + height`` on ``|r - pi/2| < half_width``.

    Every meridian pays the same excess in the middle of its path, so this is the
    stock example where base shortcuts in the glued space need a tall slab.
    """

    height: float = 1.0
    half_width: float = 0.25

    def __post_init__(self):
        if not (self.height > 0 and 0 < self.half_width < 0.5 * math.pi):
            raise ValueError("collar needs height > 0 and half_width in (0, pi/2)")

    def __call__(self, r):
        return cinch((np.asarray(r) - 0.5 * math.pi) / self.half_width, 1.0 + self.height)

    def descriptor(self) -> dict:
        return {"profile": "equator-collar", "height": self.height, "half_width": self.half_width}


@dataclass(frozen=True)
class DyadicCinches:
    """Warp factor equal to ``top`` except near the dyadic centers
    ``-pi + 2 pi i / 2^j`` (``i = 1 .. 2^j - 1``), where it dips to ``top * h0``
    over half-width ``4^-j``."""

    j: int
    h0: float = 0.2
    top: float = 5.0

    def __post_init__(self):
        if self.j < 1 or not 0 < self.h0 < 1:
            raise ValueError("cinch needs j >= 1 and h0 in (0, 1)")

    @property
    def centers(self) -> np.ndarray:
        n = 2 ** self.j
        return -math.pi + 2 * math.pi * np.arange(1, n) / n

    @property
    def half_width(self) -> float:
        return 0.25 ** self.j

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        n = 2 ** self.j
        spacing = 2 * math.pi / n
        wrapped = (r + math.pi) % (2 * math.pi) - math.pi
        idx = np.clip(np.rint((wrapped + math.pi) / spacing), 1, n - 1)
        nearest = -math.pi + idx * spacing
        return self.top * cinch((wrapped - nearest) / self.half_width, self.h0)

    def descriptor(self) -> dict:
        return {"profile": "dyadic-cinches", "j": self.j, "h0": self.h0, "top": self.top}


# -- families -------------------------------------------------------------------

@dataclass(frozen=True)
class RoundSphere(MetricField):
    radius: float = 1.0
    kind = "sphere"

    def _eval(self, pts):
        s = np.sin(pts[:, 0])
        return self.radius ** 2 * _diag(np.ones(len(pts)), s * s)

    def descriptor(self) -> dict:
        return {"family": "round-sphere", "radius": self.radius}


@dataclass(frozen=True)
class ConformalRadial(MetricField):
    """``f(r)^2`` times the round metric."""

    profile: object = field(default_factory=ConstantProfile)
    radius: float = 1.0
    kind = "sphere"

    def _eval(self, pts):
        f = self.profile(pts[:, 0])
        return (f * f)[:, None, None] * RoundSphere(self.radius)._eval(pts)

    def descriptor(self) -> dict:
        return {"family": "conformal-radial", "radius": self.radius, **self.profile.descriptor()}


@dataclass(frozen=True)
class WarpedTorus(MetricField):
    """``dr^2 + f(r)^2 dtheta^2`` on the square torus."""

    profile: object = field(default_factory=lambda: ConstantProfile(5.0))
    kind = "torus"

    def _eval(self, pts):
        f = self.profile(pts[:, 0])
        return _diag(np.ones(len(pts)), f * f)

    def descriptor(self) -> dict:
        return {"family": "warped-torus", **self.profile.descriptor()}


@dataclass(frozen=True)
class ConstantTensor(MetricField):
    """The same matrix at every point of a chart of the given kind."""

    g11: float = 1.0
    g12: float = 0.0
    g22: float = 1.0
    kind: str = "torus"

    def __post_init__(self):
        if not (self.g11 > 0 and self.g11 * self.g22 - self.g12 ** 2 > 0):
            raise ValueError("constant tensor is not positive definite")

    def _eval(self, pts):
        out = np.empty((len(pts), 2, 2))
        out[:, 0, 0] = self.g11
        out[:, 0, 1] = out[:, 1, 0] = self.g12
        out[:, 1, 1] = self.g22
        return out

    def descriptor(self) -> dict:
        return {"family": "constant", "g": [self.g11, self.g12, self.g22], "kind": self.kind}


def well_profile(s, rho: float, depth: float):
    """Radial stretch factor of a well: 1 outside radius ``rho``, and inside it
    ``1 + (depth / rho) * 30 u^2 (1 - u)^2`` with ``u = s / rho``, so the radial
    length from rim to center is ``rho + depth``.  Value and slope match at the rim."""
    u = np.clip(np.asarray(s) / rho, 0.0, 1.0)
    return 1.0 + (depth / rho) * 30.0 * u * u * (1.0 - u) ** 2


def default_well_centers(j: int) -> list[tuple[float, float]]:
    """North pole first, south pole last, the rest spread along the equator."""
    if j < 1:
        raise ValueError("need at least one well")
    if j == 1:
        return [(0.0, 0.0)]
    inner = j - 2
    centers = [(0.0, 0.0)]
    centers += [(0.5 * math.pi, 2 * math.pi * k / inner) for k in range(inner)]
    centers.append((math.pi, 0.0))
    return centers


def sphere_distance(a, b):
    """Great-circle distance between polar-chart points (haversine form)."""
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    hav = np.sin(0.5 * (a[:, 0] - b[:, 0])) ** 2 + \
        np.sin(a[:, 0]) * np.sin(b[:, 0]) * np.sin(0.5 * (a[:, 1] - b[:, 1])) ** 2
    return 2.0 * np.arcsin(np.sqrt(np.clip(hav, 0.0, 1.0)))


@dataclass(frozen=True)
class IlmanenWells(MetricField):
    """Round sphere with ``j`` thin deep wells.

    Each well replaces the disc of radius ``rho`` about a center with a
    rotationally symmetric piece whose radial direction is stretched by
    :func:`well_profile`.  Circles about the center keep their round
    circumference, so inside a well the metric only grows: ``g >= g_round``.
    """

    j: int
    rho: float | None = None
    depth: float = 1.0
    centers: tuple | None = None
    kind = "sphere"

    def __post_init__(self):
        if self.j < 1:
            raise ValueError("j must be >= 1")
        if self.rho is None:
            object.__setattr__(self, "rho", float(self.j) ** -2)
        if self.centers is None:
            object.__setattr__(self, "centers", tuple(default_well_centers(self.j)))
        if not (self.rho > 0 and self.depth >= 0):
            raise ValueError("well radius must be positive and depth non-negative")
        c = np.array(self.centers, dtype=float).reshape(-1, 2)
        for i in range(len(c)):
            if len(c) > 1:
                others = np.delete(c, i, axis=0)
                if np.min(sphere_distance(np.repeat(c[i:i + 1], len(others), 0), others)) < 2 * self.rho:
                    raise ValueError("well discs overlap")

    def _eval(self, pts):
        g = RoundSphere()._eval(pts)
        r, th = pts[:, 0], pts[:, 1]
        for rq, tq in self.centers:
            hav = np.sin(0.5 * (r - rq)) ** 2 + np.sin(r) * math.sin(rq) * np.sin(0.5 * (th - tq)) ** 2
            s = 2.0 * np.arcsin(np.sqrt(np.clip(hav, 0.0, 1.0)))
            inside = (s < self.rho) & (s > 1e-14)
            if not np.any(inside):
                continue
            si = s[inside]
            ri, ti = r[inside], th[inside]
            dh_dr = 0.5 * np.sin(ri - rq) + np.cos(ri) * math.sin(rq) * np.sin(0.5 * (ti - tq)) ** 2
            dh_dt = 0.5 * np.sin(ri) * math.sin(rq) * np.sin(ti - tq)
            scale = 2.0 / np.sin(si)
            ds = np.column_stack([dh_dr * scale, dh_dt * scale])
            a = well_profile(si, self.rho, self.depth)
            g[inside] += (a * a - 1.0)[:, None, None] * ds[:, :, None] * ds[:, None, :]
        return g

    def descriptor(self) -> dict:
        return {"family": "ilmanen", "j": self.j, "rho": self.rho, "R": self.depth,
                "centers": [list(c) for c in self.centers]}


@dataclass(frozen=True, eq=False)
class GridTensor(MetricField):
    """Per-node SPD matrices on a rectilinear grid, bilinearly interpolated by component.

    ``values`` has shape ``(len(u_axis), len(v_axis), 3)`` holding ``g11, g12, g22``.
    """

    kind: str
    u_axis: np.ndarray
    v_axis: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (len(self.u_axis), len(self.v_axis), 3):
            raise ValueError("values must have shape (nu, nv, 3)")
        if np.any(np.diff(self.u_axis) <= 0) or np.any(np.diff(self.v_axis) <= 0):
            raise ValueError("grid axes must be strictly increasing")
        det = vals[..., 0] * vals[..., 2] - vals[..., 1] ** 2
        bad = np.argwhere(~((vals[..., 0] > 0) & (det > 0)))
        if len(bad):
            i, jj = bad[0]
            raise ValueError(f"non-SPD grid tensor at node ({i}, {jj})")
        object.__setattr__(self, "values", vals)

    def _locate(self, axis, x, periodic, period, lo):
        if periodic:
            x = lo + (x - lo) % period
            ext = np.concatenate([axis, [axis[0] + period]])
            i = np.clip(np.searchsorted(ext, x, side="right") - 1, 0, len(axis) - 1)
            t = (x - ext[i]) / (ext[i + 1] - ext[i])
            return i, (i + 1) % len(axis), np.clip(t, 0.0, 1.0)
        x = np.clip(x, axis[0], axis[-1])
        i = np.clip(np.searchsorted(axis, x, side="right") - 1, 0, len(axis) - 2)
        t = (x - axis[i]) / (axis[i + 1] - axis[i])
        return i, i + 1, t

    def _eval(self, pts):
        if self.kind == "torus":
            iu0, iu1, tu = self._locate(self.u_axis, pts[:, 0], True, 2 * math.pi, -math.pi)
            iv0, iv1, tv = self._locate(self.v_axis, pts[:, 1], True, 2 * math.pi, -math.pi)
        else:
            iu0, iu1, tu = self._locate(self.u_axis, pts[:, 0], False, None, None)
            iv0, iv1, tv = self._locate(self.v_axis, pts[:, 1], True, 2 * math.pi, 0.0)
        v = self.values
        comp = ((1 - tu) * (1 - tv))[:, None] * v[iu0, iv0] + ((1 - tu) * tv)[:, None] * v[iu0, iv1] \
            + (tu * (1 - tv))[:, None] * v[iu1, iv0] + (tu * tv)[:, None] * v[iu1, iv1]
        det = comp[:, 0] * comp[:, 2] - comp[:, 1] ** 2
        if np.any(comp[:, 0] <= 0) or np.any(det <= 0):
            k = int(np.flatnonzero((comp[:, 0] <= 0) | (det <= 0))[0])
            raise ValueError(f"interpolated tensor not SPD at point {pts[k].tolist()}")
        out = np.empty((len(pts), 2, 2))
        out[:, 0, 0] = comp[:, 0]
        out[:, 0, 1] = out[:, 1, 0] = comp[:, 1]
        out[:, 1, 1] = comp[:, 2]
        return out

    @classmethod
    def from_csv(cls, path, kind: str) -> "GridTensor":
        """Load from CSV with header ``u,v,g11,g12,g22`` covering a full rectilinear grid."""
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        missing = {"u", "v", "g11", "g12", "g22"} - set(rows[0] if rows else {})
        if missing:
            raise ValueError(f"grid tensor CSV missing columns {sorted(missing)}")
        data = np.array([[float(r[k]) for k in ("u", "v", "g11", "g12", "g22")] for r in rows])
        u = np.unique(data[:, 0])
        v = np.unique(data[:, 1])
        if len(data) != len(u) * len(v):
            raise ValueError("grid tensor CSV does not cover a full rectilinear grid")
        vals = np.full((len(u), len(v), 3), np.nan)
        iu = np.searchsorted(u, data[:, 0])
        iv = np.searchsorted(v, data[:, 1])
        vals[iu, iv] = data[:, 2:]
        return cls(kind=kind, u_axis=u, v_axis=v, values=vals)

    def descriptor(self) -> dict:
        return {"family": "grid", "kind": self.kind,
                "digest": _array_digest(self.u_axis, self.v_axis, self.values)}


@dataclass(frozen=True, eq=False)
class ScaledField(MetricField):
    """``factor * base``; used for the almost-domination rescale."""

    base: MetricField
    factor: float

    @property
    def kind(self):
        return self.base.kind

    def _eval(self, pts):
        return self.factor * self.base._eval(pts)

    def descriptor(self) -> dict:
        return {"family": "scaled", "factor": self.factor, "base": self.base.descriptor()}


def _array_digest(*arrays) -> str:
    import hashlib
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype=float).tobytes())
    return h.hexdigest()[:16]


# -- comparison -----------------------------------------------------------------

def comparison_points(chart: ParamChart) -> np.ndarray:
    """Node ids at which tensors are compared.  Sphere poles are skipped since the
    polar chart is singular there."""
    n = chart.n_nodes
    if chart.kind == "sphere":
        return np.arange(n - 2)
    return np.arange(n)


def relative_eigenvalues(g_a: np.ndarray, g_b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Generalized eigenvalues of ``g_b`` relative to ``g_a`` for stacks of 2x2 SPD
    matrices, computed after whitening by the Cholesky factor of ``g_a``."""
    a11, a12, a22 = g_a[:, 0, 0], g_a[:, 0, 1], g_a[:, 1, 1]
    l11 = np.sqrt(a11)
    l21 = a12 / l11
    l22 = np.sqrt(a22 - l21 * l21)
    b11, b12, b22 = g_b[:, 0, 0], g_b[:, 0, 1], g_b[:, 1, 1]
    # C = L^-1 B L^-T
    c11 = b11 / (l11 * l11)
    c12 = (b12 - l21 * c11 * l11) / (l11 * l22)
    c22 = (b22 - 2 * l21 * c12 * l22 - l21 * l21 * c11) / (l22 * l22)
    mean = 0.5 * (c11 + c22)
    rad = np.hypot(0.5 * (c11 - c22), c12)
    return mean - rad, mean + rad


@dataclass(frozen=True, eq=False)
class TensorComparison:
    node_ids: np.ndarray
    lam_min: np.ndarray
    lam_max: np.ndarray

    @property
    def global_min(self) -> float:
        return float(self.lam_min.min())

    @property
    def global_max(self) -> float:
        return float(self.lam_max.max())

    @property
    def Q(self) -> float:
        """Bound on the length ratio: ``|v|_b <= Q |v|_a`` at every compared node."""
        return math.sqrt(self.global_max)

    def violations(self, slack: float = 0.0) -> np.ndarray:
        # eigenvalues of a strongly stretched tensor carry round-off relative to the largest one
        tol = DOMINATION_TOL * np.maximum(1.0, self.lam_max)
        return self.node_ids[self.lam_min < 1.0 - slack - tol]


def compare_eigs(g_a: MetricField, g_b: MetricField, chart: ParamChart) -> TensorComparison:
    ids = comparison_points(chart)
    pts = chart.nodes[ids]
    lo, hi = relative_eigenvalues(g_a.eval(pts), g_b.eval(pts))
    return TensorComparison(node_ids=ids, lam_min=lo, lam_max=hi)


@dataclass(frozen=True, eq=False)
class DominationCheck:
    passed: bool
    min_lambda: float
    slack: float
    violations: np.ndarray

    def summary(self) -> dict:
        return {"passed": self.passed, "min_lambda": self.min_lambda, "slack": self.slack,
                "n_violations": int(len(self.violations)),
                "first_violations": self.violations[:10].tolist()}


def check_dominates(g_j: MetricField, g_0: MetricField, chart: ParamChart, slack: float = 0.0) -> DominationCheck:
    """Does ``g_j(v, v) >= (1 - slack) g_0(v, v)`` hold at every compared node?"""
    if slack < 0:
        raise ValueError("slack must be non-negative")
    cmp = compare_eigs(g_0, g_j, chart)
    viol = cmp.violations(slack)
    return DominationCheck(passed=len(viol) == 0, min_lambda=cmp.global_min, slack=slack, violations=viol)


def lp_norm(g_j: MetricField, g_0: MetricField, p: float, chart: ParamChart) -> float:
    """``(int |g_j - g_0|_{g_0}^p dV_{g_0})^{1/p}`` with the g_0-normalized Frobenius norm."""
    if p < 1:
        raise ValueError("p must be >= 1")
    ids = comparison_points(chart)
    pts = chart.nodes[ids]
    a = g_0.eval(pts)
    lo, hi = relative_eigenvalues(a, g_j.eval(pts))
    norm = np.sqrt((lo - 1.0) ** 2 + (hi - 1.0) ** 2)
    dvol = np.sqrt(np.clip(np.linalg.det(a), 0.0, None)) * chart.areas[ids]
    return float(np.sum(norm ** p * dvol) ** (1.0 / p))


# -- family registry ------------------------------------------------------------

FAMILIES = ("round-sphere", "cinched-sphere", "ilmanen", "collared-sphere", "finsler-torus", "flat-torus")


def family_field(family: str, j: int | None = None, rho=None, R: float = 1.0, h0=None) -> MetricField:
    """Member ``j`` of a named family."""
    if family == "round-sphere":
        return RoundSphere()
    if family == "flat-torus":
        return WarpedTorus(ConstantProfile(5.0))
    if j is None or j < 1:
        raise ValueError(f"family {family!r} needs j >= 1")
    if family == "cinched-sphere":
        return ConformalRadial(EquatorCinch(j, 0.5 if h0 is None else h0))
    if family == "finsler-torus":
        return WarpedTorus(DyadicCinches(j, 0.2 if h0 is None else h0))
    if family == "ilmanen":
        return IlmanenWells(j, rho=rho, depth=R)
    if family == "collared-sphere":
        return ConformalRadial(EquatorCollar(2.0 if h0 is None else h0, 1.0 / j))
    raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")


def reference_field(family: str) -> MetricField:
    """The background metric a family is compared against."""
    if family in ("round-sphere", "cinched-sphere", "ilmanen", "collared-sphere"):
        return RoundSphere()
    if family in ("finsler-torus", "flat-torus"):
        return WarpedTorus(ConstantProfile(5.0))
    raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")


def chart_kind(family: str) -> str:
    return reference_field(family).kind
