"""Twisted ideal polygons and their shear-bend coordinates.

Vertices are indexed from 0.  A triangulation is a list of n - 3 diagonals
(a, b) with a < b; the default is the fan from vertex 0.

Coordinate of a diagonal (a, b): let x be the third vertex of the adjacent
triangle with a < x < b and y the third vertex of the other one.  Then

    c = -cross_ratio(xi_a, xi_b, xi_y, xi_x).

After the normalization xi_a -> 0, xi_x -> 1, xi_b -> inf this is -lambda,
lambda the image of xi_y.  A convex planar polygon therefore has c > 0, and
rotating the y-side about the diagonal by theta multiplies c by e^{i theta}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

from .hyp3 import (
    INF,
    GeodesicLine,
    GeometryError,
    Mobius,
    PointH3,
    apply_mobius,
    as_ideal,
    cross_ratio,
    elliptic_about_axis,
    ideal_close,
    mobius_array,
    normalize_triple,
)


class PolygonError(GeometryError):
    pass


@dataclass(frozen=True)
class TwistedIdealPolygon:
    vertices: tuple

    def __init__(self, vertices: Sequence):
        object.__setattr__(self, "vertices", tuple(as_ideal(v) for v in vertices))

    @property
    def n(self) -> int:
        return len(self.vertices)

    @property
    def sides(self) -> list:
        n = self.n
        return [GeodesicLine(self.vertices[i], self.vertices[(i + 1) % n]) for i in range(n)]

    def mapped(self, g: Mobius) -> "TwistedIdealPolygon":
        return TwistedIdealPolygon([apply_mobius(g, v) for v in self.vertices])

    def normalized(self) -> "TwistedIdealPolygon":
        """Image under the map sending the first three vertices to 0, 1, INF."""
        Q = self.mapped(normalize_triple(*self.vertices[:3]))
        return TwistedIdealPolygon((0j, 1 + 0j, INF) + Q.vertices[3:])


@dataclass(frozen=True)
class Violation:
    condition: str
    detail: str


def validate(P: TwistedIdealPolygon, tol=1e-12) -> list:
    """Empty list when P is a twisted ideal polygon, else the violations.

    (i) at least three distinct vertices; (ii) successive vertices distinct.
    """
    out = []
    vs = P.vertices
    distinct = []
    for v in vs:
        if not any(ideal_close(v, u, tol) for u in distinct):
            distinct.append(v)
    if len(distinct) < 3:
        out.append(Violation("i", f"only {len(distinct)} distinct vertices"))
    for i in range(len(vs)):
        j = (i + 1) % len(vs)
        if len(vs) > 1 and ideal_close(vs[i], vs[j], tol):
            out.append(Violation("ii", f"vertices {i} and {j} coincide"))
    return out


def _require_valid(P: TwistedIdealPolygon):
    bad = validate(P)
    if bad:
        raise PolygonError("; ".join(f"({v.condition}) {v.detail}" for v in bad))


# ------------------------------------------------------------ triangulations

def fan(n: int) -> list:
    return [(0, j) for j in range(2, n - 1)]


def _crosses(d1, d2) -> bool:
    a, b = d1
    c, d = d2
    return (a < c < b < d) or (c < a < d < b)


def check_triangulation(n: int, diagonals) -> list:
    diags = [tuple(sorted((int(a), int(b)))) for a, b in diagonals]
    if len(diags) != n - 3:
        raise PolygonError(f"need {n - 3} diagonals, got {len(diags)}")
    for a, b in diags:
        if not (0 <= a < b < n) or b - a < 2 or (a == 0 and b == n - 1):
            raise PolygonError(f"({a}, {b}) is not a diagonal")
    if len(set(diags)) != len(diags):
        raise PolygonError("repeated diagonal")
    for d1, d2 in combinations(diags, 2):
        if _crosses(d1, d2):
            raise PolygonError(f"diagonals {d1} and {d2} cross")
    return diags


def triangles(n: int, diagonals) -> list:
    edges = {tuple(sorted((i, (i + 1) % n))) for i in range(n)} | set(diagonals)
    return [t for t in combinations(range(n), 3)
            if all(tuple(sorted(e)) in edges for e in combinations(t, 2))]


def _adjacent(n, diag, tris):
    """(x, y, tx, ty): apex and triangle index on the inner and outer side."""
    a, b = diag
    x = y = tx = ty = None
    for k, t in enumerate(tris):
        if a in t and b in t:
            (v,) = [u for u in t if u != a and u != b]
            if a < v < b:
                x, tx = v, k
            else:
                y, ty = v, k
    return x, y, tx, ty


@dataclass(frozen=True)
class ShearBendParams:
    n: int
    triangulation: tuple
    values: tuple

    def __post_init__(self):
        check_triangulation(self.n, self.triangulation)
        if len(self.values) != self.n - 3:
            raise PolygonError("one value per diagonal")
        for c in self.values:
            if c is INF or not np.isfinite(complex(c)) or abs(complex(c)) == 0:
                raise PolygonError(f"parameter {c} must be finite and nonzero")


def to_params(P: TwistedIdealPolygon, triangulation=None) -> ShearBendParams:
    _require_valid(P)
    n = P.n
    diags = check_triangulation(n, fan(n) if triangulation is None else triangulation)
    tris = triangles(n, diags)
    xi = P.vertices
    vals = []
    for d in diags:
        x, y, _, _ = _adjacent(n, d, tris)
        c = cross_ratio(xi[d[0]], xi[d[1]], xi[y], xi[x])
        if c is INF or abs(c) == 0:
            raise PolygonError(f"degenerate quadrilateral at diagonal {d}")
        vals.append(-complex(c))
    return ShearBendParams(n, tuple(diags), tuple(vals))


def from_params(params: ShearBendParams) -> TwistedIdealPolygon:
    """Polygon with vertices 0, 1, 2 at 0, 1, INF realizing the parameters."""
    n = params.n
    diags = list(params.triangulation)
    if n == 3:
        return TwistedIdealPolygon([0, 1, INF])
    tris = triangles(n, diags)
    xi = [None] * n
    base = _base_triangle(tris)
    t0 = tris[base]
    # place the base triangle so that vertices 0, 1, 2 (if present) go to 0, 1, INF
    for v, val in zip(t0, (0j, 1 + 0j, INF)):
        xi[v] = val
    info = {d: (_adjacent(n, d, tris), c) for d, c in zip(diags, params.values)}
    pending = True
    while pending:
        pending = False
        for d, ((x, y, _, _), c) in info.items():
            a, b = d
            if xi[a] is None or xi[b] is None:
                continue
            if xi[x] is not None and xi[y] is None:
                g = normalize_triple(xi[a], xi[x], xi[b])
                xi[y] = apply_mobius(g.inverse(), -complex(c))
                pending = True
            elif xi[y] is not None and xi[x] is None:
                g = normalize_triple(xi[b], xi[y], xi[a])
                xi[x] = apply_mobius(g.inverse(), -complex(c))
                pending = True
    P = TwistedIdealPolygon(xi)
    if tuple(t0) != (0, 1, 2):
        P = P.normalized()
    return P


def _base_triangle(tris) -> int:
    for k, t in enumerate(tris):
        if t == (0, 1, 2):
            return k
    return 0


# ------------------------------------------------------------- bending

def is_planar(P: TwistedIdealPolygon, tol=1e-9) -> bool:
    Q = P.normalized()
    return all(v is INF or abs(v.imag) <= tol * max(1.0, abs(v)) for v in Q.vertices)


@dataclass
class BendingData:
    """Bending of a polygon P0 along the diagonals of a triangulation.

    ``region_maps[k]`` is the bending cocycle from the base triangle to
    triangle k, i.e. the ordered product of the rotations of the diagonals
    crossed on the way.
    """

    P0: TwistedIdealPolygon
    triangulation: tuple
    angles: tuple
    elliptics: list = field(default_factory=list)
    tris: list = field(default_factory=list)
    base: int = 0
    region_maps: list = field(default_factory=list)
    centers: np.ndarray | None = None

    @classmethod
    def build(cls, P0: TwistedIdealPolygon, triangulation, angles, base=None):
        n = P0.n
        diags = check_triangulation(n, triangulation)
        angles = tuple(float(math.remainder(a, 2 * math.pi)) for a in angles)
        angles = tuple(math.pi if abs(a + math.pi) < 1e-15 else a for a in angles)
        if len(angles) != len(diags):
            raise PolygonError("one angle per diagonal")
        tris = triangles(n, diags)
        base = _base_triangle(tris) if base is None else base
        xi = P0.vertices
        ell = [elliptic_about_axis(GeodesicLine(xi[a], xi[b]), th) for (a, b), th in zip(diags, angles)]
        # walk the dual tree from the base triangle
        maps = [None] * len(tris)
        maps[base] = Mobius.identity()
        stack = [base]
        adj = [_adjacent(n, d, tris) for d in diags]
        while stack:
            k = stack.pop()
            for j, (x, y, tx, ty) in enumerate(adj):
                if tx == k and maps[ty] is None:
                    maps[ty] = maps[k] @ ell[j]
                    stack.append(ty)
                elif ty == k and maps[tx] is None:
                    maps[tx] = maps[k] @ ell[j].inverse()
                    stack.append(tx)
        data = cls(P0, tuple(diags), angles, ell, tris, base, maps)
        data.centers = np.array([_triangle_center(xi, t) for t in tris]).reshape(len(tris), 3)
        return data

    # -- point location in the plane of a planar P0
    def _diag_side(self, j, P):
        a, b = self.triangulation[j]
        return _side_value(self.P0.vertices[a], self.P0.vertices[b], P)

    def region_of(self, P, tol=1e-12, strict=True):
        """Index of the triangle containing each point of the plane of P0.

        Points of the plane lying between a side and the boundary belong to
        the triangle adjacent to that side.  Returns -1 where a point sits on
        a diagonal (raises if strict).
        """
        P = np.asarray(P, dtype=float)
        shape = P.shape[:-1]
        flat = P.reshape(-1, 3)
        sides = np.array([self._diag_side(j, flat) for j in range(len(self.triangulation))]).reshape(-1, flat.shape[0])
        csides = np.array([self._diag_side(j, self.centers) for j in range(len(self.triangulation))]).reshape(-1, len(self.tris))
        out = np.full(flat.shape[0], -1, dtype=int)
        on_diag = (np.abs(sides) < tol).any(axis=0) if sides.size else np.zeros(flat.shape[0], bool)
        for k, t in enumerate(self.tris):
            ok = np.ones(flat.shape[0], bool)
            for j, (a, b) in enumerate(self.triangulation):
                if a in t and b in t:
                    ok &= np.sign(sides[j]) == np.sign(csides[j, k])
            out[ok & (out < 0)] = k
        out[on_diag] = -1
        if strict and (out < 0).any():
            raise PolygonError("point on a diagonal; perturb it")
        return out.reshape(shape)

    def cocycle_between(self, k0: int, k1: int) -> Mobius:
        return self.region_maps[k0].inverse() @ self.region_maps[k1]


def _side_value(p, q, P):
    """Signed function vanishing on the geodesic (p, q) of the vertical plane y=0."""
    P = np.asarray(P, dtype=float)
    x, z = P[..., 0], P[..., 2]
    if p is INF or q is INF:
        f = q if p is INF else p
        return x - f.real
    c = 0.5 * (p.real + q.real)
    r = 0.5 * abs(p.real - q.real)
    return ((x - c) ** 2 + z ** 2 - r * r) / (r + abs(c) + 1.0)


def _triangle_center(xi, t):
    g = normalize_triple(xi[t[0]], xi[t[1]], xi[t[2]])
    return mobius_array(g.inverse(), np.array([0.5, 0.0, math.sqrt(3) / 2]))


def bending_cocycle(data: BendingData, x0, x) -> Mobius:
    """B(x0, x): rotations of the diagonals separating x0 from x, in crossing order."""
    p = np.asarray(x0.as_array() if isinstance(x0, PointH3) else x0, dtype=float)
    q = np.asarray(x.as_array() if isinstance(x, PointH3) else x, dtype=float)
    k0 = int(data.region_of(p[None])[0])
    k1 = int(data.region_of(q[None])[0])
    return data.cocycle_between(k0, k1)


def straighten(P: TwistedIdealPolygon, triangulation=None):
    params = to_params(P, triangulation)
    P0 = from_params(ShearBendParams(params.n, params.triangulation, tuple(abs(c) for c in params.values)))
    angles = [float(np.angle(c)) for c in params.values]
    return P0, BendingData.build(P0, params.triangulation, angles)


def apply_bending(P: TwistedIdealPolygon, triangulation, angles, base=None) -> TwistedIdealPolygon:
    """Rotate the vertices region by region about the diagonals of P itself."""
    data = BendingData.build(P, triangulation, angles, base)
    out = [None] * P.n
    for k, t in enumerate(data.tris):
        for v in t:
            if out[v] is None:
                out[v] = apply_mobius(data.region_maps[k], P.vertices[v])
    return TwistedIdealPolygon(out)


def bend(P0: TwistedIdealPolygon, data: BendingData, check_planar=True) -> TwistedIdealPolygon:
    if check_planar and not is_planar(P0):
        raise PolygonError("bend expects a planar polygon")
    return apply_bending(P0, data.triangulation, data.angles, data.base)


def polygons_equivalent(P: TwistedIdealPolygon, Q: TwistedIdealPolygon, tol=1e-8) -> bool:
    if P.n != Q.n:
        return False
    a, b = P.normalized().vertices, Q.normalized().vertices
    return all(ideal_close(u, v, tol) for u, v in zip(a, b))


def random_polygon(rng: np.random.Generator, n: int, planar=False) -> TwistedIdealPolygon:
    """Random polygon built from parameters of moderate size (well conditioned)."""
    mod = np.exp(rng.uniform(-1.0, 1.0, n - 3))
    ang = np.zeros(n - 3) if planar else rng.uniform(-0.9 * np.pi, 0.9 * np.pi, n - 3)
    vals = tuple(complex(m * np.exp(1j * a)) for m, a in zip(mod, ang))
    P = from_params(ShearBendParams(n, tuple(fan(n)), vals))
    g = Mobius.from_entries(*(rng.normal(size=4) + 1j * rng.normal(size=4)))
    return P.mapped(g)


# ------------------------------------------------------------ cusp charts

@dataclass(frozen=True)
class CuspChart:
    """m sends vertex i to INF and its neighbours i-1, i+1 to 0 and 1.

    The incident sides become the vertical lines over 0 and 1, so every cusp
    has width 1 in its chart; t0 is the height of the horoball boundary.
    """

    index: int
    m: Mobius
    t0: float

    def width(self) -> float:
        return 1.0


def cusp_chart(P: TwistedIdealPolygon, i: int, t0: float = 1.0) -> CuspChart:
    _require_valid(P)
    n = P.n
    i = i % n
    xi = P.vertices
    m = normalize_triple(xi[(i - 1) % n], xi[(i + 1) % n], xi[i])
    return CuspChart(i, m, float(t0))


def cusp_isometry(P: TwistedIdealPolygon, Q: TwistedIdealPolygon, i: int) -> Mobius:
    """Isometry carrying the cusp of P at vertex i onto the cusp of Q at vertex i."""
    return cusp_chart(Q, i).m.inverse() @ cusp_chart(P, i).m
