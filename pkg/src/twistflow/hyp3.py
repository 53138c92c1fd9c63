"""Hyperbolic 3-space in the upper half-space model.

Points are triples (x, y, z) with z > 0 and metric (dx^2 + dy^2 + dz^2)/z^2.
Boundary points are complex numbers or the marker ``INF``.  Isometries are
PSL(2, C) matrices acting on the boundary by fractional linear maps and on
the interior by the Poincare extension, written with quaternions: for
p = w + z j,  g.p = (a p + b)(c p + d)^{-1}.

Scalar helpers work on the small value types below; the ``*_array``
variants take stacked coordinates of shape (..., 3) and are what the grid
code uses.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.spatial import ConvexHull


class GeometryError(ValueError):
    """Invalid input to a geometric operation."""


class _Infinity:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INF"

    def __reduce__(self):
        return (_Infinity, ())


INF = _Infinity()
IdealPoint = Union[complex, _Infinity]


def is_inf(p) -> bool:
    return p is INF


def as_ideal(p) -> IdealPoint:
    """Coerce a number (or "inf") to an ideal point, rejecting NaN."""
    if p is INF or (isinstance(p, str) and p.strip().lower() in ("inf", "infinity", "oo")):
        return INF
    w = complex(p)
    if not (math.isfinite(w.real) and math.isfinite(w.imag)):
        if cmath.isnan(w):
            raise GeometryError("ideal point is NaN")
        return INF
    return w


def ideal_close(p, q, tol=1e-9) -> bool:
    """Equality of ideal points, comparing large values chordally."""
    if p is INF or q is INF:
        if p is INF and q is INF:
            return True
        other = q if p is INF else p
        return abs(other) > 1.0 / tol
    return abs(p - q) <= tol * max(1.0, abs(p), abs(q))


@dataclass(frozen=True)
class PointH3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise GeometryError(f"non-finite point {self}")
        if self.z <= 0:
            raise GeometryError(f"point below the boundary: z={self.z}")

    @property
    def w(self) -> complex:
        return complex(self.x, self.y)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @classmethod
    def from_array(cls, a) -> "PointH3":
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class Mobius:
    """Element of PSL(2, C), stored with ad - bc = 1."""

    a: complex
    b: complex
    c: complex
    d: complex

    @classmethod
    def from_entries(cls, a, b, c, d) -> "Mobius":
        det = a * d - b * c
        if det == 0:
            raise GeometryError("singular matrix")
        s = cmath.sqrt(det)
        return cls(a / s, b / s, c / s, d / s)

    @classmethod
    def identity(cls) -> "Mobius":
        return cls(1 + 0j, 0j, 0j, 1 + 0j)

    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]], dtype=complex)

    @classmethod
    def from_matrix(cls, m) -> "Mobius":
        return cls.from_entries(m[0][0], m[0][1], m[1][0], m[1][1])

    def __matmul__(self, other: "Mobius") -> "Mobius":
        return Mobius.from_matrix(self.matrix() @ other.matrix())

    def inverse(self) -> "Mobius":
        return Mobius(self.d, -self.b, -self.c, self.a)

    def det(self) -> complex:
        return self.a * self.d - self.b * self.c

    def close_to(self, other: "Mobius", tol=1e-10) -> bool:
        m1, m2 = self.matrix(), other.matrix()
        return min(np.abs(m1 - m2).max(), np.abs(m1 + m2).max()) < tol

    def __call__(self, p):
        return apply_mobius(self, p)


@dataclass(frozen=True)
class GeodesicLine:
    p: IdealPoint
    q: IdealPoint

    def __post_init__(self):
        if ideal_close(self.p, self.q, 1e-14):
            raise GeometryError("geodesic endpoints coincide")

    @property
    def endpoints(self):
        return (self.p, self.q)


@dataclass(frozen=True)
class GeodesicPlane:
    """A totally geodesic plane with a chosen closed half-space.

    ``kind`` is "hemisphere" (``center``, ``radius``) or "vertical"
    (boundary line through ``center`` with unit ``direction``).  The signed
    distance is positive on the far side of the selected half-space, so
    max(signed, 0) is the distance to that half-space.
    """

    kind: str
    center: complex
    radius: float = 0.0
    direction: complex = 1.0
    sign: float = 1.0

    def __post_init__(self):
        if self.kind == "hemisphere" and not self.radius > 0:
            raise GeometryError("hemisphere radius must be positive")
        if self.kind == "vertical" and abs(abs(self.direction) - 1.0) > 1e-12:
            raise GeometryError("direction must have unit modulus")
        if self.kind not in ("hemisphere", "vertical"):
            raise GeometryError(f"unknown plane kind {self.kind}")

    def flipped(self) -> "GeodesicPlane":
        return GeodesicPlane(self.kind, self.center, self.radius, self.direction, -self.sign)


# ---------------------------------------------------------------- distance

def dist(p: PointH3, q: PointH3) -> float:
    """Hyperbolic distance, via sinh(d/2) = |p - q| / (2 sqrt(z_p z_q))."""
    dx, dy, dz = p.x - q.x, p.y - q.y, p.z - q.z
    r = math.sqrt(dx * dx + dy * dy + dz * dz)
    return 2.0 * math.asinh(r / (2.0 * math.sqrt(p.z * q.z)))


def dist_array(P, Q) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    r = np.sqrt(((P - Q) ** 2).sum(axis=-1))
    return 2.0 * np.arcsinh(r / (2.0 * np.sqrt(P[..., 2] * Q[..., 2])))


# ------------------------------------------------------------- isometries

def _boundary(g: Mobius, p: IdealPoint) -> IdealPoint:
    if p is INF:
        return INF if g.c == 0 else g.a / g.c
    den = g.c * p + g.d
    num = g.a * p + g.b
    if den == 0:
        return INF
    return num / den


def apply_mobius(g: Mobius, p):
    """Act on an ideal point (fractional linear) or a PointH3 (extension)."""
    if isinstance(p, PointH3):
        w, z = p.w, p.z
        cwd = g.c * w + g.d
        den = abs(cwd) ** 2 + abs(g.c) ** 2 * z * z
        nw = ((g.a * w + g.b) * cwd.conjugate() + g.a * g.c.conjugate() * z * z) / den
        return PointH3(nw.real, nw.imag, z / den)
    return _boundary(g, as_ideal(p))


def mobius_array(g: Mobius, P) -> np.ndarray:
    """Poincare extension applied to stacked points of shape (..., 3)."""
    P = np.asarray(P, dtype=float)
    w = P[..., 0] + 1j * P[..., 1]
    z = P[..., 2]
    cwd = g.c * w + g.d
    den = np.abs(cwd) ** 2 + abs(g.c) ** 2 * z * z
    nw = ((g.a * w + g.b) * np.conj(cwd) + g.a * np.conj(g.c) * z * z) / den
    return np.stack([nw.real, nw.imag, z / den], axis=-1)


def mobius_boundary_array(g: Mobius, w) -> np.ndarray:
    w = np.asarray(w, dtype=complex)
    return (g.a * w + g.b) / (g.c * w + g.d)


def normalize_triple(p1, p2, p3) -> Mobius:
    """The Mobius map sending (p1, p2, p3) to (0, 1, INF)."""
    p1, p2, p3 = as_ideal(p1), as_ideal(p2), as_ideal(p3)
    for u, v in ((p1, p2), (p1, p3), (p2, p3)):
        if ideal_close(u, v, 1e-14):
            raise GeometryError("normalize_triple needs three distinct points")
    if p1 is INF:
        return Mobius.from_entries(0, p2 - p3, 1, -p3)
    if p2 is INF:
        return Mobius.from_entries(1, -p1, 1, -p3)
    if p3 is INF:
        return Mobius.from_entries(1, -p1, 0, p2 - p1)
    k1 = p2 - p3
    k2 = p2 - p1
    return Mobius.from_entries(k1, -p1 * k1, k2, -p3 * k2)


def mobius_from_triples(src, dst) -> Mobius:
    """Map sending the triple ``src`` to the triple ``dst``."""
    return normalize_triple(*dst).inverse() @ normalize_triple(*src)


def send_to_zero_inf(a: IdealPoint, b: IdealPoint) -> Mobius:
    """Some Mobius map with a -> 0 and b -> INF."""
    a, b = as_ideal(a), as_ideal(b)
    if ideal_close(a, b, 1e-14):
        raise GeometryError("degenerate axis")
    if b is INF:
        return Mobius.from_entries(1, -a, 0, 1)
    if a is INF:
        return Mobius.from_entries(0, 1, 1, -b)
    return Mobius.from_entries(1, -a, 1, -b)


def elliptic_about_axis(axis: GeodesicLine, angle: float) -> Mobius:
    """Rotation by ``angle`` about the geodesic from axis.p to axis.q.

    Conjugate of z -> e^{i angle} z by a map sending axis.p to 0 and axis.q
    to infinity; the sense of rotation is counterclockwise seen from axis.q.
    """
    g = send_to_zero_inf(axis.p, axis.q)
    h = cmath.exp(0.5j * angle)
    r = Mobius(h, 0j, 0j, 1 / h)
    return g.inverse() @ r @ g


def cross_ratio(p1, p2, p3, p4):
    """cr = ((p1 - p3)(p2 - p4)) / ((p1 - p4)(p2 - p3)).

    A point at INF drops the two factors that contain it, e.g.
    cr(0, 1, INF, lam) = (lam - 1)/lam.  Returns INF when only the
    denominator vanishes.
    """
    pts = [as_ideal(p) for p in (p1, p2, p3, p4)]
    if sum(p is INF for p in pts) > 1:
        raise GeometryError("degenerate quadruple (two points at infinity)")

    def diff(i, j):
        if pts[i] is INF or pts[j] is INF:
            return None
        return pts[i] - pts[j]

    num = [diff(0, 2), diff(1, 3)]
    den = [diff(0, 3), diff(1, 2)]
    n = 1 + 0j
    for f in num:
        if f is not None:
            n *= f
    d = 1 + 0j
    for f in den:
        if f is not None:
            d *= f
    if abs(d) == 0:
        if abs(n) == 0:
            raise GeometryError("degenerate quadruple (0/0 cross ratio)")
        return INF
    return n / d


# ------------------------------------------------------ lines and planes

def _rotation_to_vertical(line: GeodesicLine) -> Mobius:
    return send_to_zero_inf(line.p, line.q)


def dist_to_line(p: PointH3, line: GeodesicLine) -> float:
    """Distance from a point to a geodesic: cosh d = |P|/z after normalizing."""
    q = apply_mobius(_rotation_to_vertical(line), p)
    return math.asinh(math.hypot(q.x, q.y) / q.z)


def dist_to_line_array(P, line: GeodesicLine) -> np.ndarray:
    Q = mobius_array(_rotation_to_vertical(line), P)
    h = np.hypot(Q[..., 0], Q[..., 1])
    # asinh(|w|/z) equals acosh(|P|/z) and keeps precision near the axis
    return np.arcsinh(h / Q[..., 2])


def signed_plane_dist_array(P, plane: GeodesicPlane) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    w = P[..., 0] + 1j * P[..., 1]
    z = P[..., 2]
    if plane.kind == "hemisphere":
        s = (np.abs(w - plane.center) ** 2 + z * z - plane.radius ** 2) / (2 * plane.radius * z)
    else:
        normal = -1j * plane.direction
        s = ((w - plane.center) * np.conj(normal)).real / z
    return plane.sign * np.arcsinh(s)


def signed_plane_dist(p: PointH3, plane: GeodesicPlane) -> float:
    """Signed distance to the plane, positive outside the chosen half-space.

    Hemisphere (c, r): sinh(sd) = (|p - c|^2 - r^2) / (2 r z); vertical
    plane: sinh(sd) = (signed Euclidean distance to the line) / z.
    """
    return float(signed_plane_dist_array(p.as_array(), plane))


def plane_through(p1, p2, p3) -> GeodesicPlane:
    """The geodesic plane spanned by three distinct ideal points."""
    pts = [as_ideal(p) for p in (p1, p2, p3)]
    finite = [p for p in pts if p is not INF]
    if len(finite) == 2:
        a, b = finite
        d = (b - a) / abs(b - a)
        return GeodesicPlane("vertical", a, direction=d)
    a, b, c = finite
    # collinear points give a vertical plane
    cr = ((b - a) * (c - a).conjugate()).imag
    scale = max(abs(b - a), abs(c - a)) ** 2
    if abs(cr) <= 1e-13 * scale:
        d = (b - a) / abs(b - a)
        return GeodesicPlane("vertical", a, direction=d)
    # circumcenter
    A = np.array([[2 * (b - a).real, 2 * (b - a).imag], [2 * (c - a).real, 2 * (c - a).imag]])
    rhs = np.array([abs(b) ** 2 - abs(a) ** 2, abs(c) ** 2 - abs(a) ** 2])
    x, y = np.linalg.solve(A, rhs)
    center = complex(x, y)
    return GeodesicPlane("hemisphere", center, radius=abs(a - center))


def ideal_side(p: IdealPoint, plane: GeodesicPlane, tol=1e-10) -> int:
    """+1 / -1 / 0 for an ideal point outside / inside / on the plane."""
    p = as_ideal(p)
    if plane.kind == "hemisphere":
        if p is INF:
            return int(plane.sign)
        s = (abs(p - plane.center) ** 2 - plane.radius ** 2) / (plane.radius ** 2)
    else:
        if p is INF:
            return 0
        normal = -1j * plane.direction
        s = ((p - plane.center) * normal.conjugate()).real / max(1.0, abs(p))
    if abs(s) <= tol:
        return 0
    return int(np.sign(s) * plane.sign)


# -------------------------------------------------------- Klein model hull

def to_sphere(p: IdealPoint) -> np.ndarray:
    """Inverse stereographic projection of an ideal point onto S^2."""
    p = as_ideal(p)
    if p is INF:
        return np.array([0.0, 0.0, 1.0])
    n2 = abs(p) ** 2
    return np.array([2 * p.real, 2 * p.imag, n2 - 1]) / (n2 + 1)


def h3_to_ball(P) -> np.ndarray:
    """Upper half-space to Poincare ball, compatible with ``to_sphere``."""
    P = np.asarray(P, dtype=float)
    x, y, z = P[..., 0], P[..., 1], P[..., 2]
    den = x * x + y * y + (z + 1) ** 2
    return np.stack([2 * x, 2 * y, x * x + y * y + z * z - 1], axis=-1) / den[..., None]


def ball_to_h3(B) -> np.ndarray:
    B = np.asarray(B, dtype=float)
    b1, b2, b3 = B[..., 0], B[..., 1], B[..., 2]
    den = b1 * b1 + b2 * b2 + (1 - b3) ** 2
    return np.stack([2 * b1, 2 * b2, 1 - (B ** 2).sum(axis=-1)], axis=-1) / den[..., None]


def _plane_from_klein(n: np.ndarray, k: float) -> GeodesicPlane:
    """Geodesic plane whose boundary circle is S^2 cut by n.X = k."""
    n1, n2, n3 = n
    a = n3 - k
    if abs(a) < 1e-12:
        # boundary is the line 2 n1 x + 2 n2 y = n3 + k
        nn = complex(n1, n2)
        m = abs(nn)
        point = (n3 + k) / (2 * m) * (nn / m)
        direction = 1j * nn / m
        return GeodesicPlane("vertical", point, direction=direction)
    center = -complex(n1, n2) / a
    r2 = abs(center) ** 2 + (n3 + k) / a
    return GeodesicPlane("hemisphere", center, radius=math.sqrt(max(r2, 0.0)))


def _orient(plane: GeodesicPlane, inside_pts: Sequence[IdealPoint]) -> GeodesicPlane:
    for p in inside_pts:
        s = ideal_side(p, plane)
        if s != 0:
            return plane if s < 0 else plane.flipped()
    return plane


def hull_faces(vertices: Sequence, tol=1e-10) -> list:
    """Supporting planes of the convex hull of ideal points.

    Ideal points are sent to the unit sphere (the Klein model boundary), the
    Euclidean hull is taken there and each supporting face is turned back
    into a geodesic plane oriented so the hull lies in its half-space.
    Coplanar inputs give the two half-spaces bounded by their common plane.
    """
    pts = []
    for v in vertices:
        v = as_ideal(v)
        if not any(ideal_close(v, u, 1e-12) for u in pts):
            pts.append(v)
    if len(pts) < 3:
        raise GeometryError("hull needs at least three distinct ideal points")
    X = np.array([to_sphere(p) for p in pts])
    c = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - c)
    if len(pts) == 3 or s[-1] <= tol * max(1.0, s[0]):
        plane = plane_through(*pts[:3])
        return [plane, plane.flipped()]
    hull = ConvexHull(X)
    faces = []
    seen = []
    for eq in hull.equations:
        n, off = eq[:3], eq[3]
        k = -off
        if any(np.abs(np.append(n, k) - e).max() < 1e-9 for e in seen):
            continue
        seen.append(np.append(n, k))
        on = [p for p, x in zip(pts, X) if abs(n @ x - k) <= 1e-9]
        off_face = [p for p, x in zip(pts, X) if abs(n @ x - k) > 1e-9]
        if len(on) >= 3:
            plane = plane_through(*on[:3])
        else:
            plane = _plane_from_klein(n, k)
        faces.append(_orient(plane, off_face))
    return faces


def hull_gauge_array(P, faces) -> np.ndarray:
    if not faces:
        raise GeometryError("empty face list")
    vals = np.stack([signed_plane_dist_array(P, f) for f in faces], axis=0)
    return np.maximum(vals.max(axis=0), 0.0)


def hull_gauge(p: PointH3, faces) -> float:
    """max over faces of the distance to the face's half-space."""
    return float(hull_gauge_array(p.as_array(), faces))


# ------------------------------------------------------- curves and fits

def log_map_array(P, Q) -> np.ndarray:
    """Logarithm log_P(Q) in the orthonormal frame (Euclidean basis / z)."""
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    z1, z2 = P[..., 2], Q[..., 2]
    dw = (Q[..., 0] - P[..., 0]) + 1j * (Q[..., 1] - P[..., 1])
    D2 = np.abs(dw) ** 2
    vert = 0.5 * (D2 + z2 * z2 - z1 * z1)
    hor = z1 * dw
    nrm = np.sqrt(z1 * z1 * D2 + vert * vert)
    d = dist_array(P, Q)
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(nrm > 0, d / np.where(nrm > 0, nrm, 1.0), 0.0)
    return np.stack([hor.real * k, hor.imag * k, vert * k], axis=-1)


def exp_map_array(P, V) -> np.ndarray:
    """Exponential map with V given in the orthonormal frame at P."""
    P = np.asarray(P, dtype=float)
    V = np.asarray(V, dtype=float)
    L = np.sqrt((V ** 2).sum(axis=-1))
    safe = np.where(L > 0, L, 1.0)
    u = V / safe[..., None]
    D = np.cosh(L) - u[..., 2] * np.sinh(L)
    sh = np.sinh(L) / D
    z = P[..., 2]
    out = np.stack([P[..., 0] + z * u[..., 0] * sh, P[..., 1] + z * u[..., 1] * sh, z / D], axis=-1)
    return np.where((L > 0)[..., None], out, P)


def geodesic_interp_array(A, B, t) -> np.ndarray:
    """Point at fraction t along the geodesic segment from A to B."""
    V = log_map_array(A, B)
    return exp_map_array(A, V * np.asarray(t, dtype=float)[..., None])


def polyline_curvature(points) -> np.ndarray:
    """Discrete geodesic curvature at interior samples of a polyline.

    At each interior sample the neighbours are pulled back by the log map;
    with one-sided arclengths s-, s+ the curvature vector is
    2 (v+/s+ + v-/s-) / (s+ + s-).
    """
    P = np.array([p.as_array() if isinstance(p, PointH3) else p for p in points], dtype=float)
    if len(P) < 3:
        raise GeometryError("need at least three points")
    step = dist_array(P[1:], P[:-1])
    if np.any(step <= 0):
        raise GeometryError("duplicate consecutive points")
    C = P[1:-1]
    vm = log_map_array(C, P[:-2])
    vp = log_map_array(C, P[2:])
    sm = step[:-1]
    sp = step[1:]
    K = 2.0 * (vp / sp[:, None] + vm / sm[:, None]) / (sp + sm)[:, None]
    return np.sqrt((K ** 2).sum(axis=-1))


def geodesic_through(p: PointH3, q: PointH3) -> GeodesicLine:
    """The complete geodesic through two interior points."""
    dw = q.w - p.w
    D = abs(dw)
    if D <= 1e-15 * max(p.z, q.z):
        return GeodesicLine(p.w, INF)
    e = dw / D
    sc = (D * D + q.z ** 2 - p.z ** 2) / (2 * D)
    r = math.hypot(sc, p.z)
    return GeodesicLine(p.w + e * (sc - r), p.w + e * (sc + r))


def fit_geodesic(points):
    """Geodesic through the extreme samples and the max distance to it."""
    P = [p if isinstance(p, PointH3) else PointH3.from_array(p) for p in points]
    if len(P) < 2:
        raise GeometryError("need at least two points")
    A = np.array([p.as_array() for p in P])
    far = dist_array(A[0], A[-1])
    if far <= 1e-14:
        raise GeometryError("points coincide")
    line = geodesic_through(P[0], P[-1])
    res = float(dist_to_line_array(A, line).max())
    return line, res


def random_mobius(rng: np.random.Generator, scale=1.0) -> Mobius:
    e = rng.normal(size=4) + 1j * rng.normal(size=4)
    return Mobius.from_entries(*(scale * e))
