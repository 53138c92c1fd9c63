"""Polynomial quadratic differentials q(z) dz^2.

Conventions: coefficients are stored in ascending order, ``coeffs[k]`` is the
coefficient of z^k.  Natural coordinates are taken for the 4q metric, i.e.
xi(z) = integral of 2 sqrt(q), so that |d xi|^2 = 4|q| |dz|^2.  In these
coordinates the collapse map (x, y) -> (0, 0, e^x) has Hopf differential q.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class QDError(ValueError):
    pass


class BranchError(QDError):
    """Continuation of sqrt(q) failed along a path (it came too close to a zero)."""

    def __init__(self, msg, path=None):
        super().__init__(msg)
        self.path = path


@dataclass(frozen=True)
class PolyQD:
    coeffs: tuple

    def __init__(self, coeffs: Sequence[complex]):
        c = [complex(v) for v in coeffs]
        while len(c) > 1 and c[-1] == 0:
            c.pop()
        if not c or c[-1] == 0:
            raise QDError("leading coefficient must be nonzero")
        object.__setattr__(self, "coeffs", tuple(c))

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def lead(self) -> complex:
        return self.coeffs[-1]

    def __call__(self, z):
        return eval_q(self, z)

    def derivative(self) -> "PolyQD | None":
        if self.degree == 0:
            return None
        return PolyQD([k * a for k, a in enumerate(self.coeffs)][1:])

    def shifted(self, s: complex) -> "PolyQD":
        """The differential z -> q(z + s)."""
        p = np.polynomial.Polynomial(self.coeffs)
        return PolyQD(p(np.polynomial.Polynomial([s, 1])).coef)

    def scaled(self, k: complex) -> "PolyQD":
        return PolyQD([k * a for a in self.coeffs])


def eval_q(q: PolyQD, z):
    """Horner evaluation, works on scalars and arrays."""
    z = np.asarray(z, dtype=complex)
    out = np.full(z.shape, q.coeffs[-1], dtype=complex)
    for a in reversed(q.coeffs[:-1]):
        out = out * z + a
    return out if out.shape else complex(out)


def zeros(q: PolyQD) -> list:
    """Zeros from companion-matrix eigenvalues, polished by Newton."""
    if q.degree == 0:
        return []
    roots = np.roots(list(reversed(q.coeffs)))
    dq = q.derivative()
    scale = max(abs(a) for a in q.coeffs)
    out = []
    for r in roots:
        z = complex(r)
        for _ in range(50):
            f = eval_q(q, z)
            if abs(f) < 1e-15 * scale:
                break
            d = eval_q(dq, z)
            if d == 0:
                break
            step = f / d
            if not np.isfinite(step):
                break
            z_new = z - step
            if abs(eval_q(q, z_new)) >= abs(f):
                break
            z = z_new
        out.append(z)
    return sorted(out, key=lambda w: (round(w.real, 12), round(w.imag, 12)))


def zero_centers(q: PolyQD, tol=1e-5) -> list:
    """Distinct zeros, with numerically split multiple roots merged."""
    centers = []
    for z in zeros(q):
        for i, (c, k) in enumerate(centers):
            if abs(z - c) < tol * max(1.0, abs(c)):
                centers[i] = ((c * k + z) / (k + 1), k + 1)
                break
        else:
            centers.append((z, 1))
    return [c for c, _ in centers]


def horizontal_directions(q: PolyQD) -> np.ndarray:
    """The m+2 angles with arg(a_m) + (m+2) theta = 0 mod 2 pi, sorted in [0, 2 pi)."""
    m = q.degree
    base = -np.angle(q.lead) / (m + 2)
    th = np.mod(base + 2 * np.pi * np.arange(m + 2) / (m + 2), 2 * np.pi)
    return np.sort(th)


def vertical_directions(q: PolyQD) -> np.ndarray:
    th = horizontal_directions(q)
    nxt = np.append(th[1:], th[0] + 2 * np.pi)
    return np.mod(0.5 * (th + nxt), 2 * np.pi)


# ------------------------------------------------------ path integration

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)
_GL_X = 0.5 * (_GL_X + 1)
_GL_W = 0.5 * _GL_W


def _continue_branch(s, prev):
    """Flip the signs of s so that each entry is close to its predecessor."""
    flip = (s * np.conj(prev)).real < 0
    s = np.where(flip, -s, s)
    cos = (s * np.conj(prev)).real / np.maximum(np.abs(s) * np.abs(prev), 1e-300)
    return s, cos


def _integrate_segment(q, w_of_t, dw_of_t, n_panels, s_prev, centers=(), guard=0.0):
    """Integrate 2 sqrt(q) dw along w(t), t in [0, 1], vectorized over targets.

    ``worst`` collects the smallest cosine between successive branch values;
    a path passing within ``guard`` of a zero gets worst = -1.
    """
    total = np.zeros(s_prev.shape, dtype=complex)
    worst = np.ones(s_prev.shape)
    for p in range(n_panels):
        t = (p + _GL_X) / n_panels
        for ti, wi in zip(t, _GL_W):
            w = w_of_t(ti)
            s = np.sqrt(eval_q(q, w) + 0j)
            s, cos = _continue_branch(s, s_prev)
            worst = np.minimum(worst, cos)
            for c in centers:
                worst = np.where(np.abs(w - c) < guard, -1.0, worst)
            total += wi / n_panels * 2 * s * dw_of_t(ti)
            s_prev = s
    return total, s_prev, worst


def _panels(length, dmin):
    return int(min(400, max(2, math.ceil(2.0 * length / max(dmin, 1e-12)))))


def natural_coordinate(q: PolyQD, anchor: complex, s0: complex, targets, strict=True):
    """xi(z) = integral from anchor to z of 2 sqrt(q), branch s0 at the anchor.

    The path runs along the circle |w| = |anchor| to the target's argument
    (the short way) and then radially.  Returns (xi, ok) where ok flags
    targets whose branch continuation stayed unambiguous.
    """
    z = np.asarray(targets, dtype=complex)
    shape = z.shape
    z = z.ravel()
    rho = abs(anchor)
    a0 = np.angle(anchor)
    phi = np.angle(z)
    dphi = np.mod(phi - a0 + np.pi, 2 * np.pi) - np.pi
    r = np.abs(z)
    zc = zero_centers(q)
    dmin_arc = min([abs(rho - abs(c)) for c in zc] + [rho])
    guard = 1e-3 * max(rho, 1.0)
    s_prev = np.full(z.shape, s0, dtype=complex)
    n_arc = _panels(rho * np.abs(dphi).max(initial=0.0), dmin_arc)
    arc, s_prev, w1 = _integrate_segment(
        q,
        lambda t: rho * np.exp(1j * (a0 + t * dphi)),
        lambda t: 1j * dphi * rho * np.exp(1j * (a0 + t * dphi)),
        n_arc,
        s_prev,
        zc,
        guard,
    )
    start = rho * np.exp(1j * phi)
    r0 = max([abs(c) for c in zc], default=0.0)
    n_rad = _panels(np.abs(r - rho).max(initial=0.0), max(rho - r0, 0.25 * rho))
    rad, _, w2 = _integrate_segment(
        q,
        lambda t: start + t * (z - start),
        lambda t: z - start,
        n_rad,
        s_prev,
        zc,
        guard,
    )
    ok = np.minimum(w1, w2) > 0.5
    for c in zc:
        # exact distance from the zero to the radial piece and to the arc
        d = z - start
        t = np.clip(((c - start) * np.conj(d)).real / np.maximum(np.abs(d) ** 2, 1e-300), 0, 1)
        ok &= np.abs(start + t * d - c) >= guard
        rel = np.mod(np.angle(c) - a0 + np.pi, 2 * np.pi) - np.pi
        on_arc = (np.sign(rel) == np.sign(dphi)) & (np.abs(rel) <= np.abs(dphi))
        ok &= ~(on_arc & (abs(abs(c) - rho) < guard))
    if strict and not ok.all():
        bad = z[~ok][0]
        raise BranchError(f"branch tracking failed on the path to {bad}", path=(anchor, bad))
    return (arc + rad).reshape(shape), ok.reshape(shape)


# ------------------------------------------------------------- charts

@dataclass
class HalfPlaneChart:
    """Natural chart of a horizontal (H) or vertical (C) half-plane.

    ``forward`` gives xi = X + iY; the half-plane is Y > level for a
    horizontal chart and X > level for a vertical one.  The anchor sits on
    the ray of the chart's central direction at radius ``rho``.
    """

    q: PolyQD
    kind: str
    index: int
    angle: float
    rho: float
    level: float
    s0: complex = 1.0
    quarter: float = 0.0

    @property
    def anchor(self) -> complex:
        return self.rho * np.exp(1j * self.angle)

    def forward(self, z, strict=True):
        xi, ok = natural_coordinate(self.q, self.anchor, self.s0, z, strict=strict)
        return xi if strict else (xi, ok)

    def contains(self, z):
        xi, ok = self.forward(z, strict=False)
        inside = xi.imag > self.level if self.kind == "horizontal" else xi.real > self.level
        return inside & ok

    def inverse(self, xi, steps=64):
        """z with forward(z) = xi, by integrating dz/dxi = 1/(2 sqrt q) then Newton."""
        xi = np.asarray(xi, dtype=complex)
        z = np.full(xi.shape, self.anchor, dtype=complex)
        s = np.full(xi.shape, self.s0, dtype=complex)
        h = xi / steps

        def f(zz, ss):
            s_new = np.sqrt(eval_q(self.q, zz) + 0j)
            s_new, _ = _continue_branch(s_new, ss)
            return 1.0 / (2 * s_new), s_new

        for _ in range(steps):
            k1, s = f(z, s)
            k2, _ = f(z + 0.5 * h * k1, s)
            k3, _ = f(z + 0.5 * h * k2, s)
            k4, s = f(z + h * k3, s)
            z = z + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6
        for _ in range(2):
            val, _ = natural_coordinate(self.q, self.anchor, self.s0, z, strict=False)
            s_here, _ = _continue_branch(np.sqrt(eval_q(self.q, z) + 0j), s)
            z = z - (val - xi) / (2 * s_here)
        return z

    def leaf(self, t):
        """Points of the boundary leaf, parametrized by the free coordinate t."""
        t = np.asarray(t, dtype=float)
        if self.kind == "horizontal":
            return self.inverse(t + 1j * self.level)
        return self.inverse(self.level + 1j * t)


def _anchor_branch(q: PolyQD, anchor: complex, target_arg: float) -> complex:
    """Branch of sqrt(q) at the anchor with 2 sqrt(q) e^{i arg} pointing along target_arg."""
    s = complex(np.sqrt(eval_q(q, anchor) + 0j))
    direction = anchor / abs(anchor)
    v = 2 * s * direction
    if math.cos(np.angle(v) - target_arg) < 0:
        s = -s
    return s


def core_radius(q: PolyQD) -> float:
    zc = zero_centers(q)
    return max([abs(c) for c in zc], default=0.0)


def natural_chart(q: PolyQD, kind: str, k: int, R: float, rho: float | None = None) -> HalfPlaneChart:
    """Chart around the k-th horizontal (kind "vertical") or vertical direction.

    A vertical half-plane C_k is centered on the k-th horizontal direction
    (leaves run out to infinity there); a horizontal half-plane H_k is
    centered on the vertical direction between horizontal directions k and
    k + 1.  Outward motion along the central ray is +1 in a C chart and +i in
    an H chart.
    """
    r0 = core_radius(q)
    if rho is None:
        rho = max(1.5 * r0, 0.5 * r0 + 1.0) if r0 > 0 else 1.0
    if rho <= r0 * 1.05:
        raise QDError("anchor radius must lie beyond the zeros")
    if kind == "vertical":
        angle = float(horizontal_directions(q)[k % (q.degree + 2)])
        s0 = _anchor_branch(q, rho * np.exp(1j * angle), 0.0)
    elif kind == "horizontal":
        angle = float(vertical_directions(q)[k % (q.degree + 2)])
        s0 = _anchor_branch(q, rho * np.exp(1j * angle), np.pi / 2)
    else:
        raise QDError(f"unknown chart kind {kind}")
    return HalfPlaneChart(q, kind, k, angle, rho, R, s0)


def decompose(q: PolyQD, R: float, rho: float | None = None) -> list:
    """Cyclic chain C_1, H_1, C_2, H_2, ... of 2(m+2) half-plane charts.

    Each chart's bounding leaf is at natural distance R from its anchor,
    which lies beyond the zeros; the region outside all charts is compact.
    """
    if R <= 0:
        raise QDError("R must be positive")
    n = q.degree + 2
    charts = []
    for k in range(n):
        charts.append(natural_chart(q, "vertical", k, R, rho))
        charts.append(natural_chart(q, "horizontal", k, R, rho))
    # a leaf that runs into a zero shows up as a branch failure on it
    for ch in charts:
        t = np.linspace(-3 * R, 3 * R, 7)
        try:
            ch.leaf(t)
        except (BranchError, FloatingPointError) as exc:
            raise QDError(f"R too small: leaf of chart {ch.kind} {ch.index} meets a zero") from exc
    return charts


# ------------------------------------------------------ smoothed metric

def smoothstep5(s):
    s = np.clip(s, 0.0, 1.0)
    return s ** 3 * (10 - 15 * s + 6 * s * s)


@dataclass
class DomainMetric:
    """Conformal factor sigma: 4|q| away from the zeros, a C^2 blend inside."""

    base: PolyQD
    eps: float
    centers: list = field(default_factory=list)
    caps: list = field(default_factory=list)
    inner: float = 0.5

    def sigma(self, z):
        z = np.asarray(z, dtype=complex)
        out = 4 * np.abs(eval_q(self.base, z))
        for c, cap in zip(self.centers, self.caps):
            s = (np.abs(z - c) / self.eps - self.inner) / (1 - self.inner)
            w = smoothstep5(s)
            out = np.where(s < 1, (1 - w) * cap + w * out, out)
        return out

    __call__ = sigma


def smooth_metric(q: PolyQD, eps: float) -> DomainMetric:
    """Replace 4|q| inside eps-disks around the zeros by a quintic blend to a cap.

    With s = |z - z_j|/eps, the weight rises from 0 at s = 1/2 to 1 at s = 1
    with vanishing first and second derivatives at both ends.
    """
    centers = zero_centers(q)
    for i in range(len(centers)):
        for j in range(i + 1, len(centers)):
            if abs(centers[i] - centers[j]) < 2 * eps:
                raise QDError("smoothing disks overlap")
    caps = []
    for c in centers:
        ring = c + eps * np.exp(1j * np.linspace(0, 2 * np.pi, 64, endpoint=False))
        caps.append(float(np.mean(4 * np.abs(eval_q(q, ring)))))
    return DomainMetric(q, eps, centers, caps)


# ------------------------------------------------------ principal parts

@dataclass(frozen=True)
class PrincipalPart:
    """Terms c_k z^{e_k} of the expansion of sqrt(q) at infinity with e_k >= -1."""

    exponents: tuple
    coeffs: tuple
    sign: int = 1

    def as_array(self):
        return np.array(self.coeffs, dtype=complex)

    def evaluate(self, z):
        z = np.asarray(z, dtype=complex)
        out = np.zeros(z.shape, dtype=complex)
        for e, c in zip(self.exponents, self.coeffs):
            out = out + c * z ** e
        return out


def sqrt_series(b: Sequence[complex], n: int) -> np.ndarray:
    """First n coefficients of sqrt(1 + sum_j b_j t^j) (b[0] is the t^1 term)."""
    u = np.zeros(n, dtype=complex)
    for j, v in enumerate(b[: n - 1]):
        u[j + 1] = v
    s = np.zeros(n, dtype=complex)
    s[0] = 1.0
    for k in range(1, n):
        acc = u[k] - sum(s[j] * s[k - j] for j in range(1, k))
        s[k] = acc / 2
    return s


def principal_part(q: PolyQD) -> PrincipalPart:
    m = q.degree
    nterms = (m + 2) // 2 + 1
    b = [q.coeffs[m - j] / q.lead for j in range(1, m + 1)]
    s = sqrt_series(b, nterms)
    lead = complex(np.sqrt(q.lead + 0j))
    exps = tuple(m / 2 - k for k in range(nterms))
    return PrincipalPart(exps, tuple(complex(lead * c) for c in s))


def pp_distance(p1: PrincipalPart, p2: PrincipalPart, relative=True) -> float:
    """Coefficient-wise max difference up to the global sign of the branch."""
    if p1.exponents != p2.exponents:
        return math.inf
    a, b = p1.as_array(), p2.as_array()
    d = min(np.abs(a - b).max(), np.abs(a + b).max())
    if relative:
        d /= max(np.abs(a).max(), np.abs(b).max(), 1e-300)
    return float(d)


def pp_equal(p1: PrincipalPart, p2: PrincipalPart, tol=1e-9) -> bool:
    return pp_distance(p1, p2) <= tol
