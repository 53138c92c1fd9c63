"""Planar harmonic maps C -> H^2 (the plane y = 0 of H^3) asymptotic to a planar polygon.

Initial guess: in each horizontal half-plane H_k the collapse map onto side
k, (x, y) -> gamma_k(x + t_k) in the natural coordinate of H_k; near the
k-th horizontal direction the images of the two neighbouring collapse maps
are joined by geodesic interpolation with a quintic weight in the angle; the
core disk is filled by a radial geodesic blend to a center point.  The
offsets t_k make the two collapse maps meeting at a vertex sit on the same
horosphere there.

Side k joins vertex k to vertex k + 1 and lives in H_k, the sector between
horizontal directions theta_k and theta_{k+1}; gamma_k(+inf) = vertex k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .flow import DiscreteMap, FlowConfig, FlowError, FlowState, Grid, run
from .hyp3 import INF, Mobius, apply_mobius, geodesic_interp_array, mobius_array, normalize_triple
from .polygon import TwistedIdealPolygon, cusp_chart, is_planar
from .qd import PolyQD, horizontal_directions, natural_chart, smoothstep5


class PlanarError(ValueError):
    pass


# ------------------------------------------------------------ placement

def reposition(P0: TwistedIdealPolygon, iters=200) -> tuple:
    """Move a planar polygon so its conformal barycenter is (0, 0, 1) and no vertex is at INF.

    Returns (polygon, g) with g the Mobius map used; g carries the circle
    through the vertices to the real line.
    """
    if not is_planar(P0):
        raise PlanarError("polygon is not planar")
    Q = P0.normalized()
    g0 = normalize_triple(*P0.vertices[:3])
    v = np.array([complex(x.real, 0) if x is not INF else np.inf for x in Q.vertices])
    # Cayley transform to the disk: zeta = (v - i)/(v + i), INF -> 1
    C = np.array([[1, -1j], [1, 1j]])
    fin = ~np.isinf(v.real)
    zeta = np.ones(v.shape, dtype=complex)
    zeta[fin] = (v[fin] - 1j) / (v[fin] + 1j)
    M = np.eye(2, dtype=complex)
    for _ in range(iters):
        a = 0.5 * zeta.mean()
        if abs(a) < 1e-15:
            break
        D = np.array([[1, -a], [-np.conj(a), 1]])
        zeta = (zeta - a) / (1 - np.conj(a) * zeta)
        M = D @ M
    # rotate the middle of the largest gap to zeta = 1 (that is, to INF)
    ang = np.sort(np.mod(np.angle(zeta), 2 * np.pi))
    gaps = np.diff(np.append(ang, ang[0] + 2 * np.pi))
    k = int(np.argmax(gaps))
    mid = ang[k] + 0.5 * gaps[k]
    rot = np.exp(-0.5j * mid)
    M = np.array([[rot, 0], [0, 1 / rot]]) @ M
    total = np.linalg.inv(C) @ M @ C @ g0.matrix()
    g = Mobius.from_entries(*(complex(v) for v in total.ravel()))
    out = []
    for x in P0.vertices:
        y = apply_mobius(g, x)
        if y is INF or abs(y.imag) > 1e-8 * max(1.0, abs(y)):
            raise PlanarError("placement failed")
        out.append(complex(y.real, 0.0))
    return TwistedIdealPolygon(out), g


# ------------------------------------------------------------ setup

@dataclass
class PlanarSetup:
    P0: TwistedIdealPolygon
    q: PolyQD
    charts: list
    cusps: list
    offsets: np.ndarray
    mismatch: float
    r_core: float
    band: float
    center: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    @property
    def n(self) -> int:
        return self.P0.n


def side_point(setup: PlanarSetup, k: int, s):
    """gamma_k(s): unit-speed parametrization of side k, gamma_k(+inf) = vertex k."""
    s = np.asarray(s, dtype=float)
    pts = np.stack([np.ones_like(s), np.zeros_like(s), np.exp(s)], axis=-1)
    return mobius_array(setup.cusps[k].m.inverse(), pts)


def solve_offsets(r: np.ndarray):
    """t with t_{k-1} + t_k = r_k (cyclic); least squares when n is even."""
    n = len(r)
    A = np.zeros((n, n))
    for k in range(n):
        A[k, k] = 1
        A[k, (k - 1) % n] += 1
    t, *_ = np.linalg.lstsq(A, r, rcond=None)
    return t, float(np.abs(A @ t - r).max())


def planar_setup(P0: TwistedIdealPolygon, q: PolyQD, rho=None, band=0.2, r_core=None) -> PlanarSetup:
    n = P0.n
    if q.degree != n - 2:
        raise PlanarError(f"q must have degree {n - 2} for an {n}-gon, got {q.degree}")
    if not is_planar(P0):
        raise PlanarError("polygon is not planar")
    charts = [natural_chart(q, "horizontal", k, 1.0, rho) for k in range(n)]
    rho = charts[0].rho
    cusps = [cusp_chart(P0, k) for k in range(n)]
    th = horizontal_directions(q)
    r = np.zeros(n)
    for k in range(n):
        zs = 2 * rho * np.exp(1j * th[k]) * np.array([1.0, 1.5])
        ck = charts[(k - 1) % n].forward(zs) + charts[k].forward(zs)
        if abs(ck[0] - ck[1]) > 1e-8 * (1 + abs(ck[0])):
            raise PlanarError("chart transition is not a half-turn; inconsistent branches")
        # height of gamma_{k-1}(0) in the cusp chart of vertex k
        p = mobius_array(cusps[k].m @ cusps[(k - 1) % n].m.inverse(), np.array([1.0, 0.0, 1.0]))
        if abs(p[0]) > 1e-8 * max(1.0, p[2]) or abs(p[1]) > 1e-8 * max(1.0, p[2]):
            raise PlanarError("cusp charts are inconsistent")
        r[k] = math.log(p[2]) - ck[0].real
    t, mismatch = solve_offsets(r)
    if r_core is None:
        r_core = 1.15 * rho
    return PlanarSetup(P0, q, charts, cusps, t, mismatch, r_core, band)


def _sector(setup: PlanarSetup, phi):
    """(k, delta): sector index k with phi in [theta_k, theta_{k+1}) and phi - theta_k."""
    th = horizontal_directions(setup.q)
    n = setup.n
    rel = np.mod(phi - th[0], 2 * np.pi)
    W = 2 * np.pi / n
    k = np.minimum((rel // W).astype(int), n - 1)
    return k, rel - k * W


def collapse_values(setup: PlanarSetup, z) -> np.ndarray:
    """Initial-guess values (..., 3) at points z (|z| >= r_core is where charts are used)."""
    z = np.asarray(z, dtype=complex)
    shape = z.shape
    z = z.ravel()
    n = setup.n
    W = 2 * np.pi / n
    bw = setup.band * W
    out = np.zeros((z.size, 3))
    r = np.abs(z)
    outer = r >= setup.r_core
    zo = np.where(outer, z, setup.r_core * np.exp(1j * np.angle(z)))
    zo = np.where(zo == 0, setup.r_core + 0j, zo)
    k, delta = _sector(setup, np.angle(zo))
    # the neighbouring chart used near each horizontal direction
    near_lo = delta < bw
    near_hi = delta > W - bw
    vals = np.zeros((z.size, 3))
    for j in range(n):
        sel = k == j
        if not sel.any():
            continue
        xi = setup.charts[j].forward(zo[sel])
        vals[sel] = side_point(setup, j, xi.real + setup.offsets[j])
    other = np.zeros((z.size, 3))
    w = np.ones(z.size)
    for j in range(n):
        lo = (k == j) & near_lo  # next to theta_j: blend with side j - 1
        if lo.any():
            jm = (j - 1) % n
            xi = setup.charts[jm].forward(zo[lo])
            other[lo] = side_point(setup, jm, xi.real + setup.offsets[jm])
            w[lo] = smoothstep5(0.5 * (delta[lo] / bw + 1))
        hi = (k == j) & near_hi  # next to theta_{j+1}: blend with side j + 1
        if hi.any():
            jp = (j + 1) % n
            xi = setup.charts[jp].forward(zo[hi])
            other[hi] = side_point(setup, jp, xi.real + setup.offsets[jp])
            w[hi] = smoothstep5(0.5 * ((W - delta[hi]) / bw + 1))
    blend = near_lo | near_hi
    vals[blend] = geodesic_interp_array(other[blend], vals[blend], w[blend])
    out = vals
    inner = ~outer
    if inner.any():
        s = smoothstep5(r[inner] / setup.r_core)
        cen = np.broadcast_to(setup.center, (int(inner.sum()), 3))
        out[inner] = geodesic_interp_array(cen, vals[inner], s)
    out[:, 1] = 0.0
    return out.reshape(shape + (3,))


@dataclass
class PlanarInitial:
    map: DiscreteMap
    setup: PlanarSetup
    labels: np.ndarray  # -1 core, k for sector k


def build_planar_initial(P0: TwistedIdealPolygon, q: PolyQD, grid: Grid, **kw) -> PlanarInitial:
    setup = planar_setup(P0, q, **kw)
    z = grid.z
    h = min(grid.hx, grid.hy)
    if h > 0.5 * setup.r_core:
        raise PlanarError("grid too coarse to resolve the core disk")
    U = collapse_values(setup, z)
    k, _ = _sector(setup, np.angle(z))
    labels = np.where(np.abs(z) >= setup.r_core, k, -1)
    return PlanarInitial(DiscreteMap.from_points(U), setup, labels)


def solve_planar_harmonic(init: PlanarInitial, grid: Grid, cfg: FlowConfig | None = None, **kw) -> FlowState:
    """Flow the initial guess to a harmonic map with Dirichlet data on the ring.

    Planarity holds exactly for the scheme; the y-drift is checked at the end.
    """
    state = FlowState(init.map.copy(), grid)
    out = run(state, cfg, **kw)
    drift = float(np.abs(out.map.U[1]).max())
    if drift > 1e-9:
        raise FlowError(f"planar flow left the plane by {drift}")
    out.map.U[1] = 0.0
    return out


# ------------------------------------------------------------ vortex residual

def _complex_derivs(m: DiscreteMap, grid: Grid):
    X = m.U[0]
    Z = m.U[2]
    u = X + 1j * Z
    ux = (u[1:-1, 2:] - u[1:-1, :-2]) / (2 * grid.hx)
    uy = (u[2:, 1:-1] - u[:-2, 1:-1]) / (2 * grid.hy)
    rho2 = 1.0 / Z[1:-1, 1:-1] ** 2
    uz = 0.5 * (ux - 1j * uy)
    uzb = 0.5 * (ux + 1j * uy)
    return uz, uzb, rho2


def vortex_residual(m: DiscreteMap, grid: Grid, floor=1e-12):
    """|Lap w - (e^{2w} - |phi|^2 e^{-2w})| with w = log|du| on a planar map.

    Returned on the (ny, nx) grid, NaN where undefined (ring, next-to-ring and
    degenerate nodes); also returns the count of degenerate nodes and the
    companion residual for w1 = w - log|phi|/2.
    """
    uz, uzb, rho2 = _complex_derivs(m, grid)
    Hd = rho2 * np.abs(uz) ** 2
    phi = rho2 * uz * np.conj(uzb)
    bad = Hd <= floor
    w = 0.5 * np.log(np.where(bad, 1.0, Hd))
    res = np.full(grid.sigma.shape, np.nan)
    res1 = np.full(grid.sigma.shape, np.nan)
    lap = ((w[1:-1, 2:] - 2 * w[1:-1, 1:-1] + w[1:-1, :-2]) / grid.hx ** 2
           + (w[2:, 1:-1] - 2 * w[1:-1, 1:-1] + w[:-2, 1:-1]) / grid.hy ** 2)
    wc = w[1:-1, 1:-1]
    ap = np.abs(phi[1:-1, 1:-1])
    rhs = np.exp(2 * wc) - ap ** 2 * np.exp(-2 * wc)
    r = np.abs(lap - rhs)
    with np.errstate(divide="ignore", invalid="ignore"):
        w1 = w - 0.5 * np.log(np.abs(phi))
        lap1 = ((w1[1:-1, 2:] - 2 * w1[1:-1, 1:-1] + w1[1:-1, :-2]) / grid.hx ** 2
                + (w1[2:, 1:-1] - 2 * w1[1:-1, 1:-1] + w1[:-2, 1:-1]) / grid.hy ** 2)
        r1 = np.abs(lap1 - 2 * ap * np.sinh(2 * w1[1:-1, 1:-1]))
    nb = bad[:-2, 1:-1] | bad[2:, 1:-1] | bad[1:-1, :-2] | bad[1:-1, 2:] | bad[1:-1, 1:-1]
    r[nb] = np.nan
    r1[nb] = np.nan
    res[2:-2, 2:-2] = r
    res1[2:-2, 2:-2] = r1
    return res, int(bad.sum()), res1


def planar_hopf(m: DiscreteMap, grid: Grid) -> np.ndarray:
    """Hopf differential phi(z) of a planar map on interior nodes (NaN on the ring)."""
    uz, uzb, rho2 = _complex_derivs(m, grid)
    out = np.full(grid.sigma.shape, np.nan + 0j)
    out[1:-1, 1:-1] = rho2 * uz * np.conj(uzb)
    return out
