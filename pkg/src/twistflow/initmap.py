"""Initial maps C -> H^3 asymptotic to a twisted polygon.

u0 = B_sm(z) h(z), where h is the planar harmonic map and

    B_sm = e_1(theta_1 chi_1) o e_2(theta_2 chi_2) o ... ,

e_j(a) the rotation by a about diagonal j of the planar polygon.  chi_j
rises from 0 to 1 across the preimage under h of diagonal j, following a
C^2 profile in zeta_j = d_j / |grad_xi d_j|, with d_j the signed distance
of h(z) to the diagonal (positive away from the base triangle) and xi the
natural coordinate of sigma.  Away from the bands u0 equals the pleated map
B(x0, h(z)) h(z) exactly, and inside a band, in a chart where the diagonal
is the vertical axis over 0, u0 = (f cos theta, f sin theta, g) with
h = (f, 0, g), which gives the closed-form tension below.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flow import DiscreteMap, Grid
from .hyp3 import Mobius, mobius_array, send_to_zero_inf
from .polygon import BendingData


class InitMapError(ValueError):
    pass


# ------------------------------------------------------------ profiles

def _s5(s):
    return s ** 3 * (10 - 15 * s + 6 * s * s), 30 * s * s * (1 - s) ** 2, 60 * s * (1 - s) * (1 - 2 * s)


def _s7(s):
    v = s ** 4 * (35 - 84 * s + 70 * s * s - 20 * s ** 3)
    d1 = 140 * s ** 3 * (1 - s) ** 3
    d2 = 420 * s * s * (1 - s) ** 2 * (1 - 2 * s)
    return v, d1, d2


_KINDS = {"quintic": _s5, "septic": _s7}


@dataclass(frozen=True)
class ThetaProfile:
    """theta(x) = theta0 S((x - a)/(b - a)); 0 for x <= a and theta0 for x >= b."""

    a: float
    b: float
    theta0: float
    kind: str = "quintic"

    def _eval(self, x):
        x = np.asarray(x, dtype=float)
        L = self.b - self.a
        s = np.clip((x - self.a) / L, 0.0, 1.0)
        v, d1, d2 = _KINDS[self.kind](s)
        inside = (x > self.a) & (x < self.b)
        return self.theta0 * v, np.where(inside, self.theta0 * d1 / L, 0.0), np.where(inside, self.theta0 * d2 / L ** 2, 0.0)

    def __call__(self, x):
        return self._eval(x)[0]

    def d1(self, x):
        return self._eval(x)[1]

    def d2(self, x):
        return self._eval(x)[2]

    def sup_d1(self) -> float:
        peak = {"quintic": 15 / 8, "septic": 35 / 16}[self.kind]
        return abs(self.theta0) * peak / (self.b - self.a)


def theta_profile(a: float, b: float, theta0: float, kind="quintic") -> ThetaProfile:
    if not b > a:
        raise InitMapError("profile interval is empty")
    if kind not in _KINDS:
        raise InitMapError(f"unknown profile {kind}")
    return ThetaProfile(float(a), float(b), float(theta0), kind)


# ------------------------------------------------------------ closed form

def interp_tension_closed_form(f, g, f_x, profile: ThetaProfile, x, g_x=None, f_y=0.0, g_y=0.0, theta_y=None, sigma=1.0):
    """Tension of (f cos theta, f sin theta, g) for harmonic (f, 0, g) and theta = profile(x).

    Without g_x the collapse-regime value g_x = g is used.  Passing the
    y-derivatives covers a general map; theta depends on x only.
    """
    th = profile(x)
    t1 = profile.d1(x)
    t2 = profile.d2(x)
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    gx = g if g_x is None else g_x
    c, s = np.cos(th), np.sin(th)
    grad2 = t1 * t1
    gdot = t1 * gx
    fdot = t1 * f_x
    tau1 = -f * (c * grad2 + s * t2) + (2 / g) * f * s * gdot - 2 * s * fdot
    tau2 = f * (-s * grad2 + c * t2) - (2 / g) * f * c * gdot + 2 * c * fdot
    tau3 = f * f * grad2 / g
    return np.stack([tau1, tau2, tau3], axis=-1) / sigma


# ------------------------------------------------------------ construction

def _tree_order(data: BendingData):
    """Diagonals ordered by depth in the dual tree seen from the base triangle.

    Also returns the sign of each rotation when crossing away from the base
    (-1 when the base lies on the y-side of the diagonal).
    """
    from .polygon import _adjacent

    n = data.P0.n
    depth = {data.base: 0}
    changed = True
    adj = [_adjacent(n, d, data.tris) for d in data.triangulation]
    while changed:
        changed = False
        for x, y, tx, ty in adj:
            if tx in depth and ty not in depth:
                depth[ty] = depth[tx] + 1
                changed = True
            elif ty in depth and tx not in depth:
                depth[tx] = depth[ty] + 1
                changed = True
    order = sorted(range(len(adj)), key=lambda j: min(depth[adj[j][2]], depth[adj[j][3]]))
    signs = [1.0 if depth[tx] < depth[ty] else -1.0 for _, _, tx, ty in adj]
    return order, signs


def _diag_chart(data: BendingData, j) -> Mobius:
    a, b = data.triangulation[j]
    return send_to_zero_inf(data.P0.vertices[a], data.P0.vertices[b])


def signed_sinh_dist(data: BendingData, j, P) -> np.ndarray:
    """x/z of the point in the chart where diagonal j is the axis over 0, positive away from the base."""
    G = _diag_chart(data, j)
    Q = mobius_array(G, P)
    s = Q[..., 0] / Q[..., 2]
    ref = mobius_array(G, data.centers[data.base])
    if ref[0] > 0:
        s = -s
    return s


def _grad_xi_norm(F, grid: Grid):
    gy, gx = np.gradient(F, grid.hy, grid.hx)
    return np.sqrt(gx * gx + gy * gy) / np.sqrt(grid.sigma)


def _rotate_about(data: BendingData, j, P, angle):
    G = _diag_chart(data, j)
    Q = mobius_array(G, P)
    c, s = np.cos(angle), np.sin(angle)
    x = c * Q[..., 0] - s * Q[..., 1]
    y = s * Q[..., 0] + c * Q[..., 1]
    Q = np.stack([x, y, Q[..., 2]], axis=-1)
    return mobius_array(G.inverse(), Q)


@dataclass
class InitialMap:
    map: DiscreteMap
    chi: np.ndarray  # (n_diag, ny, nx)
    zeta: np.ndarray
    region: np.ndarray  # triangle index of h(z)
    band: np.ndarray  # True where some chi is strictly between 0 and 1
    order: list = field(default_factory=list)
    width: float = 0.7
    kind: str = "quintic"


def smoothed_chi(data: BendingData, H: np.ndarray, grid: Grid, width=0.7, kind="quintic"):
    """(chi, zeta) for every diagonal on the grid, H of shape (ny, nx, 3)."""
    nd = len(data.triangulation)
    chi = np.zeros((nd,) + H.shape[:2])
    zeta = np.zeros_like(chi)
    for j in range(nd):
        s = np.arcsinh(signed_sinh_dist(data, j, H))
        gn = _grad_xi_norm(s, grid)
        with np.errstate(divide="ignore", invalid="ignore"):
            zj = np.where(gn > 0, s / gn, np.sign(s) * np.inf)
        zeta[j] = zj
        v, _, _ = _KINDS[kind](np.clip((zj + width) / (2 * width), 0.0, 1.0))
        chi[j] = v
    return chi, zeta


def build_initial_map(h: DiscreteMap, grid: Grid, data: BendingData, width=0.7, kind="quintic") -> InitialMap:
    """u0 = B_sm h on the grid; ``data`` must describe the plane of h."""
    if width <= 0:
        raise InitMapError("band width must be positive")
    H = h.points
    if np.abs(H[..., 1]).max() > 1e-9:
        raise InitMapError("h is not planar")
    chi, zeta = smoothed_chi(data, H, grid, width, kind)
    order, signs = _tree_order(data)
    U = H.copy()
    for j in reversed(order):
        ang = signs[j] * data.angles[j] * chi[j]
        mov = ang != 0
        if mov.any():
            U[mov] = _rotate_about(data, j, U[mov], ang[mov])
    region = data.region_of(H, strict=False)
    band = ((chi > 0) & (chi < 1)).any(axis=0)
    return InitialMap(DiscreteMap.from_points(U, 0.0), chi, zeta, region, band, order, width, kind)


def pleated_values(h: DiscreteMap, data: BendingData, base_region=None):
    """Xi = B(x0, h(z)) h(z) with the sharp cocycle; returns (points, region, flagged)."""
    H = h.points
    region = data.region_of(H, strict=False)
    base = data.base if base_region is None else base_region
    out = H.copy()
    for k in range(len(data.tris)):
        sel = region == k
        if sel.any():
            out[sel] = mobius_array(data.cocycle_between(base, k), H[sel])
    flagged = region < 0
    return out, region, flagged
