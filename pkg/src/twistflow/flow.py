"""Harmonic map heat flow from (C, sigma |dz|^2) into upper half-space.

The discrete tension at an interior node a is

    tau_a = sigma_a^{-1} (h_x^{-2} (log_a u_E + log_a u_W) + h_y^{-2} (log_a u_N + log_a u_S)),

with log_a the Riemannian logarithm of H^3 at u_a.  Expanding the logarithm
gives the 5-point Laplacian plus the Christoffel terms, so the scheme is
second order.  It is also minus the Riemannian gradient (preconditioned by
sigma_a h_x h_y) of the edge energy

    E = 1/2 sum_edges w_e d(u_a, u_b)^2,   w = h_y/h_x (x-edges), h_x/h_y (y-edges),

so a small enough explicit exponential-map step never increases E.
"""

from __future__ import annotations

import hashlib
import io
import math
import os
from dataclasses import dataclass, field
from typing import Callable

import numba as nb
import numpy as np


class FlowError(RuntimeError):
    pass


class FloorError(FlowError):
    """A node dropped below the height floor."""

    def __init__(self, msg, node=None):
        super().__init__(msg)
        self.node = node


class CFLError(FlowError):
    pass


def set_threads(n: int | None):
    if n is None:
        n = int(os.environ.get("TWISTFLOW_THREADS", "0") or 0)
    if n > 0:
        nb.set_num_threads(min(n, nb.config.NUMBA_NUM_THREADS))


# ------------------------------------------------------------------ kernels

@nb.njit(inline="always")
def _log(px, py, pz, qx, qy, qz):
    dx = qx - px
    dy = qy - py
    dz = qz - pz
    d2 = dx * dx + dy * dy
    chord2 = d2 + dz * dz
    if chord2 == 0.0:
        return 0.0, 0.0, 0.0
    d = 2.0 * math.asinh(math.sqrt(chord2) / (2.0 * math.sqrt(pz * qz)))
    vz = 0.5 * (d2 + dz * (qz + pz))
    nv = math.sqrt(pz * pz * d2 + vz * vz)
    s = d * pz / nv
    return s * pz * dx, s * pz * dy, s * vz


@nb.njit(parallel=True, cache=True)
def _tension_kernel(U, inv_sig, ihx2, ihy2, active, T, norm):
    ny, nx = inv_sig.shape
    for j in nb.prange(ny):
        for i in range(nx):
            if not active[j, i]:
                T[0, j, i] = 0.0
                T[1, j, i] = 0.0
                T[2, j, i] = 0.0
                norm[j, i] = 0.0
                continue
            px = U[0, j, i]
            py = U[1, j, i]
            pz = U[2, j, i]
            ax, ay, az = _log(px, py, pz, U[0, j, i + 1], U[1, j, i + 1], U[2, j, i + 1])
            bx, by, bz = _log(px, py, pz, U[0, j, i - 1], U[1, j, i - 1], U[2, j, i - 1])
            cx, cy, cz = _log(px, py, pz, U[0, j + 1, i], U[1, j + 1, i], U[2, j + 1, i])
            dx, dy, dz = _log(px, py, pz, U[0, j - 1, i], U[1, j - 1, i], U[2, j - 1, i])
            s = inv_sig[j, i]
            tx = s * ((ax + bx) * ihx2 + (cx + dx) * ihy2)
            ty = s * ((ay + by) * ihx2 + (cy + dy) * ihy2)
            tz = s * ((az + bz) * ihx2 + (cz + dz) * ihy2)
            T[0, j, i] = tx
            T[1, j, i] = ty
            T[2, j, i] = tz
            norm[j, i] = math.sqrt(tx * tx + ty * ty + tz * tz) / pz


@nb.njit(parallel=True, cache=True)
def _exp_kernel(U, T, dt, active, out):
    ny, nx = active.shape
    for j in nb.prange(ny):
        for i in range(nx):
            px = U[0, j, i]
            py = U[1, j, i]
            pz = U[2, j, i]
            vx = T[0, j, i] * dt
            vy = T[1, j, i] * dt
            vz = T[2, j, i] * dt
            n = math.sqrt(vx * vx + vy * vy + vz * vz)
            if (not active[j, i]) or n == 0.0:
                out[0, j, i] = px
                out[1, j, i] = py
                out[2, j, i] = pz
                continue
            L = n / pz
            em = math.expm1(L)
            e = 1.0 + em
            sh = 0.5 * em * (1.0 + 1.0 / e)
            ch = 1.0 + 0.5 * em * em / e
            D = ch - (vz / n) * sh
            f = pz * sh / (D * n)
            out[0, j, i] = px + vx * f
            out[1, j, i] = py + vy * f
            out[2, j, i] = pz / D


@nb.njit(parallel=True, cache=True)
def _edge_energy_rows(U, wx, wy, rows):
    ny = U.shape[1]
    nx = U.shape[2]
    for j in nb.prange(ny):
        acc = 0.0
        for i in range(nx):
            pz = U[2, j, i]
            if i + 1 < nx:
                dx = U[0, j, i + 1] - U[0, j, i]
                dy = U[1, j, i + 1] - U[1, j, i]
                dz = U[2, j, i + 1] - pz
                d = 2.0 * math.asinh(math.sqrt(dx * dx + dy * dy + dz * dz) / (2.0 * math.sqrt(pz * U[2, j, i + 1])))
                acc += wx * d * d
            if j + 1 < ny:
                dx = U[0, j + 1, i] - U[0, j, i]
                dy = U[1, j + 1, i] - U[1, j, i]
                dz = U[2, j + 1, i] - pz
                d = 2.0 * math.asinh(math.sqrt(dx * dx + dy * dy + dz * dz) / (2.0 * math.sqrt(pz * U[2, j + 1, i])))
                acc += wy * d * d
        rows[j] = acc


# ------------------------------------------------------------------ grid

@dataclass
class Grid:
    """Uniform nodes on [x0, x1] x [y0, y1] (arrays indexed [row j (y), column i (x)])."""

    x0: float
    x1: float
    y0: float
    y1: float
    nx: int
    ny: int
    sigma: np.ndarray | None = None
    active: np.ndarray | None = None

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise FlowError("grid needs at least 3 x 3 nodes")
        if self.sigma is None:
            self.sigma = np.ones((self.ny, self.nx))
        self.sigma = np.ascontiguousarray(self.sigma, dtype=float)
        if self.sigma.shape != (self.ny, self.nx):
            raise FlowError("sigma has the wrong shape")
        if not (self.sigma > 0).all():
            raise FlowError("sigma must be positive")
        ring = np.zeros((self.ny, self.nx), bool)
        ring[1:-1, 1:-1] = True
        if self.active is None:
            self.active = ring
        self.active = np.ascontiguousarray(self.active & ring)

    @classmethod
    def square(cls, radius: float, n: int, metric=None, center=0j):
        g = cls(center.real - radius, center.real + radius, center.imag - radius, center.imag + radius, n, n)
        if metric is not None:
            g.sigma = np.ascontiguousarray(metric(g.z), dtype=float)
            g.__post_init__()
        return g

    @property
    def hx(self) -> float:
        return (self.x1 - self.x0) / (self.nx - 1)

    @property
    def hy(self) -> float:
        return (self.y1 - self.y0) / (self.ny - 1)

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x0, self.x1, self.nx)

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(self.y0, self.y1, self.ny)

    @property
    def z(self) -> np.ndarray:
        X, Y = np.meshgrid(self.xs, self.ys)
        return X + 1j * Y

    @property
    def boundary(self) -> np.ndarray:
        return ~self.active

    def cfl_dt(self, c_cfl=0.2) -> float:
        return c_cfl * float(self.sigma[self.active].min()) * min(self.hx, self.hy) ** 2 / 4

    def spec(self) -> str:
        return f"{self.x0!r} {self.x1!r} {self.y0!r} {self.y1!r} {self.nx} {self.ny}"


@dataclass
class DiscreteMap:
    U: np.ndarray  # shape (3, ny, nx)
    t: float = 0.0

    def __post_init__(self):
        self.U = np.ascontiguousarray(self.U, dtype=float)
        if self.U.ndim != 3 or self.U.shape[0] != 3:
            raise FlowError("map values must have shape (3, ny, nx)")

    @property
    def points(self) -> np.ndarray:
        """Values as an (ny, nx, 3) array."""
        return np.moveaxis(self.U, 0, -1)

    @classmethod
    def from_points(cls, P, t=0.0):
        return cls(np.moveaxis(np.asarray(P, dtype=float), -1, 0).copy(), t)

    def copy(self) -> "DiscreteMap":
        return DiscreteMap(self.U.copy(), self.t)


# ------------------------------------------------------------ operators

def check_floor(m: DiscreteMap, z_floor: float):
    bad = ~(m.U[2] > z_floor) | ~np.isfinite(m.U).all(axis=0)
    if bad.any():
        j, i = np.argwhere(bad)[0]
        raise FloorError(f"height {m.U[2, j, i]!r} at node ({j}, {i}) is below the floor {z_floor}", node=(int(j), int(i)))


def tension_field(m: DiscreteMap, grid: Grid, z_floor=1e-8):
    """(tau, |tau|) with tau of shape (3, ny, nx) and the hyperbolic norm per node."""
    check_floor(m, z_floor)
    T = np.zeros_like(m.U)
    norm = np.zeros(grid.sigma.shape)
    _tension_kernel(m.U, 1.0 / grid.sigma, 1.0 / grid.hx ** 2, 1.0 / grid.hy ** 2, grid.active, T, norm)
    return T, norm


def sup_tension(m: DiscreteMap, grid: Grid) -> float:
    return float(tension_field(m, grid)[1].max())


def energy(m: DiscreteMap, grid: Grid) -> float:
    """Edge energy 1/2 sum w_e d^2, the Dirichlet energy the scheme descends."""
    rows = np.zeros(grid.ny)
    _edge_energy_rows(m.U, grid.hy / grid.hx, grid.hx / grid.hy, rows)
    return 0.5 * float(math.fsum(rows))


def energy_density(m: DiscreteMap, grid: Grid) -> np.ndarray:
    """e = sigma^{-1} sum (d_i u^k)^2 / (u^3)^2 by central differences (NaN on the ring)."""
    U = m.U
    e = np.full(grid.sigma.shape, np.nan)
    gx = (U[:, 1:-1, 2:] - U[:, 1:-1, :-2]) / (2 * grid.hx)
    gy = (U[:, 2:, 1:-1] - U[:, :-2, 1:-1]) / (2 * grid.hy)
    e[1:-1, 1:-1] = (gx ** 2 + gy ** 2).sum(axis=0) / U[2, 1:-1, 1:-1] ** 2 / grid.sigma[1:-1, 1:-1]
    return e


def energy_trapezoid(m: DiscreteMap, grid: Grid) -> float:
    """1/2 integral of e dvol_sigma over the interior nodes by the trapezoid rule."""
    e = energy_density(m, grid) * grid.sigma
    e = e[1:-1, 1:-1]
    w = np.ones_like(e)
    w[0, :] *= 0.5
    w[-1, :] *= 0.5
    w[:, 0] *= 0.5
    w[:, -1] *= 0.5
    return 0.5 * float(np.sum(w * e)) * grid.hx * grid.hy


def exp_step(m: DiscreteMap, grid: Grid, T: np.ndarray, dt: float) -> DiscreteMap:
    out = np.empty_like(m.U)
    _exp_kernel(m.U, T, dt, grid.active, out)
    return DiscreteMap(out, m.t + dt)


# ------------------------------------------------------------ state

@dataclass
class FlowConfig:
    c_cfl: float = 0.2
    tol: float = 1e-4
    max_steps: int = 100_000
    z_floor: float = 1e-8
    max_move: float = 0.25  # cap on the hyperbolic length of one node update
    record_every: int = 50
    checkpoint_every: int = 0

    def key(self) -> str:
        return f"{self.c_cfl!r} {self.tol!r} {self.max_steps} {self.z_floor!r} {self.max_move!r}"


@dataclass
class FlowState:
    map: DiscreteMap
    grid: Grid
    step: int = 0
    history: list = field(default_factory=list)
    converged: bool = False
    config_hash: str = ""

    @property
    def t(self) -> float:
        return self.map.t

    def series(self) -> dict:
        keys = ("t", "energy", "sup_tau", "sup_psi", "sup_gauge")
        return {k: np.array([h[k] for h in self.history]) for k in keys}


def step(state: FlowState, dt: float, cfg: FlowConfig | None = None, boundary: Callable | None = None) -> FlowState:
    """One explicit exponential-map step of size dt (validated against the CFL bound)."""
    cfg = cfg or FlowConfig()
    grid = state.grid
    if dt > grid.cfl_dt(1.0) * (1 + 1e-12):
        raise CFLError(f"dt={dt} exceeds the stability bound {grid.cfl_dt(1.0)}")
    T, norm = tension_field(state.map, grid, cfg.z_floor)
    new = exp_step(state.map, grid, T, dt)
    if boundary is not None:
        b = grid.boundary
        new.U[:, b] = boundary(new.t)[:, b]
    check_floor(new, cfg.z_floor)
    return FlowState(new, grid, state.step + 1, state.history, state.converged, state.config_hash)


def _record(state: FlowState, sup_tau: float, hooks: dict):
    row = {"t": state.t, "step": state.step, "energy": energy(state.map, state.grid), "sup_tau": sup_tau,
           "sup_psi": float("nan"), "sup_gauge": float("nan")}
    for k, f in hooks.items():
        row[k] = float(f(state.map))
    if state.history and row["t"] <= state.history[-1]["t"]:
        if state.history[-1]["step"] == state.step:
            state.history[-1] = row
            return
    state.history.append(row)


def run(state: FlowState, cfg: FlowConfig | None = None, *, hooks: dict | None = None,
        boundary: Callable | None = None, checkpoint: Callable | None = None,
        record_times=None, dt: float | None = None) -> FlowState:
    """Iterate steps until sup|tau| < tol or the step budget runs out.

    ``hooks`` maps column names ("sup_psi", "sup_gauge") to functions of the
    map evaluated at every record.  ``record_times`` adds records at given
    times in addition to the fixed cadence.  ``checkpoint(state)`` is called
    every ``cfg.checkpoint_every`` steps.
    """
    cfg = cfg or FlowConfig()
    hooks = hooks or {}
    grid = state.grid
    dt_cfl = grid.cfl_dt(cfg.c_cfl) if dt is None else dt
    pending_times = sorted(x for x in (record_times or []) if x > state.t)
    m = state.map
    n_steps = state.step
    T, norm = tension_field(m, grid, cfg.z_floor)
    sup = float(norm.max())
    st = FlowState(m, grid, n_steps, list(state.history), False, state.config_hash)
    if not st.history:
        _record(st, sup, hooks)
    budget_end = state.step + cfg.max_steps
    while True:
        if sup < cfg.tol:
            st.converged = True
            break
        if st.step >= budget_end:
            break
        h = dt_cfl
        if sup * h > cfg.max_move:
            h = cfg.max_move / sup
        if pending_times and st.t + h > pending_times[0] and pending_times[0] > st.t:
            h = pending_times[0] - st.t
        while True:
            new = exp_step(st.map, grid, T, h)
            if boundary is not None:
                b = grid.boundary
                new.U[:, b] = boundary(new.t)[:, b]
            zmin = float(new.U[2].min())
            if zmin > 10 * cfg.z_floor and np.isfinite(new.U).all():
                break
            h *= 0.5
            if h < 1e-14 * max(dt_cfl, 1e-300):
                check_floor(new, cfg.z_floor)
                raise FloorError("step size collapsed near the height floor")
        st = FlowState(new, grid, st.step + 1, st.history, False, st.config_hash)
        T, norm = tension_field(st.map, grid, cfg.z_floor)
        sup = float(norm.max())
        hit = bool(pending_times and abs(st.t - pending_times[0]) <= 1e-12 * max(1.0, st.t))
        if hit:
            pending_times.pop(0)
        if hit or st.step % cfg.record_every == 0 or sup < cfg.tol:
            _record(st, sup, hooks)
        if checkpoint is not None and cfg.checkpoint_every and st.step % cfg.checkpoint_every == 0:
            checkpoint(st)
    if st.history[-1]["step"] != st.step:
        _record(st, sup, hooks)
    return st


# ------------------------------------------------------------ files

def config_hash(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, np.ndarray):
            h.update(np.ascontiguousarray(p).tobytes())
        else:
            h.update(repr(p).encode())
        h.update(b"|")
    return h.hexdigest()[:16]


def write_checkpoint(path, state: FlowState, extra: dict | None = None):
    """Text checkpoint: '# key: value' header, then one 'x y z' line per node (row major)."""
    g = state.grid
    lines = [
        "# twistflow checkpoint v1",
        f"# grid: {g.spec()}",
        f"# t: {float(state.t)!r}",
        f"# step: {state.step}",
        f"# converged: {int(state.converged)}",
        f"# config_hash: {state.config_hash}",
    ]
    for k, v in (extra or {}).items():
        lines.append(f"# {k}: {v}")
    buf = io.StringIO()
    buf.write("\n".join(lines) + "\n")
    P = state.map.points.reshape(-1, 3)
    np.savetxt(buf, P, fmt="%.17g")
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def read_checkpoint(path, grid: Grid | None = None):
    """Returns (DiscreteMap, header dict)."""
    header = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            if ":" in line:
                k, v = line[1:].split(":", 1)
                header[k.strip()] = v.strip()
    if "grid" not in header:
        raise FlowError(f"{path} is not a checkpoint")
    x0, x1, y0, y1, nx, ny = header["grid"].split()
    nx, ny = int(nx), int(ny)
    P = np.loadtxt(path, comments="#").reshape(ny, nx, 3)
    if grid is not None and (grid.nx, grid.ny) != (nx, ny):
        raise FlowError("checkpoint grid does not match")
    header["grid_bounds"] = tuple(float(v) for v in (x0, x1, y0, y1))
    return DiscreteMap.from_points(P, float(header["t"])), header


def write_series(path, state: FlowState):
    """CSV of the recorded history; a '# config_hash' line leads when the state carries one."""
    cols = ("t", "energy", "sup_tau", "sup_psi", "sup_gauge")
    buf = io.StringIO()
    if state.config_hash:
        buf.write(f"# config_hash: {state.config_hash}\n")
    buf.write(",".join(cols + ("step",)) + "\n")
    for h in state.history:
        buf.write(",".join(repr(float(h[c])) for c in cols) + f",{int(h['step'])}\n")
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def read_series(path):
    """(history rows, config hash) from a file written by write_series."""
    chash = ""
    rows = []
    with open(path) as fh:
        lines = fh.read().splitlines()
    if lines and lines[0].startswith("#"):
        chash = lines[0].split(":", 1)[1].strip()
        lines = lines[1:]
    cols = lines[0].split(",")
    for line in lines[1:]:
        vals = line.split(",")
        row = {c: float(v) for c, v in zip(cols, vals)}
        row["step"] = int(row["step"])
        rows.append(row)
    return rows, chash
