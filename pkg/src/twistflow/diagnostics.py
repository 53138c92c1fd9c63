"""Measurements on flow states: Hopf differential, pleated map, distances,
hull gauge, side asymptotics, decay fits, reports and exports."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

from .flow import DiscreteMap, Grid, tension_field
from .hyp3 import dist_array, dist_to_line_array, fit_geodesic, hull_gauge_array, mobius_array, polyline_curvature, send_to_zero_inf
from .polygon import BendingData
from .qd import PolyQD, PrincipalPart, natural_chart, pp_distance, principal_part, zero_centers


class DiagnosticsError(ValueError):
    pass


# ------------------------------------------------------------ geometry of the domain

def q_distance(q: PolyQD, z, nquad=48) -> np.ndarray:
    """Length of the segment [0, z] in the metric 2 sqrt|q| |dz| (natural units).

    An upper bound for the natural distance from the origin; used as the
    chart distance R(z) in decay fits.
    """
    z = np.asarray(z, dtype=complex)
    t, w = np.polynomial.legendre.leggauss(nquad)
    t = 0.5 * (t + 1)
    w = 0.5 * w
    pts = z[..., None] * t
    vals = 2 * np.sqrt(np.abs(np.polynomial.polynomial.polyval(pts, np.asarray(q.coeffs))))
    return np.abs(z) * (vals * w).sum(axis=-1)


def trusted_mask(grid: Grid, q: PolyQD | None = None, eps=0.5, margin=0.15) -> np.ndarray:
    """Interior nodes at least margin*radius from the boundary and 2 eps from the zeros."""
    cx, cy = 0.5 * (grid.x0 + grid.x1), 0.5 * (grid.y0 + grid.y1)
    rx, ry = 0.5 * (grid.x1 - grid.x0), 0.5 * (grid.y1 - grid.y0)
    z = grid.z
    m = (np.abs(z.real - cx) <= (1 - margin) * rx) & (np.abs(z.imag - cy) <= (1 - margin) * ry)
    m &= grid.active
    if q is not None:
        for c in zero_centers(q):
            m &= np.abs(z - c) >= 2 * eps
    return m


# ------------------------------------------------------------ Hopf differential

@dataclass
class HopfField:
    phi: np.ndarray  # complex, NaN on the ring
    dbar: np.ndarray  # |d phi / d zbar|, NaN within two nodes of the ring
    mask: np.ndarray
    degree: int
    coeffs: np.ndarray | None = None  # ascending
    fit_residual: float = math.nan
    excess_ratio: float = math.nan


def hopf_phi(m: DiscreteMap, grid: Grid) -> np.ndarray:
    """phi = <u_z, u_z> in the metric at u, u_z = (u_x - i u_y)/2, on interior nodes."""
    U = m.U
    ux = (U[:, 1:-1, 2:] - U[:, 1:-1, :-2]) / (2 * grid.hx)
    uy = (U[:, 2:, 1:-1] - U[:, :-2, 1:-1]) / (2 * grid.hy)
    uz = 0.5 * (ux - 1j * uy)
    out = np.full(grid.sigma.shape, np.nan + 0j)
    out[1:-1, 1:-1] = (uz * uz).sum(axis=0) / U[2, 1:-1, 1:-1] ** 2
    return out


def dbar_residual(phi: np.ndarray, grid: Grid) -> np.ndarray:
    out = np.full(phi.shape, np.nan)
    px = (phi[1:-1, 2:] - phi[1:-1, :-2]) / (2 * grid.hx)
    py = (phi[2:, 1:-1] - phi[:-2, 1:-1]) / (2 * grid.hy)
    out[1:-1, 1:-1] = np.abs(0.5 * (px + 1j * py))
    return out


def fit_polynomial(phi, z, mask, degree):
    """Least-squares polynomial (ascending coefficients) and relative L2 residual on mask."""
    zz = z[mask]
    ff = phi[mask]
    if zz.size <= degree + 1:
        raise DiagnosticsError("fit region is empty")
    scale = float(np.abs(zz).max())
    A = np.vander(zz / scale, degree + 1, increasing=True)
    c, *_ = np.linalg.lstsq(A, ff, rcond=None)
    res = float(np.linalg.norm(A @ c - ff) / np.linalg.norm(ff))
    return c / scale ** np.arange(degree + 1), res


def hopf_field(m: DiscreteMap, grid: Grid, degree: int, mask=None, excess=2) -> HopfField:
    """Hopf differential with a degree-``degree`` fit on ``mask``.

    ``excess_ratio`` is the largest coefficient above ``degree`` of a fit of
    degree ``degree + excess``, relative to its degree-``degree`` coefficient.
    """
    phi = hopf_phi(m, grid)
    db = dbar_residual(phi, grid)
    if mask is None:
        mask = trusted_mask(grid)
    mask = mask & np.isfinite(db)
    if not mask.any():
        raise DiagnosticsError("fit region is empty")
    c, res = fit_polynomial(phi, grid.z, mask, degree)
    hf = HopfField(phi, db, mask, degree, c, res)
    if excess:
        c2, _ = fit_polynomial(phi, grid.z, mask, degree + excess)
        hf.excess_ratio = float(np.abs(c2[degree + 1:]).max() / abs(c2[degree]))
    return hf


def pp_of_fit(hf: HopfField) -> PrincipalPart:
    if hf.coeffs is None:
        raise DiagnosticsError("no fit")
    return principal_part(PolyQD(list(hf.coeffs)))


def pp_compare(a: PrincipalPart, b: PrincipalPart) -> float:
    return pp_distance(a, b, relative=True)


# ------------------------------------------------------------ pleated map

@dataclass
class PleatedField:
    values: np.ndarray  # (ny, nx, 3)
    region: np.ndarray
    flagged: np.ndarray


def pleated_field(h: DiscreteMap, data: BendingData, base=None, eps=1e-6) -> PleatedField:
    """Xi(x) = B(x0, h(x)) h(x); nodes within eps of a diagonal are flagged and use the nearest region."""
    H = h.points
    if np.abs(H[..., 1]).max() > 1e-9:
        raise DiagnosticsError("h is not planar")
    base = data.base if base is None else base
    region = data.region_of(H, strict=False)
    flagged = region < 0
    if flagged.any():
        # nearest region: nudge across by evaluating at a slightly raised point
        Hf = H[flagged].copy()
        Hf[:, 2] *= 1 + 1e-6
        region[flagged] = data.region_of(Hf, strict=False)
    near = np.zeros(region.shape, bool)
    for a, b in data.triangulation:
        G = send_to_zero_inf(data.P0.vertices[a], data.P0.vertices[b])
        Q = mobius_array(G, H)
        near |= np.abs(np.arcsinh(Q[..., 0] / Q[..., 2])) < eps
    flagged |= near
    out = H.copy()
    for k in range(len(data.tris)):
        sel = region == k
        if sel.any():
            out[sel] = mobius_array(data.cocycle_between(base, k), H[sel])
    return PleatedField(out, region, flagged)


def psi_field(m: DiscreteMap, pf: PleatedField) -> np.ndarray:
    return dist_array(m.points, pf.values)


def psi_sup(m: DiscreteMap, pf: PleatedField, mask) -> float:
    d = psi_field(m, pf)
    sel = mask & ~pf.flagged
    return float(d[sel].max())


def gauge_sup(m: DiscreteMap, faces, mask) -> float:
    return float(hull_gauge_array(m.points, faces)[mask].max())


# ------------------------------------------------------------ fits

def decay_fit(values, distances, min_samples=10):
    """Fit log|v| = a + rate * d; returns (rate, intercept, correlation).

    Nonpositive or non-finite values are dropped.
    """
    v = np.asarray(values, dtype=float).ravel()
    d = np.asarray(distances, dtype=float).ravel()
    ok = np.isfinite(v) & np.isfinite(d) & (v > 0)
    v, d = v[ok], d[ok]
    if v.size < min_samples:
        raise DiagnosticsError(f"only {v.size} usable samples")
    y = np.log(v)
    rate, icpt = np.polyfit(d, y, 1)
    if np.ptp(y) == 0:
        return 0.0, float(icpt), 0.0
    corr = float(np.corrcoef(d, y)[0, 1])
    return float(rate), float(icpt), corr


def binned_envelope(values, distances, nbins=20, lo=None, hi=None):
    """Bin centres and per-bin maxima of values over distance bins (empty bins dropped)."""
    v = np.asarray(values, dtype=float).ravel()
    d = np.asarray(distances, dtype=float).ravel()
    ok = np.isfinite(v) & np.isfinite(d)
    v, d = v[ok], d[ok]
    lo = d.min() if lo is None else lo
    hi = d.max() if hi is None else hi
    edges = np.linspace(lo, hi, nbins + 1)
    idx = np.clip(np.digitize(d, edges) - 1, 0, nbins - 1)
    keep = (d >= lo) & (d <= hi)
    cen, mx = [], []
    for b in range(nbins):
        sel = keep & (idx == b)
        if sel.any():
            cen.append(0.5 * (edges[b] + edges[b + 1]))
            mx.append(v[sel].max())
    return np.array(cen), np.array(mx)


@dataclass
class WindowedDecay:
    rate: float
    intercept: float
    corr: float
    window: tuple  # (lo, hi) in distance
    centers: np.ndarray
    signal: np.ndarray  # binned max of the signal
    error: np.ndarray  # binned max of the error estimate


def windowed_decay(signal, error, distances, width=0.1, start_min=1.0, snr=3.0, min_samples=10):
    """Decay fit of a binned max-envelope restricted to where it stands above the error estimate.

    The window opens at the envelope peak beyond ``start_min`` and closes at
    the first bin whose signal is below ``snr`` times the error envelope.
    """
    signal = np.asarray(signal, dtype=float).ravel()
    error = np.asarray(error, dtype=float).ravel()
    d = np.asarray(distances, dtype=float).ravel()
    ok = np.isfinite(signal) & np.isfinite(error) & np.isfinite(d)
    signal, error, d = signal[ok], error[ok], d[ok]
    edges = np.arange(start_min, d.max() + width, width)
    c, sg, er = [], [], []
    for a, b in zip(edges[:-1], edges[1:]):
        sel = (d >= a) & (d < b)
        if sel.any():
            c.append(0.5 * (a + b))
            sg.append(signal[sel].max())
            er.append(error[sel].max())
    c, sg, er = np.array(c), np.array(sg), np.array(er)
    if len(c) < min_samples:
        raise DiagnosticsError("too few distance bins")
    i0 = int(np.argmax(sg))
    below = np.nonzero(sg[i0:] < snr * er[i0:])[0]
    i1 = i0 + int(below[0]) if len(below) else len(c)
    rate, icpt, corr = decay_fit(sg[i0:i1], c[i0:i1], min_samples)
    return WindowedDecay(rate, icpt, corr, (float(c[i0]), float(c[i1 - 1])), c, sg, er)


def loglog_slope(t, y, lo, hi) -> float:
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    sel = (t >= lo) & (t <= hi) & (y > 0)
    if sel.sum() < 3:
        raise DiagnosticsError("too few samples in the window")
    return float(np.polyfit(np.log(t[sel]), np.log(y[sel]), 1)[0])


def middle_decade(t) -> tuple:
    t = np.asarray(t, dtype=float)
    t = t[t > 0]
    mid = 0.5 * (math.log10(t.min()) + math.log10(t.max()))
    return 10 ** (mid - 0.5), 10 ** (mid + 0.5)


def tension_decay(m: DiscreteMap, grid: Grid, q: PolyQD, mask, nbins=16):
    """(rate, corr) of the binned envelope of |tau| against the chart distance."""
    _, norm = tension_field(m, grid)
    R = q_distance(q, grid.z)
    c, mx = binned_envelope(norm[mask], R[mask], nbins)
    rate, _, corr = decay_fit(mx, c, min_samples=min(10, len(c)))
    return rate, corr


# ------------------------------------------------------------ side asymptotics

def sample_map(m: DiscreteMap, grid: Grid, z) -> np.ndarray:
    """Cubic-spline interpolation of the map values at points z (..., 3)."""
    z = np.asarray(z, dtype=complex)
    fi = (z.real - grid.x0) / grid.hx
    fj = (z.imag - grid.y0) / grid.hy
    if (fi < 0).any() or (fi > grid.nx - 1).any() or (fj < 0).any() or (fj > grid.ny - 1).any():
        raise DiagnosticsError("sample point outside the grid")
    coords = np.stack([fj.ravel(), fi.ravel()])
    out = np.stack([map_coordinates(m.U[k], coords, order=3, mode="nearest") for k in range(3)], axis=-1)
    return out.reshape(z.shape + (3,))


def canoe_constant(kappas=(0.02, 0.05, 0.1, 0.2), length=6.0, nsamp=200) -> float:
    """max d / kappa over hypercycle arcs of curvature kappa (distance atanh kappa from a geodesic)."""
    C = 0.0
    for k in kappas:
        d = math.atanh(k)
        s = np.linspace(-length / 2, length / 2, nsamp)
        # hypercycle about the axis over 0: ray at angle a from vertical, cosh d = 1/cos a
        a = math.acos(1 / math.cosh(d))
        r = np.exp(s)
        P = np.stack([r * math.sin(a), np.zeros_like(r), r * math.cos(a)], axis=-1)
        kap = polyline_curvature(P)
        _, res = fit_geodesic(P)
        C = max(C, res / float(kap.max()))
    return C


@dataclass
class SideReport:
    side: int
    heights: list
    curvature: list  # max discrete curvature of the leaf image per height
    residual: list  # max distance to the geodesic through its end samples
    side_distance: list  # max distance to the side geodesic of the polygon


def side_asymptotics(m: DiscreteMap, grid: Grid, q: PolyQD, P0, heights=(1.0, 2.0), span=0.5, nsamp=81):
    """Images of horizontal leaves Im xi = level + height in each H_k.

    The leaf is sampled for |Re xi| <= span * (level + height) so that it
    stays inside the sector.  Sides of P0 are matched by index.
    """
    out = []
    n = P0.n
    for k in range(n):
        ch = natural_chart(q, "horizontal", k, 1.0)
        rep = SideReport(k, list(heights), [], [], [])
        side = P0.sides[k]
        for hgt in heights:
            lev = ch.level + hgt
            t = np.linspace(-span * lev, span * lev, nsamp)
            z = ch.inverse(t + 1j * lev)
            pts = sample_map(m, grid, z)
            rep.curvature.append(float(polyline_curvature(pts).max()))
            _, res = fit_geodesic(pts)
            rep.residual.append(float(res))
            rep.side_distance.append(float(dist_to_line_array(pts, side).max()))
        out.append(rep)
    return out


# ------------------------------------------------------------ reports

@dataclass
class Entry:
    name: str
    passed: bool
    measured: dict
    tolerance: dict
    note: str = ""


@dataclass
class Report:
    entries: list = field(default_factory=list)
    config_hash: str = ""
    series: dict = field(default_factory=dict)  # name -> file reference

    @property
    def status(self) -> str:
        return "ok" if all(e.passed for e in self.entries) else "fail"

    def failing(self) -> list:
        return [e.name for e in self.entries if not e.passed]

    def to_text(self) -> str:
        d = {"status": self.status, "config_hash": self.config_hash, "series": self.series,
             "entries": [asdict(e) for e in self.entries]}
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Report":
        d = json.loads(text)
        return cls([Entry(**e) for e in d["entries"]], d["config_hash"], d["series"])


def assemble_report(entries, config_hash="", series=None, required=()) -> Report:
    names = [e.name for e in entries]
    missing = [r for r in required if r not in names]
    if missing:
        raise DiagnosticsError(f"missing checks: {', '.join(missing)}")
    if len(set(names)) != len(names):
        raise DiagnosticsError("duplicate check names")
    return Report(list(entries), config_hash, dict(series or {}))


# ------------------------------------------------------------ exports

def write_grid_csv(path, grid: Grid, fields: dict, config_hash=""):
    z = grid.z.ravel()
    cols = ["x", "y"] + list(fields)
    data = [z.real, z.imag] + [np.asarray(v, dtype=float).ravel() for v in fields.values()]
    header = ",".join(cols)
    if config_hash:
        header = f"# config_hash: {config_hash}\n" + header
    np.savetxt(path, np.column_stack(data), delimiter=",", header=header, comments="", fmt="%.17g")


def write_ply(path, points: np.ndarray, config_hash=""):
    """ASCII PLY of an (ny, nx, 3) grid of points with quad faces."""
    ny, nx, _ = points.shape
    lines = ["ply", "format ascii 1.0"]
    if config_hash:
        lines.append(f"comment config_hash {config_hash}")
    lines += [f"element vertex {ny * nx}", "property double x", "property double y",
             "property double z", f"element face {(ny - 1) * (nx - 1)}", "property list uchar int vertex_indices", "end_header"]
    lines += ["%.17g %.17g %.17g" % tuple(p) for p in points.reshape(-1, 3)]
    for j in range(ny - 1):
        for i in range(nx - 1):
            a = j * nx + i
            lines.append(f"4 {a} {a + 1} {a + nx + 1} {a + nx}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_ply_vertices(path) -> np.ndarray:
    with open(path) as fh:
        lines = fh.read().splitlines()
    nv = int(next(l for l in lines if l.startswith("element vertex")).split()[-1])
    start = lines.index("end_header") + 1
    return np.array([[float(v) for v in l.split()] for l in lines[start:start + nv]])


def _png_meta(config_hash):
    meta = {"Software": None}
    if config_hash:
        meta["Description"] = f"config_hash {config_hash}"
    return meta


def plot_series(path, series: dict, config_hash=""):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    t = np.asarray(series["t"])
    fig, ax = plt.subplots(1, 3, figsize=(12, 3.5))
    ax[0].plot(t, series["energy"])
    ax[0].set_title("energy")
    sel = t > 0
    ax[1].loglog(t[sel], np.asarray(series["sup_tau"])[sel])
    ax[1].set_title("sup |tau|")
    shown = False
    for k in ("sup_psi", "sup_gauge"):
        y = np.asarray(series[k])
        if np.isfinite(y).any():
            ax[2].plot(t, y, label=k)
            shown = True
    if shown:
        ax[2].legend()
    ax[2].set_title("Psi and hull gauge")
    for a in ax:
        a.set_xlabel("t")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_png_meta(config_hash))
    plt.close(fig)


def plot_field(path, grid: Grid, values, title="", config_hash=""):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4.3))
    im = ax.imshow(values, origin="lower", extent=(grid.x0, grid.x1, grid.y0, grid.y1))
    fig.colorbar(im, ax=ax)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_png_meta(config_hash))
    plt.close(fig)
