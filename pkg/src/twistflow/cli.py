"""Command line driver.

    twistflow polygon --config run.ini [--out DIR] [--force]
    twistflow flow    --config run.ini [--out DIR] [--resume | --force] [--threads N]
    twistflow diag    --out DIR [--checkpoint PATH] [--force]
    twistflow export  --out DIR [--checkpoint PATH] [--force]

The pipeline is: shear-bend parameters -> straightened polygon and bending
angles -> planar harmonic map h -> initial map u0 -> heat flow -> report.
Every artifact carries the hash of the physical part of the configuration;
``diag`` refuses inputs whose hashes disagree.

Config file (INI sections, every key optional unless noted)::

    [polygon]              exactly one of vertices / params / random
    vertices = 0, 1, inf, -1      ideal vertices, complex numbers or inf
    params = 1j                   n - 3 shear-bend values over the fan from vertex 0
    random = 5                    random twisted polygon with this many vertices
    [q]
    coefficients = auto           or ascending complex coefficients
    [grid]
    radius = 3.0                  half side of the square domain
    nodes = 65                    nodes per side
    eps = 0.5                     smoothing radius of the domain metric
    [flow]
    c_cfl = 0.5
    tol = 1e-4                    stop when sup |tension| < tol
    max_steps = 200000            step budget of the twisted flow (total, across resumes)
    planar_tol = 1e-4
    planar_max_steps = 1000000
    record_every = 200
    checkpoint_every = 5000
    profile = quintic             quintic or septic angle profile
    width = 0.7                   half width of the rotation bands
    [diagnostics]
    psi = yes
    gauge = yes
    [run]
    seed = 0
    out = run                     output directory (overridden by --out)

Exit codes: 0 ok, 2 invalid input, 3 not converged within the budget,
4 numerical failure (height floor or step-size bound).
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import shutil
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .flow import (
    CFLError,
    FloorError,
    DiscreteMap,
    FlowConfig,
    FlowError,
    FlowState,
    Grid,
    config_hash,
    energy_density,
    read_checkpoint,
    read_series,
    run,
    set_threads,
    tension_field,
    write_checkpoint,
    write_series,
)
from .hyp3 import INF, GeometryError, hull_faces, hull_gauge_array
from .initmap import build_initial_map
from .planar import PlanarError, build_planar_initial, reposition
from .polygon import (
    BendingData,
    PolygonError,
    ShearBendParams,
    TwistedIdealPolygon,
    bend,
    fan,
    from_params,
    random_polygon,
    straighten,
    to_params,
    validate,
)
from .qd import PolyQD, QDError, natural_chart, smooth_metric

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED, EXIT_NUMERICAL = 0, 2, 3, 4

# fraction of the truncation radius the chart anchors may occupy when q is chosen automatically
AUTO_Q_FRACTION = 0.6


class ConfigError(ValueError):
    pass


class ArtifactError(ValueError):
    pass


class NumericalError(FlowError):
    pass


# ------------------------------------------------------------ config

def _parse_complex(s: str):
    s = s.strip().replace(" ", "")
    if s.lower() in ("inf", "infinity", "oo"):
        return INF
    try:
        return complex(s)
    except ValueError as exc:
        raise ConfigError(f"not a complex number: {s!r}") from exc


def _parse_list(s: str) -> list:
    return [_parse_complex(p) for p in s.split(",") if p.strip()]


@dataclass
class RunConfig:
    polygon: TwistedIdealPolygon
    q: PolyQD
    radius: float = 3.0
    nodes: int = 65
    eps: float = 0.5
    c_cfl: float = 0.5
    tol: float = 1e-4
    max_steps: int = 200_000
    planar_tol: float = 1e-4
    planar_max_steps: int = 1_000_000
    record_every: int = 200
    checkpoint_every: int = 5000
    profile: str = "quintic"
    width: float = 0.7
    psi: bool = True
    gauge: bool = True
    seed: int = 0
    out: str = "run"
    auto_q: bool = field(default=False, compare=False)

    @property
    def n(self) -> int:
        return self.polygon.n

    def hash(self) -> str:
        verts = [("inf" if v is INF else complex(v)) for v in self.polygon.vertices]
        return config_hash(verts, tuple(complex(c) for c in self.q.coeffs), self.radius, self.nodes, self.eps,
                           self.c_cfl, self.tol, self.planar_tol, self.record_every, self.profile, self.width,
                           self.psi, self.gauge)

    def grid(self) -> Grid:
        return Grid.square(self.radius, self.nodes, metric=smooth_metric(self.q, self.eps))

    def flow_config(self, planar=False) -> FlowConfig:
        if planar:
            return FlowConfig(c_cfl=self.c_cfl, tol=self.planar_tol, max_steps=self.planar_max_steps,
                              record_every=self.record_every, checkpoint_every=self.checkpoint_every)
        return FlowConfig(c_cfl=self.c_cfl, tol=self.tol, max_steps=self.max_steps,
                          record_every=self.record_every, checkpoint_every=self.checkpoint_every)

    def to_ini(self) -> str:
        def c(v):
            return "inf" if v is INF else repr(complex(v))

        lines = [
            f"# config_hash: {self.hash()}",
            "[polygon]",
            "vertices = " + ", ".join(c(v) for v in self.polygon.vertices),
            "[q]",
            "coefficients = " + ", ".join(c(v) for v in self.q.coeffs),
            "[grid]",
            f"radius = {self.radius!r}",
            f"nodes = {self.nodes}",
            f"eps = {self.eps!r}",
            "[flow]",
        ]
        for k in ("c_cfl", "tol", "max_steps", "planar_tol", "planar_max_steps", "record_every",
                  "checkpoint_every", "profile", "width"):
            lines.append(f"{k} = {getattr(self, k)!r}".replace("'", ""))
        lines += ["[diagnostics]", f"psi = {'yes' if self.psi else 'no'}", f"gauge = {'yes' if self.gauge else 'no'}",
                  "[run]", f"seed = {self.seed}", f"out = {self.out}"]
        return "\n".join(lines) + "\n"


def anchor_radius(q: PolyQD) -> float:
    return natural_chart(q, "horizontal", 0, 1.0).rho


def auto_q(n: int, radius: float) -> PolyQD:
    """z^(n-2) - s^(n-2) with s <= 1 chosen so the chart anchors sit within 60% of the radius."""
    m = n - 2
    if m == 0:
        return PolyQD([1.0])
    s = 1.0
    # anchor radius of a zero set at radius s is max(1.5 s, 0.5 s + 1)
    if max(1.5 * s, 0.5 * s + 1) > AUTO_Q_FRACTION * radius:
        s = 2 * (AUTO_Q_FRACTION * radius - 1)
    if s <= 0:
        raise ConfigError(f"radius {radius} too small for an automatic q (need > {1 / AUTO_Q_FRACTION:.3g})")
    return PolyQD([-(s ** m)] + [0.0] * (m - 1) + [1.0])


def parse_config(text: str, out: str | None = None) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";",))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from exc
    known = {"polygon": {"vertices", "params", "random", "n"}, "q": {"coefficients"},
             "grid": {"radius", "nodes", "eps"},
             "flow": {"c_cfl", "tol", "max_steps", "planar_tol", "planar_max_steps", "record_every",
                      "checkpoint_every", "profile", "width"},
             "diagnostics": {"psi", "gauge"}, "run": {"seed", "out"}}
    for sec in cp.sections():
        if sec not in known:
            raise ConfigError(f"unknown section [{sec}]")
        extra = set(cp[sec]) - known[sec]
        if extra:
            raise ConfigError(f"unknown keys in [{sec}]: {', '.join(sorted(extra))}")

    def get(sec, key, conv, default):
        if not cp.has_option(sec, key):
            return default
        raw = cp.get(sec, key)
        try:
            return conv(raw)
        except ValueError as exc:
            raise ConfigError(f"[{sec}] {key} = {raw!r}: {exc}") from exc

    def flag(s):
        v = s.strip().lower()
        if v in ("yes", "true", "1", "on"):
            return True
        if v in ("no", "false", "0", "off"):
            return False
        raise ValueError("expected yes or no")

    seed = get("run", "seed", int, 0)
    sources = [k for k in ("vertices", "params", "random") if cp.has_option("polygon", k)]
    if len(sources) != 1:
        raise ConfigError("[polygon] needs exactly one of vertices, params, random")
    try:
        if sources[0] == "vertices":
            P = TwistedIdealPolygon(_parse_list(cp.get("polygon", "vertices")))
        elif sources[0] == "params":
            vals = _parse_list(cp.get("polygon", "params"))
            if any(v is INF for v in vals):
                raise ConfigError("shear-bend values must be finite")
            n = get("polygon", "n", int, len(vals) + 3)
            P = from_params(ShearBendParams(n, tuple(fan(n)), tuple(vals)))
        else:
            P = random_polygon(np.random.default_rng(seed), get("polygon", "random", int, 4))
    except (PolygonError, GeometryError) as exc:
        raise ConfigError(f"invalid polygon: {exc}") from exc
    bad = validate(P)
    if bad:
        raise ConfigError("invalid polygon: " + "; ".join(f"({v.condition}) {v.detail}" for v in bad))

    radius = get("grid", "radius", float, 3.0)
    if not radius > 0:
        raise ConfigError("radius must be positive")
    coeffs = cp.get("q", "coefficients", fallback="auto").strip()
    if coeffs.lower() == "auto":
        q, is_auto = auto_q(P.n, radius), True
    else:
        vals = _parse_list(coeffs)
        if any(v is INF for v in vals):
            raise ConfigError("q coefficients must be finite")
        try:
            q = PolyQD(vals)
        except QDError as exc:
            raise ConfigError(str(exc)) from exc
        is_auto = False
    if q.degree != P.n - 2:
        raise ConfigError(f"q has degree {q.degree} but an {P.n}-gon needs degree {P.n - 2}")

    cfg = RunConfig(
        polygon=P, q=q, radius=radius,
        nodes=get("grid", "nodes", int, 65),
        eps=get("grid", "eps", float, 0.5),
        c_cfl=get("flow", "c_cfl", float, 0.5),
        tol=get("flow", "tol", float, 1e-4),
        max_steps=get("flow", "max_steps", int, 200_000),
        planar_tol=get("flow", "planar_tol", float, 1e-4),
        planar_max_steps=get("flow", "planar_max_steps", int, 1_000_000),
        record_every=get("flow", "record_every", int, 200),
        checkpoint_every=get("flow", "checkpoint_every", int, 5000),
        profile=cp.get("flow", "profile", fallback="quintic").strip(),
        width=get("flow", "width", float, 0.7),
        psi=get("diagnostics", "psi", flag, True),
        gauge=get("diagnostics", "gauge", flag, True),
        seed=seed,
        out=out or cp.get("run", "out", fallback="run").strip(),
        auto_q=is_auto,
    )
    check_config(cfg)
    return cfg


def check_config(cfg: RunConfig):
    for k in ("tol", "planar_tol", "eps", "c_cfl", "width"):
        if not getattr(cfg, k) > 0:
            raise ConfigError(f"{k} must be positive")
    if cfg.c_cfl > 1:
        raise ConfigError("c_cfl above 1 violates the step-size bound")
    if cfg.nodes < 9:
        raise ConfigError("need at least 9 nodes per side")
    if cfg.max_steps < 0 or cfg.planar_max_steps < 0 or cfg.record_every < 1 or cfg.checkpoint_every < 0:
        raise ConfigError("step counts must be non-negative (record_every at least 1)")
    if cfg.profile not in ("quintic", "septic"):
        raise ConfigError(f"unknown profile {cfg.profile!r}")
    if cfg.q.degree > 0:
        rho = anchor_radius(cfg.q)
        if rho >= cfg.radius:
            raise ConfigError(f"radius {cfg.radius} does not exceed the chart anchor radius {rho:.4g}")


# ------------------------------------------------------------ stages

@dataclass
class PolygonStage:
    P: TwistedIdealPolygon
    P0: TwistedIdealPolygon
    data: BendingData
    Q: TwistedIdealPolygon  # P0 bent back, in the placement of P0


def polygon_stage(cfg: RunConfig) -> PolygonStage:
    n = cfg.n
    try:
        P0s, _ = straighten(cfg.polygon, fan(n))
        params = to_params(cfg.polygon, fan(n))
        P0, _ = reposition(P0s)
        angles = [float(np.angle(c)) for c in params.values]
        data = BendingData.build(P0, fan(n), angles)
        Q = bend(P0, data)
    except (PolygonError, GeometryError, PlanarError) as exc:
        raise ConfigError(f"polygon cannot be straightened: {exc}") from exc
    return PolygonStage(cfg.polygon, P0, data, Q)


def _cjson(v):
    return "inf" if v is INF else [complex(v).real, complex(v).imag]


def polygon_document(cfg: RunConfig, ps: PolygonStage) -> str:
    params = to_params(ps.P, fan(cfg.n))
    d = {
        "config_hash": cfg.hash(),
        "n": cfg.n,
        "diagonals": [list(x) for x in ps.data.triangulation],
        "params": [_cjson(c) for c in params.values],
        "bending_angles": [float(a) for a in ps.data.angles],
        "straightened": [_cjson(v) for v in ps.P0.vertices],
        "bent": [_cjson(v) for v in ps.Q.vertices],
        "q": [_cjson(c) for c in cfg.q.coeffs],
        "q_auto": cfg.auto_q,
    }
    return json.dumps(d, indent=2, sort_keys=True) + "\n"


class Paths:
    def __init__(self, out):
        self.out = Path(out)
        self.config = self.out / "config.ini"
        self.polygon = self.out / "polygon.json"
        self.planar = self.out / "planar.ckpt"
        self.planar_series = self.out / "planar_series.csv"
        self.t0 = self.out / "flow_t0.ckpt"
        self.flow = self.out / "flow.ckpt"
        self.series = self.out / "flow_series.csv"

    def flow_artifacts(self):
        return [self.planar, self.planar_series, self.t0, self.flow, self.series]


def _claim_dir(cfg: RunConfig, paths: Paths, targets, force: bool, resume: bool = False):
    """Check the run directory belongs to this config; refuse to overwrite unless forced."""
    paths.out.mkdir(parents=True, exist_ok=True)
    h = cfg.hash()
    if paths.config.exists():
        old = _file_hash(paths.config)
        if old != h and not force:
            raise ArtifactError(f"{paths.out} holds a run with config hash {old}, not {h} (use --force)")
    existing = [p for p in targets if p.exists()]
    if existing and not (force or resume):
        raise ArtifactError(f"refusing to overwrite {existing[0]} (use --force or --resume)")
    if force:
        for p in existing:
            p.unlink()
    paths.config.write_text(cfg.to_ini())


def _file_hash(path) -> str:
    with open(path) as fh:
        for line in fh:
            s = line.strip()
            if s.startswith("#") and "config_hash" in s:
                return s.split(":", 1)[1].strip()
            if s.startswith("comment config_hash"):
                return s.split()[-1]
            if s.startswith("{"):
                fh.seek(0)
                return json.load(fh).get("config_hash", "")
    return ""


def cmd_polygon(cfg: RunConfig, force=False) -> int:
    paths = Paths(cfg.out)
    ps = polygon_stage(cfg)
    _claim_dir(cfg, paths, [paths.polygon], force)
    paths.polygon.write_text(polygon_document(cfg, ps))
    angles = ", ".join(f"{a:.6g}" for a in ps.data.angles) or "none"
    print(f"polygon n={cfg.n} bending angles: {angles}")
    return EXIT_OK


def planar_stage(cfg: RunConfig, ps: PolygonStage, grid: Grid, paths: Paths | None = None, resume=False):
    """Harmonic map h into the plane of P0; returns (FlowState, converged)."""
    chash = cfg.hash()
    if paths is not None and resume and paths.planar.exists():
        m, hdr = read_checkpoint(paths.planar, grid)
        _require_hash(hdr["config_hash"], chash, paths.planar)
        hist, _ = read_series(paths.planar_series) if paths.planar_series.exists() else ([], "")
        st = FlowState(m, grid, int(hdr["step"]), hist, bool(int(hdr["converged"])), chash)
        if st.converged:
            return st
    else:
        init = build_planar_initial(ps.P0, cfg.q, grid)
        st = FlowState(init.map.copy(), grid, config_hash=chash)
    fc = cfg.flow_config(planar=True)
    fc.max_steps = max(0, cfg.planar_max_steps - st.step)
    def save(s):
        if paths is not None:
            write_checkpoint(paths.planar, s)
            write_series(paths.planar_series, s)

    out = run(st, fc, checkpoint=save)
    drift = float(np.abs(out.map.U[1]).max())
    if drift > 1e-9:
        raise NumericalError(f"planar flow left the plane by {drift}")
    out.map.U[1] = 0.0
    save(out)
    return out


def flow_hooks(cfg: RunConfig, ps: PolygonStage, h: DiscreteMap, grid: Grid):
    hooks = {}
    if cfg.psi:
        pf = dg.pleated_field(h, ps.data)
        hooks["sup_psi"] = lambda m: dg.psi_sup(m, pf, grid.active)
    if cfg.gauge:
        faces = hull_faces(ps.Q.vertices)
        hooks["sup_gauge"] = lambda m: dg.gauge_sup(m, faces, grid.active)
    return hooks


def record_times(cfg: RunConfig, grid: Grid) -> list:
    # geometric spacing so the log-log tension slope is sampled evenly
    t0 = 10 * grid.cfl_dt(cfg.c_cfl)
    return list(np.geomspace(t0, 1e4, int(round(10 * math.log10(1e4 / t0))) + 1))


def _require_hash(found, expected, path):
    if found != expected:
        raise ArtifactError(f"{path} has config hash {found}, expected {expected}")


def cmd_flow(cfg: RunConfig, resume=False, force=False) -> int:
    paths = Paths(cfg.out)
    chash = cfg.hash()
    ps = polygon_stage(cfg)
    _claim_dir(cfg, paths, paths.flow_artifacts(), force, resume)
    if not paths.polygon.exists():
        paths.polygon.write_text(polygon_document(cfg, ps))
    else:
        _require_hash(_file_hash(paths.polygon), chash, paths.polygon)
    grid = cfg.grid()
    pl = planar_stage(cfg, ps, grid, paths, resume)
    if not pl.converged:
        print(f"planar stage not converged after {pl.step} steps (sup tension {pl.history[-1]['sup_tau']:.3g})")
        return EXIT_NONCONVERGED
    h = pl.map
    h.t = 0.0
    u0 = build_initial_map(h, grid, ps.data, width=cfg.width, kind=cfg.profile).map
    hooks = flow_hooks(cfg, ps, h, grid)
    if resume and paths.flow.exists():
        m, hdr = read_checkpoint(paths.flow, grid)
        _require_hash(hdr["config_hash"], chash, paths.flow)
        hist, sh = read_series(paths.series)
        _require_hash(sh, chash, paths.series)
        state = FlowState(m, grid, int(hdr["step"]), hist, False, chash)
    else:
        state = FlowState(u0, grid, config_hash=chash)
    if not paths.t0.exists():
        write_checkpoint(paths.t0, FlowState(u0, grid, config_hash=chash))

    def save(s):
        write_checkpoint(paths.flow, s)
        write_series(paths.series, s)

    fc = cfg.flow_config()
    fc.max_steps = max(0, cfg.max_steps - state.step)
    out = run(state, fc, hooks=hooks, checkpoint=save, record_times=record_times(cfg, grid))
    save(out)
    last = out.history[-1]
    print(f"flow: step {out.step} t {out.t:.6g} sup tension {last['sup_tau']:.3g} "
          f"{'converged' if out.converged else 'not converged'}")
    return EXIT_OK if out.converged else EXIT_NONCONVERGED


# ------------------------------------------------------------ diagnostics

REQUIRED_CHECKS = ("converged", "energy_monotone", "psi_nonincreasing", "gauge_bounded", "tension_time_decay",
                   "tension_space_decay", "hopf_polynomial")

# tolerance of the maximum-principle checks, relative to the initial sup
MP_REL = 5e-3


@dataclass
class Loaded:
    cfg: RunConfig
    ps: PolygonStage
    grid: Grid
    h: DiscreteMap
    m: DiscreteMap
    series: dict
    step: int
    checkpoint: Path


def load_run(paths: Paths, checkpoint=None) -> Loaded:
    if not paths.config.exists():
        raise ArtifactError(f"no config.ini in {paths.out}")
    cfg = parse_config(paths.config.read_text(), str(paths.out))
    chash = cfg.hash()
    ck = Path(checkpoint) if checkpoint else paths.flow
    for p in (ck, paths.planar, paths.series, paths.polygon):
        if not p.exists():
            raise ArtifactError(f"missing {p}")
        _require_hash(_file_hash(p), chash, p)
    grid = cfg.grid()
    m, hdr = read_checkpoint(ck, grid)
    h, _ = read_checkpoint(paths.planar, grid)
    hist, _ = read_series(paths.series)
    hist = [r for r in hist if r["t"] <= m.t]
    if not hist:
        raise ArtifactError(f"{paths.series} has no records up to t = {m.t}")
    keys = ("t", "energy", "sup_tau", "sup_psi", "sup_gauge")
    series = {k: np.array([r[k] for r in hist]) for k in keys}
    return Loaded(cfg, polygon_stage(cfg), grid, h, m, series, int(hdr["step"]), ck)


def _running_excess(y):
    """max_i (y_i - min_{j<=i} y_j): zero for a non-increasing sequence."""
    y = np.asarray(y, dtype=float)
    return float(np.max(y - np.minimum.accumulate(y))) if len(y) else 0.0


def build_report(L: Loaded) -> tuple:
    cfg, grid, m, s = L.cfg, L.grid, L.m, L.series
    E = []
    _, norm = tension_field(m, grid)
    sup_tau = float(norm.max())
    E.append(dg.Entry("converged", sup_tau < cfg.tol, {"sup_tau": sup_tau}, {"tol": cfg.tol}))
    dE = np.diff(s["energy"])
    rise = float(dE.max()) if len(dE) else 0.0
    etol = 1e-12 * float(s["energy"][0])
    E.append(dg.Entry("energy_monotone", rise <= etol, {"max_increase": rise}, {"allowed": etol}))

    pf = dg.pleated_field(L.h, L.ps.data)
    psi_now = dg.psi_sup(m, pf, grid.active)
    psi = s["sup_psi"]
    if np.isfinite(psi).all() and len(psi):
        M0 = float(psi[0])
        exc = _running_excess(psi)
        E.append(dg.Entry("psi_nonincreasing", exc <= MP_REL * M0,
                          {"M0": M0, "sup_psi": psi_now, "max_rise": exc, "ratio_to_M0": psi_now / M0 if M0 else 0.0,
                           "flagged_nodes": int(pf.flagged[grid.active].sum())},
                          {"allowed_rise": MP_REL * M0}))
    else:
        E.append(dg.Entry("psi_nonincreasing", False, {"sup_psi": psi_now}, {}, "no recorded series"))
    faces = hull_faces(L.ps.Q.vertices)
    G = hull_gauge_array(m.points, faces)
    g_now = float(G[grid.active].max())
    gs = s["sup_gauge"]
    if np.isfinite(gs).all() and len(gs):
        G0 = float(gs[0])
        allowed = G0 + MP_REL * max(G0, 1e-12)
        E.append(dg.Entry("gauge_bounded", float(gs.max()) <= allowed, {"G0": G0, "sup_gauge": g_now,
                          "max_gauge": float(gs.max())}, {"allowed": allowed}))
    else:
        E.append(dg.Entry("gauge_bounded", False, {"sup_gauge": g_now}, {}, "no recorded series"))

    t, st = s["t"], s["sup_tau"]
    pos = t > 0
    if pos.sum() >= 3 and t[pos].max() / t[pos].min() > 10:
        lo, hi = dg.middle_decade(t[pos])
        try:
            slope = dg.loglog_slope(t, st, lo, hi)
            E.append(dg.Entry("tension_time_decay", slope <= -0.4, {"slope": slope, "t_lo": lo, "t_hi": hi},
                              {"max_slope": -0.4}))
        except (ValueError, dg.DiagnosticsError) as exc:
            E.append(dg.Entry("tension_time_decay", False, {}, {"max_slope": -0.4}, str(exc)))
    else:
        E.append(dg.Entry("tension_time_decay", False, {}, {"max_slope": -0.4}, "recorded times span less than a decade"))

    mask = dg.trusted_mask(grid, cfg.q, cfg.eps)
    try:
        rate, corr = dg.tension_decay(m, grid, cfg.q, mask)
        E.append(dg.Entry("tension_space_decay", rate < 0, {"rate": rate, "corr": corr}, {"max_rate": 0.0}))
    except dg.DiagnosticsError as exc:
        E.append(dg.Entry("tension_space_decay", False, {}, {"max_rate": 0.0}, str(exc)))
    try:
        hf = dg.hopf_field(m, grid, cfg.n - 2, mask)
        ok = hf.fit_residual < 0.05 and hf.excess_ratio < 0.01
        E.append(dg.Entry("hopf_polynomial", ok, {"fit_residual": hf.fit_residual, "excess_ratio": hf.excess_ratio,
                          "coeffs": [_cjson(c) for c in hf.coeffs]}, {"fit_residual": 0.05, "excess_ratio": 0.01}))
    except dg.DiagnosticsError as exc:
        hf = None
        E.append(dg.Entry("hopf_polynomial", False, {}, {"fit_residual": 0.05, "excess_ratio": 0.01}, str(exc)))
    fields = {"height": m.U[2], "tension": norm, "energy_density": energy_density(m, grid),
              "psi": dg.psi_field(m, pf), "gauge": G}
    return E, fields, pf


def _diag_dir(paths: Paths, ck: Path, verb: str) -> Path:
    return paths.out / f"{verb}-{ck.stem}"


def cmd_diag(out, checkpoint=None, force=False) -> int:
    paths = Paths(out)
    L = load_run(paths, checkpoint)
    d = _diag_dir(paths, L.checkpoint, "diag")
    if d.exists():
        if not force:
            raise ArtifactError(f"refusing to overwrite {d} (use --force)")
        shutil.rmtree(d)
    d.mkdir(parents=True)
    chash = L.cfg.hash()
    entries, fields, pf = build_report(L)
    _exports(d, L, fields, pf, chash)
    dg.plot_series(d / "series.png", L.series, chash)
    for k in ("tension", "psi", "energy_density"):
        dg.plot_field(d / f"{k}.png", L.grid, fields[k], k, chash)
    rep = dg.assemble_report(entries, chash, {"series": str(paths.series.name), "fields": "fields.csv",
                                              "mesh": "u.ply", "pleated_mesh": "xi.ply"}, REQUIRED_CHECKS)
    (d / "report.json").write_text(rep.to_text())
    for e in rep.entries:
        print(f"{'PASS' if e.passed else 'FAIL'} {e.name}")
    print(f"report status {rep.status}: {d / 'report.json'}")
    return EXIT_OK


def _exports(d: Path, L: Loaded, fields: dict, pf, chash: str):
    dg.write_grid_csv(d / "fields.csv", L.grid, fields, chash)
    dg.write_ply(d / "u.ply", L.m.points, chash)
    dg.write_ply(d / "xi.ply", pf.values, chash)


def cmd_export(out, checkpoint=None, force=False) -> int:
    paths = Paths(out)
    L = load_run(paths, checkpoint)
    d = _diag_dir(paths, L.checkpoint, "export")
    if d.exists():
        if not force:
            raise ArtifactError(f"refusing to overwrite {d} (use --force)")
        shutil.rmtree(d)
    d.mkdir(parents=True)
    _, norm = tension_field(L.m, L.grid)
    pf = dg.pleated_field(L.h, L.ps.data)
    fields = {"height": L.m.U[2], "tension": norm, "energy_density": energy_density(L.m, L.grid),
              "psi": dg.psi_field(L.m, pf)}
    _exports(d, L, fields, pf, L.cfg.hash())
    print(f"exported to {d}")
    return EXIT_OK


# ------------------------------------------------------------ entry point

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="twistflow", description="Harmonic-map heat flow to twisted ideal polygons.")
    p.add_argument("verb", choices=("polygon", "flow", "diag", "export"))
    p.add_argument("--config", help="run configuration (INI)")
    p.add_argument("--out", help="run directory (default: [run] out of the config)")
    p.add_argument("--resume", action="store_true", help="continue from the last checkpoint")
    p.add_argument("--force", action="store_true", help="overwrite existing artifacts")
    p.add_argument("--threads", type=int, help="worker threads (default: $TWISTFLOW_THREADS)")
    p.add_argument("--checkpoint", help="checkpoint for diag/export (default: the latest flow checkpoint)")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.resume and args.force:
            raise ConfigError("--resume and --force exclude each other")
        set_threads(args.threads)
        if args.verb in ("polygon", "flow"):
            if not args.config:
                raise ConfigError(f"{args.verb} needs --config")
            try:
                text = Path(args.config).read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read {args.config}: {exc}") from exc
            cfg = parse_config(text, args.out)
            if args.verb == "polygon":
                return cmd_polygon(cfg, args.force)
            return cmd_flow(cfg, args.resume, args.force)
        out = args.out
        if out is None:
            if not args.config:
                raise ConfigError(f"{args.verb} needs --out or --config")
            out = parse_config(Path(args.config).read_text()).out
        if args.verb == "diag":
            return cmd_diag(out, args.checkpoint, args.force)
        return cmd_export(out, args.checkpoint, args.force)
    except (FloorError, CFLError, NumericalError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, FlowError, OSError) as exc:
        # config errors, unreadable or mismatched artifacts
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
