import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twistflow.diagnostics import (
    DiagnosticsError,
    Entry,
    Report,
    assemble_report,
    binned_envelope,
    canoe_constant,
    decay_fit,
    fit_polynomial,
    hopf_field,
    hopf_phi,
    loglog_slope,
    middle_decade,
    plot_field,
    plot_series,
    pleated_field,
    pp_compare,
    pp_of_fit,
    psi_sup,
    q_distance,
    read_ply_vertices,
    side_asymptotics,
    trusted_mask,
    windowed_decay,
    write_grid_csv,
    write_ply,
)
from twistflow.flow import DiscreteMap, Grid
from twistflow.hyp3 import INF, mobius_array
from twistflow.planar import build_planar_initial, reposition
from twistflow.polygon import BendingData, TwistedIdealPolygon, fan
from twistflow.qd import PolyQD, principal_part, smooth_metric


def collapse(grid):
    z = grid.z
    return DiscreteMap(np.stack([0 * z.real, 0 * z.real, np.exp(z.real)]))


def test_hopf_collapse_and_constant():
    g = Grid(-1, 1, -1, 1, 81, 81)
    phi = hopf_phi(collapse(g), g)
    a = g.active
    assert np.abs(phi[a] - 0.25).max() < 1e-3
    c = DiscreteMap(np.stack([np.zeros((81, 81)), np.zeros((81, 81)), np.ones((81, 81))]))
    assert np.abs(hopf_phi(c, g)[a]).max() == 0


def test_hopf_fit_of_polynomial_field():
    g = Grid.square(2.0, 41)
    z = g.z
    phi = 1 - 2j * z + 0.5 * z ** 2
    c, res = fit_polynomial(phi, z, g.active, 2)
    assert np.allclose(c, [1, -2j, 0.5]) and res < 1e-12
    with pytest.raises(DiagnosticsError):
        fit_polynomial(phi, z, np.zeros_like(g.active), 2)


def test_hopf_field_collapse_fit():
    g = Grid(-1, 1, -1, 1, 41, 41)
    hf = hopf_field(collapse(g), g, 0)
    assert abs(hf.coeffs[0] - 0.25) < 1e-3 and hf.fit_residual < 1e-3
    assert hf.excess_ratio < 1e-2
    assert np.nanmax(hf.dbar[hf.mask]) < 1e-10


def test_pp_compare():
    q = PolyQD([0, 0, 1])
    pp = principal_part(q)
    assert pp.as_array()[0] == 1 and np.abs(pp.as_array()[1:]).max() == 0

    class Fake:
        coeffs = np.array([1.0, 0.0, 1.0])

    assert pp_compare(pp_of_fit(Fake), principal_part(PolyQD([1, 0, 1]))) < 1e-12
    shifted = principal_part(PolyQD([1, 2, 1]))  # (z + 1)^2
    assert pp_compare(pp, shifted) > 0.5


def test_decay_fit_examples():
    x = np.linspace(0, 5, 40)
    rate, icpt, corr = decay_fit(np.exp(-x), x)
    assert abs(rate + 1) < 1e-6 and corr < -0.999
    rate, _, _ = decay_fit(np.full(20, 3.0), np.arange(20.0))
    assert rate == 0
    rng = np.random.default_rng(0)
    rate, _, _ = decay_fit(np.exp(-2 * x) + 1e-8 * rng.random(40), x)
    assert abs(rate + 2) < 0.05
    with pytest.raises(DiagnosticsError):
        decay_fit(np.array([1.0, -1.0, 0.0] * 3), np.arange(9.0))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 4), st.floats(-3, 3))
def test_decay_fit_recovers_rate(rate, c):
    x = np.linspace(0, 3, 25)
    r, i, corr = decay_fit(np.exp(c - rate * x), x)
    assert abs(r + rate) < 1e-8 and abs(i - c) < 1e-8


def test_envelope_and_slopes():
    d = np.linspace(0, 10, 1000)
    c, m = binned_envelope(np.exp(-d), d, 10)
    assert len(c) == 10 and (np.diff(m) < 0).all()
    t = np.geomspace(0.1, 100, 50)
    assert abs(loglog_slope(t, t ** -0.5, 1, 10) + 0.5) < 1e-12
    lo, hi = middle_decade(t)
    assert abs(math.log10(hi / lo) - 1) < 1e-12 and abs(math.log10(lo * hi) - 1.0) < 1e-12


def test_windowed_decay_stops_at_error_floor():
    rng = np.random.default_rng(1)
    d = rng.uniform(0, 8, 20000)
    sig = np.exp(-2 * d) * (1 + 0.5 * np.sin(5 * d) ** 2) + 1e-6
    sig[d < 1.5] *= np.exp(3 * (d[d < 1.5] - 1.5))  # rising core before the peak
    wd = windowed_decay(sig, np.full_like(d, 1e-6), d, width=0.1, start_min=0.5)
    assert abs(wd.window[0] - 1.55) < 0.11
    # signal reaches 3e-6 near d = 0.5 log(1/2e-6) ~ 6.6
    assert 5.5 < wd.window[1] < 7.0
    assert abs(wd.rate + 2) < 0.2 and wd.corr < -0.99
    with pytest.raises(DiagnosticsError):
        windowed_decay(sig, np.full_like(d, 1.0), d, width=0.1, start_min=0.5)


def test_q_distance():
    q = PolyQD([1])
    z = np.array([2.0, 3j, -1 - 1j])
    assert np.allclose(q_distance(q, z), 2 * np.abs(z))
    q = PolyQD([0, 0, 1])
    assert abs(q_distance(q, np.array([2.0]))[0] - 4.0) < 1e-12


def test_pleated_field_triangle_and_square():
    P0, _ = reposition(TwistedIdealPolygon([0, 1, INF]))
    q = PolyQD([-1, 1])
    g = Grid.square(2.0, 21, metric=smooth_metric(q, 0.5))
    h = build_planar_initial(P0, q, g).map
    data = BendingData.build(P0, [], [])
    pf = pleated_field(h, data)
    assert np.array_equal(pf.values, h.points)
    P0, _ = reposition(TwistedIdealPolygon([0, 1, INF, -1]))
    q = PolyQD([-1, 0, 1])
    h = build_planar_initial(P0, q, g).map
    data = BendingData.build(P0, fan(4), [1.0])
    pf = pleated_field(h, data)
    beyond = pf.region != data.base
    assert beyond.any()
    e1 = data.cocycle_between(data.base, 1 - data.base)
    assert np.allclose(pf.values[beyond], mobius_array(e1, h.points[beyond]))
    assert np.allclose(pf.values[~beyond], h.points[~beyond])
    assert psi_sup(h, pf, g.active) > 0


def test_side_asymptotics_of_collapse_guess():
    P0, _ = reposition(TwistedIdealPolygon([0, 1, INF]))
    q = PolyQD([-1, 1])
    g = Grid.square(3.0, 121, metric=smooth_metric(q, 0.5))
    h = build_planar_initial(P0, q, g).map
    reps = side_asymptotics(h, g, q, P0, heights=(1.0, 1.5))
    assert len(reps) == 3
    for r in reps:
        assert max(r.curvature) < 0.02
        assert max(r.residual) < 1e-3
        assert max(r.side_distance) < 1e-3


def test_canoe_constant():
    C = canoe_constant()
    assert 0.5 < C < 1.5


def test_trusted_mask_excludes_zeros_and_margin():
    q = PolyQD([-1, 0, 1])
    g = Grid.square(3.0, 61)
    m = trusted_mask(g, q, eps=0.25)
    z = g.z
    assert not m[np.abs(z - 1) < 0.499].any() and not m[np.abs(z + 1) < 0.499].any()
    assert not m[np.abs(z.real) > 2.55].any()
    assert m.any()


def test_report_roundtrip_and_status():
    es = [Entry("a", True, {"x": 1.0}, {"x": 2.0}), Entry("b", False, {"y": 3.5}, {"y": 1.0}, "too big")]
    r = assemble_report(es, "abc", {"series": "s.csv"}, required=("a", "b"))
    assert r.status == "fail" and r.failing() == ["b"]
    r2 = Report.from_text(r.to_text())
    assert r2.to_text() == r.to_text()
    ok = assemble_report([es[0]], "abc")
    assert ok.status == "ok"
    with pytest.raises(DiagnosticsError):
        assemble_report([es[0]], required=("a", "b"))


def test_exports(tmp_path):
    g = Grid.square(1.0, 7)
    m = collapse(g)
    write_ply(tmp_path / "m.ply", m.points)
    V = read_ply_vertices(tmp_path / "m.ply")
    assert V.shape == (49, 3) and np.array_equal(V, m.points.reshape(-1, 3))
    write_grid_csv(tmp_path / "f.csv", g, {"height": m.U[2]})
    rows = (tmp_path / "f.csv").read_text().splitlines()
    assert rows[0] == "x,y,height" and len(rows) == 50
    series = {"t": np.array([0.0, 1.0, 2.0]), "energy": np.array([3.0, 2.0, 1.0]), "sup_tau": np.array([1.0, 0.5, 0.2]),
              "sup_psi": np.full(3, np.nan), "sup_gauge": np.array([0.1, 0.1, 0.1])}
    plot_series(tmp_path / "s.png", series)
    plot_field(tmp_path / "f.png", g, m.U[2], "height")
    assert (tmp_path / "s.png").stat().st_size > 0 and (tmp_path / "f.png").stat().st_size > 0
