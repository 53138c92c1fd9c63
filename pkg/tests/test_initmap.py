import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twistflow.flow import DiscreteMap, Grid, energy_density, tension_field
from twistflow.hyp3 import dist_array, mobius_array
from twistflow.initmap import (
    InitMapError,
    _diag_chart,
    build_initial_map,
    interp_tension_closed_form,
    pleated_values,
    theta_profile,
)
from twistflow.planar import build_planar_initial, reposition
from twistflow.polygon import BendingData, ShearBendParams, fan, from_params, straighten
from twistflow.qd import PolyQD, smooth_metric


# ------------------------------------------------------------ profiles

def test_profile_examples():
    p = theta_profile(0.0, 2.0, 0.0)
    assert np.all(p(np.linspace(-1, 3, 11)) == 0)
    p = theta_profile(-1.0, 3.0, 1.3)
    assert abs(p(1.0) - 0.65) < 1e-15
    assert p(-2.0) == 0 and p(5.0) == 1.3
    for kind in ("quintic", "septic"):
        p = theta_profile(-1.0, 3.0, 1.3, kind)
        s = 1e-9
        assert abs(p.d2(-1.0 + s)) < 1e-7 and abs(p.d2(3.0 - s)) < 1e-7
        assert abs(p.d1(-1.0 + s)) < 1e-7 and abs(p.d1(3.0 - s)) < 1e-7
    with pytest.raises(InitMapError):
        theta_profile(1.0, 1.0, 0.5)
    with pytest.raises(InitMapError):
        theta_profile(0.0, 1.0, 0.5, "cubic")


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(0.1, 5), st.floats(-3, 3), st.sampled_from(["quintic", "septic"]))
def test_profile_derivatives(a, L, th0, kind):
    p = theta_profile(a, a + L, th0, kind)
    x = np.linspace(a - 0.5, a + L + 0.5, 2001)
    d = 1e-6 * L
    assert np.allclose(p.d1(x), (p(x + d) - p(x - d)) / (2 * d), atol=1e-5 * (1 + abs(th0)) / L)
    assert np.abs(p.d1(x)).max() <= p.sup_d1() * (1 + 1e-12)
    if kind == "quintic":
        assert abs(p.sup_d1() - 15 / 8 * abs(th0) / L) < 1e-12


# ------------------------------------------------------------ closed form

def _strip(n, kind):
    g = Grid(-0.5, 0.5, -0.5, 0.5, n, n)
    z = g.z
    x, y = z.real, z.imag
    f = -np.exp(x) * np.sin(y)
    gg = np.exp(x) * np.cos(y)
    prof = theta_profile(-0.3, 0.3, math.pi / 2, kind)
    th = prof(x)
    U = np.stack([f * np.cos(th), f * np.sin(th), gg])
    return g, DiscreteMap(U), f, gg, prof


def test_closed_form_trivial_cases():
    prof = theta_profile(0.0, 1.0, 1.0)
    tau = interp_tension_closed_form(0.3, 1.2, 0.1, prof, -1.0)
    assert np.all(tau == 0)
    tau = interp_tension_closed_form(0.0, 1.2, 0.0, prof, 0.4)
    assert np.all(tau == 0)


@pytest.mark.parametrize("kind", ["quintic", "septic"])
def test_closed_form_matches_discrete_tension(kind):
    errs = []
    for n in (41, 81, 161):
        g, m, f, gg, prof = _strip(n, kind)
        T, _ = tension_field(m, g)
        x = g.z.real
        ref = interp_tension_closed_form(f, gg, f, prof, x, g_x=gg)
        ref = np.moveaxis(ref, -1, 0)
        # generic points: away from the profile end points
        sel = g.active & (np.abs(np.abs(x) - 0.3) > 0.06)
        errs.append(np.abs(T - ref)[:, sel].max())
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_strip_energy_density():
    errs = []
    for n in (41, 81):
        g, m, f, gg, prof = _strip(n, "septic")
        h = DiscreteMap(np.stack([f, 0 * f, gg]))
        e = energy_density(m, g)
        expect = energy_density(h, g) + f ** 2 * prof.d1(g.z.real) ** 2 / gg ** 2
        errs.append(np.nanmax(np.abs(e - expect)))
    assert errs[0] / errs[1] > 3.5


def test_strip_y_component():
    g, m, f, gg, prof = _strip(21, "quintic")
    assert np.abs(m.U[1] - f * np.sin(prof(g.z.real))).max() < 1e-12


# ------------------------------------------------------------ assembled map

@pytest.fixture(scope="module")
def square_setup():
    P = from_params(ShearBendParams(4, ((0, 2),), (1j,)))
    P0s, d0 = straighten(P)
    P0, _ = reposition(P0s)
    data = BendingData.build(P0, fan(4), d0.angles)
    q = PolyQD([-1, 0, 1])
    grid = Grid.square(3.0, 33, metric=smooth_metric(q, 0.5))
    h = build_planar_initial(P0, q, grid).map
    return P0, data, grid, h


def test_zero_bending_gives_h(square_setup):
    P0, data, grid, h = square_setup
    flat = BendingData.build(P0, fan(4), [0.0])
    u0 = build_initial_map(h, grid, flat)
    assert np.array_equal(u0.map.U, h.U)


def test_agrees_with_pleated_map_off_bands(square_setup):
    P0, data, grid, h = square_setup
    u0 = build_initial_map(h, grid, data)
    Xi, region, _ = pleated_values(h, data)
    d = dist_array(u0.map.points, Xi)
    assert u0.band.any() and not u0.band.all()
    assert d[~u0.band].max() < 1e-9
    assert np.isfinite(d).all()


def test_band_is_rotation_about_diagonal(square_setup):
    P0, data, grid, h = square_setup
    u0 = build_initial_map(h, grid, data, kind="septic")
    G = _diag_chart(data, 0)
    Hc = mobius_array(G, h.points)
    Uc = mobius_array(G, u0.map.points)
    ang = np.arctan2(Uc[..., 1], Uc[..., 0]) - np.arctan2(Hc[..., 1], Hc[..., 0])
    ang = np.angle(np.exp(1j * ang))
    # rotation angles lie between 0 and the bending angle, and match theta * chi
    expect = np.angle(np.exp(1j * data.angles[0] * u0.chi[0]))
    ok = np.abs(Hc[..., 0]) > 1e-3 * Hc[..., 2]
    err = np.abs(np.abs(ang[ok]) - np.abs(expect[ok]))
    assert err.max() < 1e-9
    assert np.abs(np.hypot(Uc[..., 0], Uc[..., 1]) - np.abs(Hc[..., 0])).max() < 1e-9 * np.abs(Hc).max()


def test_initial_energy_density_bounded(square_setup):
    P0, data, grid, h = square_setup
    u0 = build_initial_map(h, grid, data)
    e = energy_density(u0.map, grid)
    assert np.nanmax(e) < 10 * np.nanmax(energy_density(h, grid))


def test_rejects_bad_input(square_setup):
    P0, data, grid, h = square_setup
    with pytest.raises(InitMapError):
        build_initial_map(h, grid, data, width=0.0)
    bent = h.copy()
    bent.U[1] += 0.1
    with pytest.raises(InitMapError):
        build_initial_map(bent, grid, data)
