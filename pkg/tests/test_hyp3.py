import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from twistflow.hyp3 import (
    INF, GeodesicLine, GeodesicPlane, GeometryError, Mobius, PointH3, apply_mobius,
    cross_ratio, dist, dist_array, dist_to_line, elliptic_about_axis, fit_geodesic,
    geodesic_through, hull_faces, hull_gauge, ideal_close, mobius_array, normalize_triple,
    plane_through, polyline_curvature, random_mobius, signed_plane_dist, ball_to_h3,
    h3_to_ball, to_sphere, log_map_array, exp_map_array, ideal_side,
)

finite = st.floats(-5, 5, allow_nan=False)
height = st.floats(0.05, 5, allow_nan=False)
points = st.builds(PointH3, finite, finite, height)


def test_dist_identity_and_vertical():
    assert dist(PointH3(0, 0, 1), PointH3(0, 0, 1)) == 0
    assert dist(PointH3(0, 0, 1), PointH3(0, 0, math.e)) == pytest.approx(1.0, abs=1e-15)


def test_dist_against_arclength_oracle():
    # the geodesic through (0,0,1) and (1,0,1) is the circle about 1/2 of radius sqrt(5)/2
    r = math.sqrt(1.25)
    a0 = math.atan2(1, -0.5)
    a1 = math.atan2(1, 0.5)
    length, _ = quad(lambda t: r / (r * math.sin(t)), a1, a0, epsabs=1e-14)
    assert length == pytest.approx(0.9624236501192069, abs=1e-12)
    assert dist(PointH3(1, 0, 1), PointH3(0, 0, 1)) == pytest.approx(length, abs=1e-12)


def test_invalid_point():
    with pytest.raises(GeometryError):
        PointH3(0, 0, -1)
    with pytest.raises(GeometryError):
        PointH3(float("nan"), 0, 1)


@given(points, points)
def test_dist_symmetric_nonnegative(p, q):
    d = dist(p, q)
    assert d >= 0
    assert d == pytest.approx(dist(q, p), abs=1e-12)
    cosh = 1 + ((p.x - q.x) ** 2 + (p.y - q.y) ** 2 + (p.z - q.z) ** 2) / (2 * p.z * q.z)
    assert math.cosh(d) == pytest.approx(cosh, rel=1e-10)


def test_mobius_examples():
    p = PointH3(3, 4, 5)
    assert apply_mobius(Mobius.identity(), p) == p
    t = Mobius.from_entries(1, 1, 0, 1)
    q = apply_mobius(t, PointH3(0, 0, 2))
    assert (q.x, q.y, q.z) == pytest.approx((1, 0, 2))
    inv = Mobius.from_entries(0, 1, 1, 0)
    assert apply_mobius(inv, 2) == pytest.approx(0.5)
    q = apply_mobius(inv, PointH3(0, 0, 1))
    assert (q.x, q.y, q.z) == pytest.approx((0, 0, 1), abs=1e-15)
    assert apply_mobius(inv, 0) is INF
    assert apply_mobius(inv, INF) == 0


def test_mobius_det_normalized():
    rng = np.random.default_rng(0)
    for _ in range(50):
        g = random_mobius(rng)
        assert abs(g.det() - 1) < 1e-12


def test_poincare_extension_matches_boundary_limit():
    # points descending to the boundary map to points descending to g(w)
    rng = np.random.default_rng(1)
    for _ in range(100):
        g = random_mobius(rng)
        w = complex(*rng.normal(size=2))
        q = apply_mobius(g, PointH3(w.real, w.imag, 1e-9))
        gw = apply_mobius(g, w)
        assert q.z > 0
        assert abs(q.w - gw) < 1e-6 * max(1, abs(gw))
        num = (g.a * w + g.b) / (g.c * w + g.d)
        assert abs(gw - num) <= 1e-12 * max(1, abs(num))


def test_isometry_invariance_random():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        g = random_mobius(rng)
        p = PointH3(*rng.normal(size=2), rng.uniform(0.2, 3))
        q = PointH3(*rng.normal(size=2), rng.uniform(0.2, 3))
        worst = max(worst, abs(dist(g(p), g(q)) - dist(p, q)))
    assert worst < 1e-9


def test_mobius_array_matches_scalar():
    rng = np.random.default_rng(3)
    g = random_mobius(rng)
    P = np.column_stack([rng.normal(size=20), rng.normal(size=20), rng.uniform(0.1, 2, 20)])
    Q = mobius_array(g, P)
    for p, q in zip(P, Q):
        r = apply_mobius(g, PointH3.from_array(p))
        assert np.allclose(q, r.as_array(), rtol=1e-12, atol=1e-12)


def test_elliptic_examples():
    R = elliptic_about_axis(GeodesicLine(0, INF), math.pi)
    q = R(PointH3(1, 0, 1))
    assert (q.x, q.y, q.z) == pytest.approx((-1, 0, 1), abs=1e-14)
    assert elliptic_about_axis(GeodesicLine(2 + 1j, -3), 0.0).close_to(Mobius.identity())
    axis = GeodesicLine(-1, 1)
    R = elliptic_about_axis(axis, math.pi / 2)
    p = PointH3(0, 0, 1.7)
    assert dist_to_line(R(p), axis) == pytest.approx(dist_to_line(p, axis), abs=1e-8)
    # the oracle: (0,0,1.7) lies at distance |ln 1.7| from the top of the unit circle
    assert dist_to_line(p, axis) == pytest.approx(abs(math.log(1.7)), abs=1e-12)
    with pytest.raises(GeometryError):
        elliptic_about_axis(GeodesicLine(1, 1 + 1e-16), 1.0)


def test_elliptic_fixes_axis_and_composes():
    rng = np.random.default_rng(4)
    for _ in range(200):
        a, b = complex(*rng.normal(size=2)), complex(*rng.normal(size=2))
        axis = GeodesicLine(a, b)
        th = rng.uniform(-3, 3)
        R = elliptic_about_axis(axis, th)
        assert ideal_close(R(a), a, 1e-9) and ideal_close(R(b), b, 1e-9)
        P = np.column_stack([rng.normal(size=5), rng.normal(size=5), rng.uniform(0.2, 2, 5)])
        back = mobius_array(elliptic_about_axis(axis, -th) @ R, P)
        assert np.abs(back - P).max() < 1e-10
        full = elliptic_about_axis(axis, 2 * math.pi - th) @ R
        assert full.close_to(Mobius.identity(), 1e-9)


def test_elliptic_angle_is_rotation_angle():
    # rotation about (0, INF) moves the ideal point 1 to e^{i th}
    th = 0.7
    R = elliptic_about_axis(GeodesicLine(0, INF), th)
    assert R(1) == pytest.approx(complex(math.cos(th), math.sin(th)))


def test_cross_ratio_anchor_and_infinity_rules():
    lam = -2.5 + 0.3j
    assert cross_ratio(0, 1, INF, lam) == pytest.approx((lam - 1) / lam)
    # the infinity rule is the limit of large finite values
    big = 1e9
    assert cross_ratio(0, 1, big, lam) == pytest.approx(cross_ratio(0, 1, INF, lam), rel=1e-8)
    assert cross_ratio(INF, 1, 2, lam) == pytest.approx(cross_ratio(1e9, 1, 2, lam), rel=1e-7)
    with pytest.raises(GeometryError):
        cross_ratio(1, 1, 1, 2)
    assert cross_ratio(1, 2, 2, 3) is INF


def test_cross_ratio_invariance_and_reality():
    rng = np.random.default_rng(5)
    for _ in range(500):
        pts = [complex(*rng.normal(size=2)) for _ in range(4)]
        g = random_mobius(rng)
        a = cross_ratio(*pts)
        b = cross_ratio(*[g(p) for p in pts])
        assert abs(a - b) < 1e-10 * max(1, abs(a))
        real = rng.normal(size=4)
        assert abs(cross_ratio(*real).imag) < 1e-12 * max(1, abs(cross_ratio(*real)))


def test_normalize_triple():
    assert normalize_triple(0, 1, INF).close_to(Mobius.identity())
    for tri in [(1, 2, 3), (INF, 0, 1), (2j, INF, -1), (1 + 1j, 3, INF)]:
        g = normalize_triple(*tri)
        assert abs(g(tri[0])) < 1e-12
        assert abs(g(tri[1]) - 1) < 1e-12
        assert g(tri[2]) is INF or abs(g(tri[2])) > 1e12
    with pytest.raises(GeometryError):
        normalize_triple(1, 1, 2)


def test_signed_plane_dist_examples():
    unit = GeodesicPlane("hemisphere", 0j, radius=1.0)
    assert signed_plane_dist(PointH3(0, 0, 2), unit) == pytest.approx(math.log(2), abs=1e-14)
    assert signed_plane_dist(PointH3(0.6, 0, 0.8), unit) == pytest.approx(0, abs=1e-14)
    vert = GeodesicPlane("vertical", 0j, direction=1j)
    # the line x = 0 with normal -i*i = 1 pointing to x > 0
    assert signed_plane_dist(PointH3(1, 5, 1), vert) == pytest.approx(math.asinh(1.0))


def test_signed_plane_dist_invariance():
    rng = np.random.default_rng(6)
    for _ in range(200):
        tri = [complex(*rng.normal(size=2)) for _ in range(3)]
        plane = plane_through(*tri)
        g = random_mobius(rng)
        image = plane_through(*[g(t) for t in tri])
        p = PointH3(*rng.normal(size=2), rng.uniform(0.2, 2))
        d0 = abs(signed_plane_dist(p, plane))
        d1 = abs(signed_plane_dist(g(p), image))
        assert d0 == pytest.approx(d1, abs=1e-8)


def _brute_hull_planes(pts):
    """Enumerate planes through triples with all other points on one side."""
    out = []
    n = len(pts)
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                pl = plane_through(pts[i], pts[j], pts[k])
                sides = {ideal_side(p, pl) for m, p in enumerate(pts) if m not in (i, j, k)}
                sides.discard(0)
                if len(sides) <= 1:
                    out.append(pl)
    return out


def test_hull_faces_examples():
    f = hull_faces([0, 1, INF])
    assert len(f) == 2 and f[0].kind == "vertical" and f[0].sign == -f[1].sign
    f = hull_faces([0, 1, INF, 1j])
    assert len(f) == 4
    assert len(_brute_hull_planes([0, 1, INF, 1j])) == 4
    f = hull_faces([0, 1, INF, -1])
    assert len(f) == 2
    with pytest.raises(GeometryError):
        hull_faces([0, 1, 1])


def test_hull_contains_vertices_and_gauge():
    rng = np.random.default_rng(7)
    for _ in range(30):
        pts = [complex(*rng.normal(size=2)) for _ in range(5)] + [INF]
        faces = hull_faces(pts)
        for face in faces:
            for p in pts:
                assert ideal_side(p, face, tol=1e-8) <= 0
        # a point on a geodesic between two vertices lies in the hull
        a, b = pts[0], pts[1]
        mid = PointH3((a.real + b.real) / 2, (a.imag + b.imag) / 2, abs(a - b) / 2)
        assert hull_gauge(mid, faces) < 1e-9
        # gauge never exceeds the distance to any hull point
        for _ in range(10):
            p = PointH3(*(3 * rng.normal(size=2)), rng.uniform(0.05, 5))
            assert hull_gauge(p, faces) <= dist(p, mid) + 1e-9


def test_gauge_single_face_and_monotone():
    faces = hull_faces([0, 1, INF, 1j])
    # below the hemisphere through 0, 1, i (the hull lies above it, since INF
    # is a vertex) the vertical faces are inactive
    pl = plane_through(0, 1, 1j)
    c, r = pl.center, pl.radius
    for t in (1.5, 3.0, 8.0):
        p = PointH3(c.real, c.imag, r / t)
        assert hull_gauge(p, faces) == pytest.approx(math.log(t), abs=1e-10)
    # moving down the vertical line, away from the hull, never decreases G
    vals = [hull_gauge(PointH3(0.3, -0.2, 5 * 0.7 ** k), faces) for k in range(30)]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
    with pytest.raises(GeometryError):
        hull_gauge(PointH3(0, 0, 1), [])


def test_ball_maps_consistent():
    rng = np.random.default_rng(8)
    P = np.column_stack([rng.normal(size=10), rng.normal(size=10), rng.uniform(0.1, 3, 10)])
    B = h3_to_ball(P)
    assert np.all((B ** 2).sum(axis=1) < 1)
    assert np.allclose(ball_to_h3(B), P)
    w = 0.3 - 1.2j
    assert np.allclose(h3_to_ball([w.real, w.imag, 1e-12]), to_sphere(w), atol=1e-9)


def test_log_exp_roundtrip():
    rng = np.random.default_rng(9)
    P = np.column_stack([rng.normal(size=50), rng.normal(size=50), rng.uniform(0.1, 3, 50)])
    Q = np.column_stack([rng.normal(size=50), rng.normal(size=50), rng.uniform(0.1, 3, 50)])
    V = log_map_array(P, Q)
    assert np.allclose(np.linalg.norm(V, axis=1), dist_array(P, Q))
    assert np.allclose(exp_map_array(P, V), Q, atol=1e-10)


def test_curvature_geodesic_horocycle_equidistant():
    t = np.linspace(-1, 1, 41)
    geo = np.column_stack([0 * t, 0 * t, np.exp(t)])
    assert polyline_curvature(geo).max() < 1e-10
    horo = np.column_stack([t, 0 * t, np.ones_like(t)])
    assert np.abs(polyline_curvature(horo) - 1).max() < 1e-3
    for v0 in (0.2, 0.7, 1.5):
        u = np.linspace(-1, 1, 81)
        eq = np.column_stack([np.exp(u) * np.tanh(v0), 0 * u, np.exp(u) / np.cosh(v0)])
        assert np.abs(polyline_curvature(eq) - np.tanh(v0)).max() < 1e-3
    with pytest.raises(GeometryError):
        polyline_curvature(np.array([[0, 0, 1], [0, 0, 1], [0, 0, 2.0]]))


def test_curvature_second_order():
    errs = []
    for n in (21, 41, 81):
        t = np.linspace(-1, 1, n)
        horo = np.column_stack([t, 0 * t, np.ones_like(t)])
        errs.append(np.abs(polyline_curvature(horo) - 1).max())
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_fit_geodesic():
    t = np.linspace(-2, 2, 30)
    line, res = fit_geodesic(np.column_stack([0 * t + 0.5, 0 * t, np.exp(t)]))
    assert res < 1e-8
    line, res = fit_geodesic([PointH3(0, 0, 1), PointH3(1, 1, 2)])
    assert res < 1e-12
    with pytest.raises(GeometryError):
        fit_geodesic([PointH3(0, 0, 1), PointH3(0, 0, 1)])


def test_fit_geodesic_tube_oracle():
    # perturb a geodesic by at most eps in the normal direction
    rng = np.random.default_rng(10)
    u = np.linspace(-3, 3, 200)
    for eps in (1e-3, 1e-2, 0.1):
        v = eps * np.sin(3 * u) * (np.abs(u) < 2.9)
        phi = rng.uniform(0, 2 * np.pi)
        pts = np.column_stack([np.exp(u) * np.tanh(v) * np.cos(phi), np.exp(u) * np.tanh(v) * np.sin(phi),
                               np.exp(u) / np.cosh(v)])
        _, res = fit_geodesic(pts)
        assert res <= eps + 1e-9


def test_geodesic_through_contains_points():
    rng = np.random.default_rng(11)
    for _ in range(50):
        p = PointH3(*rng.normal(size=2), rng.uniform(0.2, 2))
        q = PointH3(*rng.normal(size=2), rng.uniform(0.2, 2))
        line = geodesic_through(p, q)
        assert dist_to_line(p, line) < 1e-8 and dist_to_line(q, line) < 1e-8


@settings(max_examples=60, deadline=None)
@given(st.floats(0.02, 0.3), st.floats(0.5, 3.0), st.floats(0, 6.28))
def test_canoeing_tubes(amp, k, phase):
    """Curves with curvature below eps < 1 stay within C*eps of their geodesic."""
    u = np.linspace(-4, 4, 400)
    v = amp * np.sin(k * u + phase)
    pts = np.column_stack([np.exp(u) * np.tanh(v), 0 * u, np.exp(u) / np.cosh(v)])
    kmax = polyline_curvature(pts).max()
    _, res = fit_geodesic(pts)
    if kmax < 1:
        assert res <= 2.0 * kmax
