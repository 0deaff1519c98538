"""Meshes, Jacobians, Piola metric factors, cross-panel continuity."""

import numpy as np
import pytest

from meseuler.geometry import cubed_sphere_mesh, metric_factor, plane_mesh


def test_plane_affine_jacobian():
    m = plane_mesh(2, 4, 2, 3, 300.0, Lx=200.0, Ly=400.0)
    J, det = m.jacobian(0, 0.3, -0.2, 0.1)
    assert np.allclose(np.diag(J), [50.0, 50.0, 50.0])
    assert np.allclose(J - np.diag(np.diag(J)), 0.0)
    assert det == pytest.approx(50.0**3)


def test_vertical_map_hits_interfaces():
    m = cubed_sphere_mesh(2, 2, 4, 8000.0)
    for layer in range(4):
        _, _, z0 = m.map_point(0, 0.0, 0.0, -1.0, layer=layer)
        _, _, z1 = m.map_point(0, 0.0, 0.0, 1.0, layer=layer)
        assert z0 == pytest.approx(m.z_interfaces[layer])
        assert z1 == pytest.approx(m.z_interfaces[layer + 1])


def test_panel_center_maps_to_lon_lat_origin():
    m = cubed_sphere_mesh(2, 2, 2, 1e4)
    # element touching the center of the first (equatorial) panel
    lon, lat, _ = m.map_point(0, 1.0, 1.0, -1.0)
    assert lon == pytest.approx(0.0, abs=1e-12)
    assert lat == pytest.approx(0.0, abs=1e-12)


def test_sphere_area_by_quadrature():
    m = cubed_sphere_mesh(6, 3, 2, 1e4)
    tabs = m.horizontal_tabs(4)
    area = float((tabs["A"] * tabs["W"]).sum())
    exact = 4 * np.pi * m.radius**2
    assert abs(area - exact) / exact < 1e-8


def test_jacobian_positive_everywhere():
    m = cubed_sphere_mesh(3, 3, 2, 1e4)
    tabs = m.horizontal_tabs(4)
    assert np.all(tabs["A"] > 0)


def test_jacobian_finite_difference():
    m = cubed_sphere_mesh(4, 3, 2, 1e4)
    rng = np.random.default_rng(7)
    h = 1e-6
    for _ in range(100):
        e = int(rng.integers(0, m.nelem))
        xi, eta = rng.uniform(-0.9, 0.9, 2)
        J, det = m.jacobian(e, xi, eta, 0.0)
        assert det > 0
        p0, *_ = m._chart_point(e, np.array([xi - h]), np.array([eta]))
        p1, *_ = m._chart_point(e, np.array([xi + h]), np.array([eta]))
        t1_fd = (p1 - p0)[0] / (2 * h)
        _, t1, _, _ = m._chart_point(e, np.array([xi]), np.array([eta]))
        rel = np.linalg.norm(t1_fd - t1[0]) / np.linalg.norm(t1[0])
        assert rel < 1e-6


def test_metric_factors_identity_map():
    # 2x2x2 plane element: J = I, every factor is 1 or the identity
    m = plane_mesh(1, 1, 1, 1, 2.0, Lx=2.0, Ly=2.0)
    for tag in ("Wpar", "Upar"):
        assert np.allclose(metric_factor(m, tag, 0, 0.0, 0.0), np.eye(2), atol=1e-14)
    for tag in ("Wperp", "Uperp", "Q", "UperpQ"):
        assert metric_factor(m, tag, 0, 0.0, 0.0) == pytest.approx(1.0)


def test_wperp_factor_scaling():
    m = plane_mesh(1, 1, 1, 1, 50.0, Lx=2.0, Ly=2.0)  # dz = 50, z_zeta = 25
    assert metric_factor(m, "Wperp", 0, 0.0, 0.0) == pytest.approx(4.0 / 50.0**2)


def test_q_factor_is_uperp_times_wperp():
    m = cubed_sphere_mesh(2, 2, 3, 9e3)
    for pt in ((0.3, -0.5), (-0.8, 0.1)):
        q = metric_factor(m, "Q", 1, *pt, layer=1)
        up = metric_factor(m, "Uperp", 1, *pt, layer=1)
        wp = metric_factor(m, "Wperp", 1, *pt, layer=1)
        assert q == pytest.approx(up * wp, rel=1e-12)


def test_mixed_uperp_q_factor():
    m = cubed_sphere_mesh(2, 2, 3, 9e3)
    J, det = m.jacobian(2, 0.2, 0.4, 0.0, layer=2)
    zz = J[2, 2]
    deth = np.linalg.det(J[:2, :2])
    got = metric_factor(m, "UperpQ", 2, 0.2, 0.4, layer=2)
    assert got == pytest.approx((zz / det) * (1.0 / det), rel=1e-12)
    assert got == pytest.approx(1.0 / (zz * deth**2), rel=1e-12)


def test_piola_duality():
    # Hcurl and Hdiv transforms of random reference vectors: the physical dot
    # product equals the reference dot product divided by the horizontal det
    m = cubed_sphere_mesh(3, 3, 2, 1e4)
    rng = np.random.default_rng(5)
    for _ in range(50):
        e = int(rng.integers(0, m.nelem))
        xi, eta = rng.uniform(-0.95, 0.95, 2)
        J, det = m.jacobian(e, xi, eta, 0.0)
        Jh = J[:2, :2]
        a, b = rng.standard_normal(2), rng.standard_normal(2)
        hdiv = Jh @ a / np.linalg.det(Jh)
        hcurl = np.linalg.solve(Jh.T, b)
        assert hdiv @ hcurl == pytest.approx(a @ b / np.linalg.det(Jh), rel=1e-12)


def test_cross_panel_point_continuity():
    # shared edge points agree between the two adjacent panels' charts
    m = cubed_sphere_mesh(2, 2, 2, 1e4)
    topo = m.topo
    seen = {}
    hits = 0
    for e in range(m.nelem):
        for s, (eid, rev) in enumerate(zip(topo.elem_edges[e], topo.elem_rev[e])):
            ts = np.linspace(-1, 1, 7)
            if s == 0:
                pts = [(t, -1.0) for t in ts]
            elif s == 1:
                pts = [(1.0, t) for t in ts]
            elif s == 2:
                pts = [(t, 1.0) for t in ts]
            else:
                pts = [(-1.0, t) for t in ts]
            if rev:
                pts = pts[::-1]
            coords = np.array([m._chart_point(e, np.array([a]), np.array([b]))[0][0]
                               for a, b in pts])
            if eid in seen:
                assert np.abs(coords - seen[eid]).max() < 1e-6 * m.radius
                hits += 1
            else:
                seen[eid] = coords
    assert hits > 0


def test_mesh_validation():
    with pytest.raises(ValueError):
        cubed_sphere_mesh(2, 2, 2, 1e4, reduction=0.5)
    with pytest.raises(ValueError):
        plane_mesh(2, 2, 2, 2, 1e3, z_interfaces=[0.0, 500.0, 400.0])
    m = cubed_sphere_mesh(2, 2, 2, 1e4)
    with pytest.raises(IndexError):
        m.map_point(99, 0, 0, 0)
    with pytest.raises(ValueError):
        m.map_point(0, 2.0, 0, 0)


def test_metric_factor_unknown_tag():
    m = plane_mesh(1, 1, 1, 1, 2.0)
    with pytest.raises(KeyError):
        metric_factor(m, "bogus", 0, 0.0, 0.0)
