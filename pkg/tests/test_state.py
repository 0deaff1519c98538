"""Thermodynamics and diagnostic fields: EOS, theta, gradients, vorticity, fluxes."""

import numpy as np
import pytest

from meseuler.basis import gll_nodes
from meseuler.geometry import cubed_sphere_mesh, plane_mesh
from meseuler.state import Constants, Model, ThermoDomainError


def uniform_q_coeffs(model, value):
    """Coefficients of a spatially uniform Q field (affine plane mesh only)."""
    p = model.mesh.p
    dx = np.diff(gll_nodes(p))
    cone = np.einsum("a,b->ba", dx, dx).reshape(-1)
    A0 = model.sp.A[..., :1]
    out = np.empty(model.shape_q)
    for l in range(model.L):
        out[:, l, :] = value * 2.0 * model.sp.zz[l] * A0 * cone[None, :]
    return out


@pytest.fixture(scope="module")
def plane_model():
    mesh = plane_mesh(3, 3, 3, 4, 1e4, Lx=1e5, Ly=1e5)
    return Model(mesh)


def test_constants_cv_identity():
    c = Constants(R=287.0, cp=1004.5)
    assert c.cv == 1004.5 - 287.0


def test_exner_reference_pressure(plane_model):
    m = plane_model
    c = m.const
    Theta = uniform_q_coeffs(m, c.p0 / c.R)  # R Theta = p0 pointwise
    Pi, _ = m.exner(Theta)
    Pi_qp = m.q_phys_qp(Pi)
    assert np.allclose(Pi_qp, c.cp, rtol=1e-12)


def test_exner_scalar_formula_oracle(plane_model):
    m = plane_model
    c = m.const
    val = 1.2 * 300.0
    Pi, _ = m.exner(uniform_q_coeffs(m, val))
    expect = c.cp * (c.R * val / c.p0) ** (c.R / c.cv)  # one-line oracle
    assert np.allclose(m.q_phys_qp(Pi), expect, rtol=1e-12)


def test_exner_pressure_roundtrip(plane_model):
    # algebraic inverse: R Theta = p0 (Pi/cp)^{cv/R} recovers the input
    m = plane_model
    c = m.const
    val = 0.9 * 280.0
    Pi, _ = m.exner(uniform_q_coeffs(m, val))
    back = (c.p0 / c.R) * (m.q_phys_qp(Pi) / c.cp) ** (c.cv / c.R)
    assert np.allclose(back, val, rtol=1e-10)


def test_exner_domain_error(plane_model):
    with pytest.raises(ThermoDomainError):
        plane_model.exner(uniform_q_coeffs(plane_model, -1.0))


def test_theta_unit_density(plane_model):
    m = plane_model
    rho = uniform_q_coeffs(m, 1.0)
    Theta = uniform_q_coeffs(m, 305.0)
    th = m.theta_diag(rho, Theta)
    th_qp = m.cols.face_ref_ifaces(th) / m.sp.A[:, None, :]
    assert np.allclose(th_qp, 305.0, rtol=1e-12)


def test_theta_ratio(plane_model):
    m = plane_model
    th = m.theta_diag(uniform_q_coeffs(m, 2.0), uniform_q_coeffs(m, 2.0 * 123.0))
    th_qp = m.cols.face_ref_ifaces(th) / m.sp.A[:, None, :]
    assert np.allclose(th_qp, 123.0, rtol=1e-12)


def test_theta_weak_residual(plane_model):
    # <Theta - rho theta, sigma> = 0 for every U-perp test function
    m = plane_model
    rng = np.random.default_rng(0)
    rho = uniform_q_coeffs(m, 1.0) * rng.uniform(0.8, 1.2, m.shape_q)
    Theta = uniform_q_coeffs(m, 300.0) * rng.uniform(0.9, 1.1, m.shape_q)
    th = m.theta_diag(rho, Theta)
    res = m.cols.l_apply(Theta) - np.matmul(
        m.cols.n_blocks(rho), th[..., None])[..., 0]
    scale = np.abs(m.cols.l_apply(Theta)).max()
    assert np.abs(res).max() < 1e-11 * scale


def test_pressure_gradient_of_constant(plane_model):
    m = plane_model
    _, PiM = m.exner(uniform_q_coeffs(m, 350.0))
    P_par = m.grad_pi_par(PiM)
    P_perp = m.grad_pi_perp(PiM)
    for l in range(m.L):
        assert np.abs(m.sp.upar_phys(P_par[l], l)).max() < 1e-10
    assert np.abs(P_perp).max() < 1e-10 * np.abs(PiM).max()


def test_pressure_gradient_linear_slope():
    # sawtooth-free interior check of a linear-in-x Exner field on the plane
    mesh = plane_mesh(8, 3, 3, 2, 1e3, Lx=8e5, Ly=3e5)
    m = Model(mesh)
    slope = 2.5e-6
    x_qp = m.sp.geo["POS"][..., 0]
    mom = np.einsum("q,eq,qm->em", m.sp.W, slope * x_qp, m.sp.Eq2)
    PiM = np.repeat(mom[:, None, :], m.L, axis=1)
    P = m.grad_pi_par(PiM)
    vals = m.sp.upar_phys(P[0], 0)
    interior = (x_qp > 1.5e5) & (x_qp < 6.5e5)
    got = vals[..., 0][interior]
    # weak gradient of s carries the sign convention P = -grad s
    assert np.allclose(got, -slope, atol=1e-9 * max(1.0, abs(slope)) + 5e-12)
    assert np.abs(vals[..., 1][interior]).max() < 1e-12


def test_pressure_gradient_form_equivalence(plane_model):
    # theta grad Pi equals (1/rho) grad p for consistent smooth fields
    c = plane_model.const
    rng = np.random.default_rng(1)
    for _ in range(20):
        rho = rng.uniform(0.4, 1.3)
        theta = rng.uniform(250.0, 350.0)
        p = c.p0 * (c.R * rho * theta / c.p0) ** (c.cp / c.cv)
        Pi = c.cp * (p / c.p0) ** (c.R / c.cp)
        dtheta = 1e-6 * theta
        rt2 = rho * (theta + dtheta)
        p2 = c.p0 * (c.R * rt2 / c.p0) ** (c.cp / c.cv)
        Pi2 = c.cp * (p2 / c.p0) ** (c.R / c.cp)
        lhs = 0.5 * (theta + theta + dtheta) * (Pi2 - Pi)
        rhs = (p2 - p) / rho
        assert lhs == pytest.approx(rhs, rel=1e-8)


def test_vorticity_uniform_flow_is_zero(plane_model):
    m = plane_model
    sp = m.sp
    uvals = np.broadcast_to([3.0, -2.0, 0.0], sp.geo["POS"].shape).copy()
    rhs = sp.scatter_flux(np.einsum("eqd,eqmd,q->em", uvals, sp.Bvec, sp.W))
    uhat = 2 * sp.zz[0] * sp.solver_U.solve(rhs)
    u_par = np.repeat(uhat[None, :], m.L, axis=0)
    om, _ = m.vorticity(u_par)
    om_qp = m.sp.wperp_phys(om[0], 0)
    assert np.abs(om_qp).max() < 1e-10


def test_vorticity_solid_body_rotation():
    # 6x6 elements per panel, p=3: analytic curl 2 Omega sin(phi) to 1e-6 1/s
    mesh = cubed_sphere_mesh(6, 3, 2, 1e4)
    m = Model(mesh, coriolis=False)
    sp = m.sp
    Om = 7.292e-5
    uvals = Om * np.cross([0.0, 0.0, 1.0], sp.geo["POS"])
    rhs = sp.scatter_flux(np.einsum("eqd,eqmd,q->em", uvals, sp.Bvec, sp.W))
    uhat = 2 * sp.zz[0] * sp.solver_U.solve(rhs)
    u_par = np.repeat(uhat[None, :], m.L, axis=0)
    om, _ = m.vorticity(u_par)
    om_qp = sp.wperp_phys(om[0], 0)
    expect = 2 * Om * sp.UP[:, :, 2]  # 2 Omega sin(phi)
    assert np.abs(om_qp - expect).max() < 1e-6


def test_fluxes_identity_and_zero(plane_model):
    m = plane_model
    st = m.zero_state()
    st.rho = uniform_q_coeffs(m, 1.0)
    st.Theta = uniform_q_coeffs(m, 300.0)
    rng = np.random.default_rng(2)
    st.u_par = rng.standard_normal((m.L, m.dofs.n_ed))
    st.u_perp = rng.standard_normal((m.mesh.nelem, m.L - 1, m.p2))
    d = m.diagnostics(st)
    # rho = 1: U = u to solver tolerance
    assert np.abs(d.U_par - st.u_par).max() < 1e-9 * np.abs(st.u_par).max()
    assert np.abs(d.U_perp - st.u_perp).max() < 1e-9 * np.abs(st.u_perp).max()
    # theta uniform: F = theta U
    assert np.abs(d.F_par - 300.0 * d.U_par).max() < 1e-8 * np.abs(d.F_par).max()
    st0 = m.zero_state()
    st0.rho, st0.Theta = st.rho, st.Theta
    d0 = m.diagnostics(st0)
    for f in (d0.U_par, d0.F_par, d0.U_perp, d0.F_perp):
        assert np.abs(f).max() == 0.0


def test_diagnostic_weak_residuals(plane_model):
    # each flux satisfies its defining weak equation against all test functions
    m = plane_model
    rng = np.random.default_rng(3)
    st = m.zero_state()
    st.rho = uniform_q_coeffs(m, 1.0) * rng.uniform(0.9, 1.1, m.shape_q)
    st.Theta = uniform_q_coeffs(m, 300.0) * rng.uniform(0.95, 1.05, m.shape_q)
    st.u_par = rng.standard_normal((m.L, m.dofs.n_ed))
    d = m.diagnostics(st)
    rho_qp = np.moveaxis(m.q_phys_qp(st.rho), 1, 0)
    # N u = M U in the unscaled per-layer form (the shared z factor cancels)
    lhs = m.sp.apply_weighted_edge_layers(st.u_par, rho_qp)
    rhs = (m.sp.M2dU @ d.U_par.T).T
    assert np.abs(lhs - rhs).max() < 1e-10 * np.abs(lhs).max()
