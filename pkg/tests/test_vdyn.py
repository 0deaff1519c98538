"""Vertical dynamics: half steps, Picard solve, Rayleigh friction, balance init."""

import numpy as np
import pytest
from conftest import balanced_state, isothermal, wmax_phys

from meseuler import vdyn
from meseuler.geometry import plane_mesh
from meseuler.state import Model


def test_explicit_zero_dt_identity(plane_model_s, plane_balanced):
    out = vdyn.vertical_explicit_half_step(plane_model_s, plane_balanced, 0.0)
    assert np.array_equal(out.rho, plane_balanced.rho)
    assert np.array_equal(out.u_perp, plane_balanced.u_perp)


def test_explicit_balanced_column_stays(plane_model_s, plane_balanced):
    out = vdyn.vertical_explicit_half_step(plane_model_s, plane_balanced, 60.0)
    assert wmax_phys(plane_model_s, out) < 1e-10


def test_explicit_no_gravity_uniform_pi(plane_model_s):
    # g = 0 and uniform thermodynamics: zero tendency
    mesh = plane_model_s.mesh
    from meseuler.state import Constants
    m0 = Model(mesh, Constants(g=0.0), coriolis=False)
    st = m0.zero_state()
    from test_state import uniform_q_coeffs
    st.rho = uniform_q_coeffs(m0, 1.0)
    st.Theta = uniform_q_coeffs(m0, 300.0)
    out = vdyn.vertical_explicit_half_step(m0, st, 30.0)
    assert wmax_phys(m0, out) < 1e-11


def test_balance_residual_postcondition(plane_model_s, plane_balanced):
    res = vdyn.vertical_balance_residual(plane_model_s, plane_balanced.rho,
                                         plane_balanced.Theta)
    gz = plane_model_s.const.g * plane_model_s.cols.grad_zT(plane_model_s.cols.z_moments())
    assert np.abs(res).max() < 1e-12 * np.abs(gz).max()


def test_hydro_init_monotone_exner(plane_model_s, plane_balanced):
    _, PiM = plane_model_s.exner(plane_balanced.Theta)
    prof = PiM.mean(axis=(0, 2))
    assert np.all(np.diff(prof) < 0)


def test_implicit_balanced_fixed_point(plane_model_s, plane_balanced):
    out, pr = vdyn.vertical_implicit_half_step(plane_model_s, plane_balanced, 60.0)
    assert pr.iterations <= 2
    assert wmax_phys(plane_model_s, out) < 1e-10
    assert np.abs(out.rho - plane_balanced.rho).max() < 1e-12 * np.abs(out.rho).max()
    assert np.abs(out.Theta - plane_balanced.Theta).max() < 1e-12 * np.abs(out.Theta).max()


def test_implicit_small_dt_returns_input(plane_model_s, plane_balanced):
    # the map approaches the identity as dt -> 0 (operator reduces to the mass)
    st = plane_balanced.copy()
    rng = np.random.default_rng(0)
    st.u_perp = 1e-3 * rng.standard_normal(st.u_perp.shape) * np.abs(st.rho).max()
    out, _ = vdyn.vertical_implicit_half_step(plane_model_s, st, 1e-9, tol=1e-13)
    assert np.abs(out.u_perp - st.u_perp).max() < 5e-12 * np.abs(st.u_perp).max()
    assert np.abs(out.rho - st.rho).max() < 5e-12 * np.abs(st.rho).max()


def test_log_exner_update_zero_flux(plane_model_s, plane_balanced):
    # u_perp = 0: the implicit iteration leaves Pi at its input value
    m = plane_model_s
    Pi2, _ = m.exner(plane_balanced.Theta)
    out, _ = vdyn.vertical_implicit_half_step(m, plane_balanced, 30.0)
    Pi3, _ = m.exner(out.Theta)
    assert np.abs(Pi3 - Pi2).max() < 1e-11 * np.abs(Pi2).max()


def test_log_exner_linearity(plane_model_s, plane_balanced):
    # doubling the vertical flux doubles the Exner increment
    m = plane_model_s
    co = m.cols
    c = m.const
    Pi2, _ = m.exner(plane_balanced.Theta)
    MqTh = co.mq_w_blocks(plane_balanced.Theta)
    MqPi = co.mq_w_blocks(Pi2)
    Kpp = np.linalg.solve(MqTh, MqPi)
    rng = np.random.default_rng(1)
    y = rng.standard_normal((m.mesh.nelem, m.L - 1, m.p2))
    dt = 40.0
    c3 = dt * c.R / (2.0 * c.cv)
    d1 = -c3 * np.matmul(Kpp, co.div_z(y)[..., None])[..., 0]
    d2 = -c3 * np.matmul(Kpp, co.div_z(2 * y)[..., None])[..., 0]
    assert np.abs(d2 - 2 * d1).max() < 1e-12 * np.abs(d2).max()


def test_rayleigh_friction_blocks(plane_model_s, plane_balanced):
    m = plane_model_s
    fr = vdyn.rayleigh_blocks(m, 0.2)
    assert fr.shape == (m.mesh.nelem, m.p2, m.p2)
    # zero coefficient: explicit result unchanged
    a = vdyn.vertical_explicit_half_step(m, plane_balanced, 30.0, rayleigh=0.0)
    b = vdyn.vertical_explicit_half_step(m, plane_balanced, 30.0, rayleigh=0.2)
    assert np.abs(a.u_perp - b.u_perp).max() < 1e-14  # balanced: u stays ~0
    # uniform top-layer velocity: friction opposes it
    st = plane_balanced.copy()
    st.u_perp = np.zeros_like(st.u_perp)
    st.u_perp[:, -1, :] = m.sp.A[:, :1].mean() * 1.0
    out0 = vdyn.vertical_explicit_half_step(m, st, 10.0, rayleigh=0.0)
    out1 = vdyn.vertical_explicit_half_step(m, st, 10.0, rayleigh=0.2)
    dd = out1.u_perp[:, -1] - out0.u_perp[:, -1]
    assert np.all((dd * st.u_perp[:, -1]).sum(axis=-1) < 0)
    # velocity below the top layer: no contribution
    st2 = plane_balanced.copy()
    st2.u_perp = np.zeros_like(st2.u_perp)
    st2.u_perp[:, 0, :] = 1.0
    o0 = vdyn.vertical_explicit_half_step(m, st2, 10.0, rayleigh=0.0)
    o1 = vdyn.vertical_explicit_half_step(m, st2, 10.0, rayleigh=0.2)
    assert np.abs(o0.u_perp - o1.u_perp).max() == 0.0


def test_picard_nonconvergence_raises(plane_model_s, plane_balanced):
    st = plane_balanced.copy()
    st.Theta = st.Theta * (1 + 0.05 * np.sin(np.arange(st.Theta.size)).reshape(st.Theta.shape))
    with pytest.raises(vdyn.PicardError) as err:
        vdyn.vertical_implicit_half_step(plane_model_s, st, 120.0, tol=1e-14, max_iter=2)
    assert len(err.value.trace) == 2


def test_column_decoupling(plane_model_s, plane_balanced):
    # perturbing one column leaves every other column's implicit solve unchanged
    m = plane_model_s
    base, _ = vdyn.vertical_implicit_half_step(m, plane_balanced, 60.0)
    st = plane_balanced.copy()
    st.Theta = st.Theta.copy()
    st.Theta[0] *= 1.01
    pert, _ = vdyn.vertical_implicit_half_step(m, st, 60.0)
    assert np.abs(pert.u_perp[1:] - base.u_perp[1:]).max() == 0.0
    assert np.abs(pert.rho[1:] - base.rho[1:]).max() == 0.0


def test_dirichlet_rows_identically_zero(plane_model_s, plane_balanced):
    # boundary interfaces are eliminated: any physical w at z=0, z_top is zero
    m = plane_model_s
    st = plane_balanced.copy()
    st.Theta = st.Theta * 1.002
    out, _ = vdyn.vertical_implicit_half_step(m, st, 60.0)
    wful = m.cols.full_from_interior(out.u_perp)
    assert np.abs(wful[:, 0]).max() == 0.0
    assert np.abs(wful[:, -1]).max() == 0.0


def test_hydrostatic_init_feeds_explicit(plane_model_s, plane_balanced):
    out = vdyn.vertical_explicit_half_step(plane_model_s, plane_balanced, 2.0)
    assert wmax_phys(plane_model_s, out) < 1e-10
