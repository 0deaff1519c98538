"""Horizontal tendencies, SSP-RK3/RK2 stepping, and biharmonic dissipation.

The horizontal stage evolves (u_par, rho, Theta) with u_perp frozen; flux-form
transport is applied in strong form (incidence acting on coefficients), so
each stage conserves the element sums of rho and Theta to round-off.
"""

from dataclasses import dataclass

import numpy as np

__all__ = ["HorizontalTendency", "horizontal_tendency", "rk3_step", "rk2_step",
           "laplacian_upar", "laplacian_q", "gll_spacing", "default_viscosity"]


class DivergenceError(FloatingPointError):
    pass


@dataclass
class HorizontalTendency:
    du_par: np.ndarray   # (L, n_ed)
    drho: np.ndarray     # (nelem, L, p2)
    dTheta: np.ndarray   # (nelem, L, p2)


def gll_spacing(model):
    """Average spacing between GLL nodes in meters."""
    area = np.einsum("q,eq->e", model.sp.W, model.sp.A)
    return float(np.mean(np.sqrt(area)) / model.mesh.p)


def default_viscosity(model):
    """0.072 dx^3.2, doubled under the nonhydrostatic flag."""
    dx = gll_spacing(model)
    c = 0.144 if model.nonhydrostatic else 0.072
    return c * dx**3.2


def laplacian_upar(model, u):
    """Weak vector Laplacian (grad div - curl curl) on U-par, all layers."""
    sp = model.sp
    d = (sp.Ddiv @ u.T).T                            # (L, n_fq) strong divergence
    dloc = d.reshape(u.shape[0], sp.nelem, -1)
    Hd = np.einsum("eab,leb->lea", sp.H, dloc).reshape(u.shape[0], -1)
    g1 = sp.solver_U.solve(sp.DdivT @ Hd.T).T        # weak gradient of divergence
    om = sp.solver_W.solve(sp.DrotT @ (sp.M2dU @ u.T)).T
    c1 = (sp.Drot @ om.T).T
    return -(g1 + c1)


def laplacian_q(model, s):
    """Weak scalar Laplacian on Q fields: (nelem, L, p2) -> same shape."""
    sp = model.sp
    L = s.shape[1]
    flat = np.moveaxis(s, 1, 0).reshape(L, -1)       # (L, n_fq)
    Hs = np.einsum("eab,leb->lea", sp.H,
                   flat.reshape(L, sp.nelem, -1)).reshape(L, -1)
    grad = sp.solver_U.solve(sp.DdivT @ Hs.T).T      # (L, n_ed), equals -grad s
    lap = -(sp.Ddiv @ grad.T).T                      # (L, n_fq)
    return np.moveaxis(lap.reshape(L, sp.nelem, -1), 0, 1)


def horizontal_tendency(model, state, nu_u=0.0, nu_theta=0.0):
    """Tendencies of the per-layer horizontal system at the given state."""
    sp = model.sp
    L = model.L
    diag = model.diagnostics(state, vertical=False)
    th_qp = np.moveaxis(model.theta_bar_qp(diag.theta), 1, 0)   # (L, ne, nq)
    wv = sp.W / sp.A

    uvec = sp.upar_vec_layers(state.u_par)                      # (L, ne, nq, 3)
    cxu = np.cross(np.broadcast_to(sp.UP, uvec.shape), uvec)
    rot = sp.project_edge_layers(cxu * (wv * diag.vort_qp)[..., None])
    Pvec = sp.upar_vec_layers(diag.P_par)
    prs = sp.project_edge_layers(Pvec * (wv * th_qp)[..., None])
    rhs = (sp.scatter_flux(prs - rot) * (0.5 / sp.zz)[:, None]).T
    keM = sp.kinetic_moments_layers(state.u_par)                # (L, ne, p2)
    rhs += sp.DdivT @ keM.reshape(L, -1).T
    if model.nonhydrostatic and L > 1:
        # vertical advection of horizontal wind: -<w du/dz, eps> per layer
        shear = model.shear_qp(state.u_par)                   # (L-1, ne, nq, 3)
        wful = model.cols.full_from_interior(state.u_perp)
        wphys = np.einsum("qm,ekm->ekq", sp.Eq2, wful) / sp.A[:, None, :]
        for l in range(L):
            acc = np.zeros((sp.nelem, sp.nloc_ed))
            for k in (l, l + 1):  # layer's bottom/top interfaces
                if 1 <= k <= L - 1:
                    integ = wphys[:, k, :, None] * shear[k - 1]
                    acc += 0.5 * np.einsum("eqad,eqd,q->ea", sp.Bvec, integ, sp.W)
            rhs[:, l] -= sp.scatter_flux(acc)
    if nu_u > 0.0:
        lap2 = laplacian_upar(model, laplacian_upar(model, state.u_par))
        visc = -nu_u * lap2                                    # (L, n_ed) tendency
    else:
        visc = 0.0
    du = (sp.solver_U.solve(rhs) * (2.0 * sp.zz)[None, :]).T
    du = du + visc

    drho = -(sp.Ddiv @ diag.U_par.T).T
    dTheta = -(sp.Ddiv @ diag.F_par.T).T
    drho = np.moveaxis(drho.reshape(L, sp.nelem, -1), 0, 1)
    dTheta = np.moveaxis(dTheta.reshape(L, sp.nelem, -1), 0, 1)
    if nu_theta > 0.0:
        dTheta = dTheta - nu_theta * laplacian_q(model, laplacian_q(model, state.Theta))

    for name, arr in (("u_par", du), ("rho", drho), ("Theta", dTheta)):
        if not np.all(np.isfinite(arr)):
            bad = np.argwhere(~np.isfinite(arr))
            raise DivergenceError(f"non-finite horizontal {name} tendency at {bad[0]}")
    return HorizontalTendency(du, drho, dTheta)


def _axpy(state, tend, a):
    out = state.copy()
    out.u_par = state.u_par + a * tend.du_par
    out.rho = state.rho + a * tend.drho
    out.Theta = state.Theta + a * tend.dTheta
    return out


def _blend(c0, s0, c1, s1, dt, tend):
    out = s0.copy()
    out.u_par = c0 * s0.u_par + c1 * s1.u_par + dt * tend.du_par
    out.rho = c0 * s0.rho + c1 * s1.rho + dt * tend.drho
    out.Theta = c0 * s0.Theta + c1 * s1.Theta + dt * tend.dTheta
    return out


def rk3_step(model, state, dt, nu_u=0.0, nu_theta=0.0):
    """Three-stage stiffly stable scheme, coefficients (1; 3/4,1/4,1/4; 1/3,2/3,2/3)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    tend = lambda s: horizontal_tendency(model, s, nu_u, nu_theta)
    b1 = _axpy(state, tend(state), dt)
    b2 = _blend(0.75, state, 0.25, b1, 0.25 * dt, tend(b1))
    out = _blend(1.0 / 3.0, state, 2.0 / 3.0, b2, 2.0 * dt / 3.0, tend(b2))
    out.t = state.t + dt
    return out


def rk2_step(model, state, dt, nu_u=0.0, nu_theta=0.0):
    """Two-stage scheme without linear extrapolation (increment-only form)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    t0 = horizontal_tendency(model, state, nu_u, nu_theta)
    b1 = _axpy(state, t0, dt)
    t1 = horizontal_tendency(model, b1, nu_u, nu_theta)
    out = state.copy()
    out.u_par = state.u_par + 0.5 * dt * (t0.du_par + t1.du_par)
    out.rho = state.rho + 0.5 * dt * (t0.drho + t1.drho)
    out.Theta = state.Theta + 0.5 * dt * (t0.dTheta + t1.dTheta)
    out.t = state.t + dt
    return out


def dissipation_step(model, state, dt, nu_u, nu_theta):
    """Forward-Euler biharmonic substep (the operator-split dissipation path)."""
    out = state.copy()
    if nu_u > 0.0:
        out.u_par = state.u_par - dt * nu_u * laplacian_upar(
            model, laplacian_upar(model, state.u_par))
    if nu_theta > 0.0:
        out.Theta = state.Theta - dt * nu_theta * laplacian_q(
            model, laplacian_q(model, state.Theta))
    return out
