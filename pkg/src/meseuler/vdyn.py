"""Vertical dynamics: explicit carryover half-step, implicit Picard half-step
with the log-Exner linearization, Rayleigh friction, and the discrete
hydrostatic balance initializer.

All column systems are block-tridiagonal over the interior interfaces and are
factored and solved for every column of the mesh simultaneously.
"""

from dataclasses import dataclass

import numpy as np

__all__ = ["vertical_explicit_half_step", "vertical_implicit_half_step",
           "rayleigh_blocks", "hydrostatic_init", "vertical_balance_residual",
           "PicardError", "PicardResult"]


class PicardError(RuntimeError):
    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


@dataclass
class PicardResult:
    iterations: int
    trace: list


def rayleigh_blocks(model, coeff):
    """Top-layer restriction of M^{U-perp} scaled by the friction coefficient."""
    co = model.cols
    return coeff * co.zz[-1] * co.H


def _vertical_forcing(model, state, diag, rayleigh=0.0, include_advection=None):
    """Right-hand side F of M du_perp/dt = F on interior interfaces."""
    co = model.cols
    sp = model.sp
    wful = co.full_from_interior(state.u_perp)
    keM = co.kinetic_moments_z(wful)
    rhs = co.grad_zT(keM)
    rhs += model.const.g * co.grad_zT(co.z_moments())
    S = co.s_blocks(diag.theta)[:, 1:-1]
    rhs += np.matmul(S, diag.P_perp[..., None])[..., 0]
    if rayleigh > 0.0:
        fr = rayleigh_blocks(model, rayleigh)
        rhs[:, -1] -= np.matmul(fr, state.u_perp[:, -1, :, None])[..., 0]
    nonhydro = model.nonhydrostatic if include_advection is None else include_advection
    if nonhydro and model.L > 1:
        gradw = model.grad_w_qp(state.u_perp)        # (nelem, L-1, nq, 3)
        vec = sp.upar_vec_layers(state.u_par) * (
            0.5 / (sp.A[None, :, :, None] * sp.zz[:, None, None, None]))
        zm, zi = co.z_mid, co.sp.mesh.z_interfaces
        wl = (zm[1:] - zi[1:-1]) / (zm[1:] - zm[:-1])     # (L-1,)
        uval = wl[:, None, None, None] * vec[:-1] + (1 - wl)[:, None, None, None] * vec[1:]
        adv = (np.moveaxis(uval, 0, 1) * gradw).sum(-1)   # (nelem, L-1, nq)
        wt = np.zeros(model.L + 1)
        wt[:-1] += co.zz
        wt[1:] += co.zz
        rhs -= wt[None, 1:-1, None] * ((adv * sp.W) @ sp.Eq2)
    return rhs


def vertical_explicit_half_step(model, state, dt, rayleigh=0.0):
    """Forward-Euler half step of the vertical system (the carryover)."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    diag = model.diagnostics(state)
    co = model.cols
    rhs = _vertical_forcing(model, state, diag, rayleigh)
    du = co.mass_solve(rhs)
    out = state.copy()
    out.u_perp = state.u_perp + 0.5 * dt * du
    out.rho = state.rho - 0.5 * dt * co.div_z(diag.U_perp)
    out.Theta = state.Theta - 0.5 * dt * co.div_z(diag.F_perp)
    if not np.all(np.isfinite(out.u_perp)):
        bad = np.argwhere(~np.isfinite(out.u_perp))[0]
        raise FloatingPointError(f"non-finite vertical tendency in column {bad[0]}")
    return out


def vertical_implicit_half_step(model, state, dt, tol=1e-8, max_iter=50,
                                rayleigh=0.0, trace_out=None):
    """Backward-Euler half step solved by per-column Picard iteration.

    Each iteration refactors the bracketed Helmholtz-like operator at the
    current iterates, solves for u_perp, then updates Pi (log-Exner), theta,
    the vertical fluxes, rho, and Theta; convergence is the relative L2 change
    of the concatenated (u_perp, rho, Theta, Pi) column state.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    c = model.const
    co = model.cols
    L = model.L
    Ki = L - 1
    ne, p2 = co.nelem, co.p2

    Pi2, PiM2 = model.exner(state.Theta)
    theta = model.theta_diag(state.rho, state.Theta)
    MqTh2 = co.mq_w_blocks(state.Theta)
    MqPi2 = co.mq_w_blocks(Pi2)
    Kpp = np.linalg.solve(MqTh2, MqPi2)                       # (ne, L, p2, p2)
    Cm = np.matmul(co.H[:, None], Kpp) * (0.5 / co.zz)[None, :, None, None]
    zG = co.grad_zT(co.z_moments())
    PiG2 = co.grad_zT(PiM2)

    u = state.u_perp.copy()
    rho = state.rho.copy()
    Theta = state.Theta.copy()
    Pi = Pi2.copy()
    c2 = dt * dt * c.R / (4.0 * c.cv)
    c3 = dt * c.R / (2.0 * c.cv)
    fr = rayleigh_blocks(model, rayleigh) if rayleigh > 0.0 else None

    trace = []
    active = None
    for it in range(1, max_iter + 1):
        S = co.s_blocks(theta)[:, 1:-1]
        MTh = co.mtheta_blocks(Theta)[:, 1:-1]
        Kt = co.t_node_blocks(co.full_from_interior(u))       # (ne, L+1, p2, p2)
        P1 = np.matmul(co.Hinv[:, None], MTh) / co.d[1:-1, None, None]
        P1f = np.zeros((ne, L + 1, p2, p2))
        P1f[:, 1:-1] = P1
        # sandwich tridiagonal: rows k = 1..L-1
        lo = np.zeros((ne, Ki - 1, p2, p2)) if Ki > 1 else np.zeros((ne, 0, p2, p2))
        up = np.zeros_like(lo)
        di = np.zeros((ne, Ki, p2, p2))
        CmP_same = np.matmul(Cm, P1f[:, :-1])    # C_m P1_m
        CmP_next = np.matmul(Cm, P1f[:, 1:])     # C_m P1_{m+1}
        # R3[k<-k] = (C_{k-1} + C_k) P1_k ; R3[k<-k-1] = -C_{k-1} P1_{k-1};
        # R3[k<-k+1] = -C_k P1_{k+1}
        SM = np.matmul(S, co.Hinv[:, None]) / co.d[1:-1, None, None]
        R3d = CmP_next[:, :-1] + CmP_same[:, 1:]
        di += c2 * np.matmul(SM, R3d)
        if Ki > 1:
            R3lo = -CmP_same[:, 1:-1]
            R3up = -CmP_next[:, 1:-1]
            lo += c2 * np.matmul(SM[:, 1:], R3lo)
            up += c2 * np.matmul(SM[:, :-1], R3up)
        # mass and linearized kinetic terms
        di += co.d[1:-1][None, :, None, None] * co.H[:, None, :, :]
        if Ki > 1:
            lo -= 0.25 * dt * Kt[:, 1:-2]
            up += 0.25 * dt * Kt[:, 2:-1]
        if fr is not None:
            di[:, -1] += 0.5 * dt * fr
        rhs = co.mass_apply(state.u_perp)
        Pgrad2 = np.matmul(co.Hinv[:, None], PiG2[..., None])[..., 0] / co.d[1:-1, None]
        rhs += 0.5 * dt * (c.g * zG + np.matmul(S, Pgrad2[..., None])[..., 0])
        u_new = co.solve_tridiag(di, lo, up, rhs)

        y = np.matmul(P1, u_new[..., None])[..., 0]           # M^{-1} M_Theta u
        Pi_new = Pi2 - c3 * np.matmul(Kpp, co.div_z(y)[..., None])[..., 0]
        theta = model.theta_diag(rho, Theta)
        N = co.n_blocks(rho)[:, 1:-1]
        U = co.mass_solve(np.matmul(N, u_new[..., None])[..., 0])
        rho_new = state.rho - 0.5 * dt * co.div_z(U)
        Snew = co.s_blocks(theta)[:, 1:-1]
        F = co.mass_solve(np.matmul(Snew, U[..., None])[..., 0])
        Theta_new = state.Theta - 0.5 * dt * co.div_z(F)

        # per-column convergence: frozen columns keep their converged values
        if active is not None:
            for arr_new, arr_old in ((u_new, u), (rho_new, rho),
                                     (Theta_new, Theta), (Pi_new, Pi)):
                arr_new[~active] = arr_old[~active]

        def cnorm(a):
            return (a.reshape(ne, -1) ** 2).sum(axis=1)

        num = cnorm(u_new - u) + cnorm(rho_new - rho) \
            + cnorm(Theta_new - Theta) + cnorm(Pi_new - Pi)
        den = cnorm(u_new) + cnorm(rho_new) + cnorm(Theta_new) + cnorm(Pi_new)
        rel = np.sqrt(num / np.maximum(den, 1e-300))
        trace.append(float(rel.max()))
        u, rho, Theta, Pi = u_new, rho_new, Theta_new, Pi_new
        newly = rel < tol
        if active is None:
            active = ~newly
        else:
            active &= ~newly
        if not active.any():
            break
    else:
        raise PicardError(
            f"Picard failed to reach {tol:.1e} in {max_iter} iterations "
            f"(last change {trace[-1]:.3e})", trace)

    if trace_out is not None:
        trace_out.extend(trace)
    out = state.copy()
    out.u_perp, out.rho, out.Theta = u, rho, Theta
    return out, PicardResult(len(trace), trace)


def vertical_balance_residual(model, rho, Theta):
    """Residual of S theta-weighted pressure gradient + weak gravity, per column."""
    co = model.cols
    _, PiM = model.exner(Theta)
    theta = model.theta_diag(rho, Theta)
    P = co.mass_solve(co.grad_zT(PiM))
    S = co.s_blocks(theta)[:, 1:-1]
    return np.einsum("ekab,ekb->eka", S, P) + model.const.g * co.grad_zT(co.z_moments())


def hydrostatic_init(model, exner_profile, rho_profile, tol=1e-12, max_iter=60):
    """Discretely balanced (rho, Theta) columns from analytic vertical profiles.

    Stage 1 chooses Theta coefficients so the Exner moment vector is uniform
    across the cells of every layer (its value the moment of the analytic
    profile), which kills the weak horizontal pressure gradient exactly.
    Stage 2 adjusts rho per column until the vertical balance residual
    vanishes, pinning the bottom-layer rho moments to the analytic value.
    """
    c = model.const
    co = model.cols
    sp = model.sp
    ne, L, p2 = co.nelem, co.L, co.p2
    zi = model.mesh.z_interfaces

    # target moments of the analytic profiles (separable, cell-independent)
    pim_target = 0.5 * (exner_profile(zi[:-1]) + exner_profile(zi[1:]))   # (L,)
    rho_m = 0.5 * (rho_profile(zi[:-1]) + rho_profile(zi[1:]))

    # stage 1: per-(element, layer) Newton for Theta coefficients
    from .basis import gll_nodes
    Tq0 = (c.p0 / c.R) * (pim_target / c.cp) ** (c.cv / c.R)              # rho*theta(z)
    dxn = np.diff(gll_nodes(model.mesh.p))
    cone = np.einsum("a,b->ba", dxn, dxn).reshape(-1)  # histopolation of 1
    Abar = np.mean(sp.A, axis=1)
    Theta = Tq0[None, :, None] * (2.0 * sp.zz)[None, :, None] \
        * cone[None, None, :] * Abar[:, None, None]

    kap = c.R / c.cv
    for it in range(max_iter):
        Tq = model.q_phys_qp(Theta)
        eos = c.cp * (c.R * Tq / c.p0) ** kap
        F = np.einsum("q,elq,qm->elm", sp.W, eos, sp.Eq2) - pim_target[None, :, None]
        if np.abs(F).max() <= tol * c.cp:
            break
        deos = eos * kap / Tq * (0.5 / (sp.A[:, None, :] * sp.zz[None, :, None]))
        J = np.einsum("q,elq,qa,qb->elab", sp.W, deos, sp.Eq2, sp.Eq2)
        Theta -= np.linalg.solve(J, F[..., None])[..., 0]
    else:
        raise RuntimeError("Exner moment Newton failed to converge")

    # stage 2: rho per column, Newton with a finite-difference Jacobian
    rho = rho_m[None, :, None] * (2.0 * sp.zz)[None, :, None] \
        * cone[None, None, :] * Abar[:, None, None]

    _, PiM = model.exner(Theta)
    P = co.mass_solve(co.grad_zT(PiM))
    gz = c.g * co.grad_zT(co.z_moments())

    def residual(r):
        th = model.theta_diag(r, Theta)
        S = co.s_blocks(th)[:, 1:-1]
        bal = np.einsum("ekab,ekb->eka", S, P) + gz
        pin = np.einsum("q,eq,qm->em", sp.W, model.q_phys_qp(r)[:, 0, :], sp.Eq2) \
            - rho_m[0]
        return np.concatenate([bal.reshape(ne, -1), pin], axis=1)

    n_un = L * p2
    bal_scale = np.abs(gz).max()
    for it in range(max_iter):
        F = residual(rho)
        if np.abs(F[:, :-p2]).max() <= tol * bal_scale and \
           np.abs(F[:, -p2:]).max() <= tol * max(rho_m.max(), 1.0):
            break
        J = np.empty((ne, n_un, n_un))
        base = F
        h = 1e-6 * max(rho.max(), 1.0)
        flat = rho.reshape(ne, -1)
        for j in range(n_un):
            pert = flat.copy()
            pert[:, j] += h
            J[:, :, j] = (residual(pert.reshape(ne, L, p2)) - base) / h
        delta = np.linalg.solve(J, F[..., None])[..., 0]
        rho = (flat - delta).reshape(ne, L, p2)
    else:
        raise RuntimeError("hydrostatic balance Newton failed to converge")
    return rho, Theta
