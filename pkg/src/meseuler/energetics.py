"""Energy functionals, exchange integrals, skew-symmetry audit, and the ledger.

The exchange integrals are evaluated with the same flux and gradient fields
the dynamics computed for the step, so the ledger reflects the model as run
(including the mass-solver tolerance signature of the K-I pair).
"""

import numpy as np

__all__ = ["energies", "exchange_integrals", "bracket_audit", "EnergyLedger"]

LEDGER_HEADER = "t,K,P,I,K2P,P2K,K2I,I2K,vpow_PI,vpow_KP"


def energies(model, state, diag=None):
    """(K, P, I): kinetic, potential, internal energy of the discrete state."""
    if diag is None:
        diag = model.diagnostics(state)
    sp, co = model.sp, model.cols
    K = 0.0
    for l in range(model.L):
        K += 0.5 * diag.U_par[l] @ sp.apply_M_Upar(state.u_par[l], l)
    K += 0.5 * np.sum(diag.U_perp * co.mass_apply(state.u_perp))
    P = model.const.g * np.sum(co.z_moments() * state.rho)
    I = (model.const.cv / model.const.cp) * np.sum(diag.PiM * state.Theta)
    return K, P, I


def exchange_integrals(model, state, diag=None):
    """(K2P, P2K, K2I, I2K, vpow_PI, vpow_KP) as the dynamics evaluates them."""
    if diag is None:
        diag = model.diagnostics(state)
    sp, co = model.sp, model.cols
    g = model.const.g
    zM = co.z_moments()
    zMf = np.moveaxis(zM, 1, 0).reshape(model.L, -1)
    PiMf = np.moveaxis(diag.PiM, 1, 0).reshape(model.L, -1)

    K2P = g * np.sum(diag.U_par * (sp.DdivT @ zMf.T).T)
    K2P += g * np.sum(diag.U_perp * co.grad_zT(zM))
    div_r = (sp.Ddiv @ diag.U_par.T).T
    P2K = -g * (np.sum(zMf * div_r) + np.sum(zM * co.div_z(diag.U_perp)))

    th_qp = model.theta_bar_qp(diag.theta)
    K2I = 0.0
    for l in range(model.L):
        Pvec = sp.upar_vec(diag.P_par[l])
        sp_loc = np.einsum("eqad,eqd,eq->ea", sp.Bvec, Pvec,
                           sp.W * th_qp[:, l, :] / sp.A)
        K2I += diag.U_par[l] @ ((0.5 / sp.zz[l]) * sp.scatter_flux(sp_loc))
    Sb = co.s_blocks(diag.theta)[:, 1:-1]
    K2I += np.sum(diag.U_perp * np.einsum("ekab,ekb->eka", Sb, diag.P_perp))

    divF = (sp.Ddiv @ diag.F_par.T).T
    vPI = -np.sum(diag.PiM * co.div_z(diag.F_perp))
    I2K = -np.sum(PiMf * divF) + vPI
    vKP = g * np.sum(diag.U_perp * co.grad_zT(zM))
    return K2P, P2K, K2I, I2K, vPI, vKP


def bracket_audit(model, state, diag=None):
    """Relative defect of the skew-symmetric bracket at the given state.

    Pairs (U, Phi, Pi) against their bracket image; the transpose pairs cancel
    algebraically, leaving the rotational no-work term and solver noise.
    """
    if diag is None:
        diag = model.diagnostics(state)
    sp, co = model.sp, model.cols
    g = model.const.g
    L = model.L

    # directional Phi moments, matching the split systems as run
    PhiH = g * co.z_moments()
    for l in range(L):
        PhiH[:, l, :] += sp.kinetic_moments(state.u_par[l], l)
    wful = co.full_from_interior(state.u_perp)
    PhiV = g * co.z_moments() + co.kinetic_moments_z(wful)
    PhiHf = np.moveaxis(PhiH, 1, 0).reshape(L, -1)
    PiMf = np.moveaxis(diag.PiM, 1, 0).reshape(L, -1)

    th_qp = model.theta_bar_qp(diag.theta)
    total = 0.0
    for l in range(L):
        uvec = sp.upar_vec(state.u_par[l])
        cxu = np.cross(sp.UP, uvec)
        rot = np.einsum("eqad,eqd,eq->ea", sp.Bvec, cxu,
                        sp.W * diag.vort_qp[l] / sp.A)
        Pvec = sp.upar_vec(diag.P_par[l])
        prs = np.einsum("eqad,eqd,eq->ea", sp.Bvec, Pvec,
                        sp.W * th_qp[:, l, :] / sp.A)
        row = sp.DdivT @ PhiHf[l] + (0.5 / sp.zz[l]) * sp.scatter_flux(prs - rot)
        total += diag.U_par[l] @ row
    Sb = co.s_blocks(diag.theta)[:, 1:-1]
    rowp = co.grad_zT(PhiV) + np.einsum("ekab,ekb->eka", Sb, diag.P_perp)
    total += np.sum(diag.U_perp * rowp)
    # density rows, paired with the matching directional Phi
    divU = (sp.Ddiv @ diag.U_par.T).T
    total -= np.sum(PhiHf * divU) + np.sum(PhiV * co.div_z(diag.U_perp))
    # temperature rows, paired with Pi
    divF = (sp.Ddiv @ diag.F_par.T).T
    total -= np.sum(PiMf * divF) + np.sum(diag.PiM * co.div_z(diag.F_perp))
    K, _, _ = energies(model, state, diag)
    return abs(total) / max(abs(K), 1e-30)


class EnergyLedger:
    """Time series of energies and exchange integrals, written as CSV."""

    def __init__(self):
        self.rows = []

    def append(self, model, state, diag=None):
        if diag is None:
            diag = model.diagnostics(state)
        K, P, I = energies(model, state, diag)
        ex = exchange_integrals(model, state, diag)
        row = (state.t, K, P, I) + ex[:4] + (ex[4], ex[5])
        if not np.all(np.isfinite(row)):
            raise FloatingPointError("non-finite energy ledger row")
        self.rows.append(row)
        return row

    def write(self, path):
        with open(path, "w") as f:
            f.write(LEDGER_HEADER + "\n")
            for row in self.rows:
                f.write(",".join(repr(float(v)) for v in row) + "\n")

    @staticmethod
    def read(path):
        data = np.genfromtxt(path, delimiter=",", names=True)
        return data
