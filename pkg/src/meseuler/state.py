"""Prognostic state, physical constants, equation of state, and diagnostics.

Layer scalar fields (rho, Theta, Pi) are stored as (nelem, L, p^2) reference
coefficients; interface fields as (nelem, L-1, p^2) (velocity-like, boundary
rows eliminated) or (nelem, L+1, p^2) (theta).  Horizontal velocity u_par is
(L, n_ed) in the global flux numbering.
"""

from dataclasses import dataclass, field

import numpy as np

from .assembly import Spaces
from .columns import ColumnOps
from .derham import HorizontalDofs

__all__ = ["Constants", "State", "Diagnostics", "Model", "ThermoDomainError"]


class ThermoDomainError(ValueError):
    pass


@dataclass(frozen=True)
class Constants:
    R: float = 287.0
    cp: float = 1004.5
    p0: float = 1.0e5
    g: float = 9.80616
    omega: float = 7.292e-5

    @property
    def cv(self):
        return self.cp - self.R

    @property
    def kappa(self):
        return self.R / self.cp


@dataclass
class State:
    u_par: np.ndarray    # (L, n_ed)
    u_perp: np.ndarray   # (nelem, L-1, p2), z=0 and z=ztop rows eliminated
    rho: np.ndarray      # (nelem, L, p2)
    Theta: np.ndarray    # (nelem, L, p2)
    t: float = 0.0

    def copy(self):
        return State(self.u_par.copy(), self.u_perp.copy(),
                     self.rho.copy(), self.Theta.copy(), self.t)

    def blob(self):
        return np.concatenate([a.ravel() for a in
                               (self.u_par, self.u_perp, self.rho, self.Theta)])


@dataclass
class Diagnostics:
    Pi: np.ndarray = None        # (nelem, L, p2)
    PiM: np.ndarray = None       # M^Q Pi moments, same shape
    theta: np.ndarray = None     # (nelem, L+1, p2)
    P_par: np.ndarray = None     # (L, n_ed)
    P_perp: np.ndarray = None    # (nelem, L-1, p2)
    U_par: np.ndarray = None
    F_par: np.ndarray = None
    U_perp: np.ndarray = None
    F_perp: np.ndarray = None
    omega_perp: np.ndarray = None  # (L, n_nod)
    vort_qp: np.ndarray = None     # (L, nelem, nq) physical (omega+f) values


class Model:
    """Discretization context: mesh, operators, constants, and run flags."""

    def __init__(self, mesh, constants=None, q=None, qv=2, mass_mode="direct",
                 mass_tol=1e-12, coriolis=True, nonhydrostatic=False):
        self.mesh = mesh
        self.const = constants or Constants()
        self.dofs = HorizontalDofs(mesh.topo, mesh.p)
        self.sp = Spaces(mesh, self.dofs, q=q, qv=qv,
                         mass_mode=mass_mode, mass_tol=mass_tol)
        self.cols = ColumnOps(self.sp)
        self.nonhydrostatic = nonhydrostatic
        self.coriolis = coriolis and mesh.backend == "cubed_sphere"
        self.L = mesh.nlayers
        self.p2 = mesh.p**2
        self.shape_q = (mesh.nelem, self.L, self.p2)

        # Coriolis: project f = 2 Omega sin(phi) onto W-perp; store qp values
        if self.coriolis:
            fqp = 2.0 * self.const.omega * self.sp.UP[:, :, 2]
            rhs = self.sp.scatter_nod(
                np.einsum("q,eq,eq,qm->em", self.sp.W, fqp, self.sp.A, self.sp.Ln2))
            fhat = self.sp.solver_W.solve(rhs)
            self.f_qp = np.einsum("qm,em->eq", self.sp.Ln2,
                                  self.sp.gather_nod(fhat))
        else:
            self.f_qp = np.zeros((mesh.nelem, self.sp.nq))

    def zero_state(self):
        ne, L, p2 = self.shape_q
        return State(np.zeros((L, self.dofs.n_ed)), np.zeros((ne, L - 1, p2)),
                     np.zeros((ne, L, p2)), np.zeros((ne, L, p2)))

    # -- thermodynamics ----------------------------------------------------

    def q_phys_qp(self, fhat):
        """Physical values of a (nelem, L, p2) Q field at qp: (nelem, L, nq)."""
        vals = self.cols.face_ref_layers(fhat)
        return vals * (0.5 / (self.sp.A[:, None, :] * self.sp.zz[None, :, None]))

    def exner(self, Theta):
        """Q-projected Exner pressure and its moment vector from Theta."""
        c = self.const
        Tq = self.q_phys_qp(Theta)
        if np.any(Tq <= 0.0):
            raise ThermoDomainError("nonpositive Theta at a quadrature point")
        eos = c.cp * (c.R * Tq / c.p0) ** (c.R / c.cv)
        PiM = (eos * self.sp.W) @ self.sp.Eq2
        Pi = self.cols.mq_solve(PiM)
        return Pi, PiM

    def theta_diag(self, rho, Theta):
        """theta on U-perp from N(rho) theta = L Theta, all interfaces."""
        N = self.cols.n_blocks(rho)
        rhs = self.cols.l_apply(Theta)
        try:
            return np.linalg.solve(N, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise ThermoDomainError(f"singular density-weighted mass: {exc}")

    # -- weak gradients ----------------------------------------------------

    def grad_pi_par(self, PiM):
        """Weak horizontal gradient: (L, n_ed) from Q moments (nelem, L, p2)."""
        L = self.L
        QM = np.moveaxis(PiM, 1, 0).reshape(L, -1)       # (L, n_fq)
        rhs = (self.sp.DdivT @ QM.T)                      # (n_ed, L)
        sol = self.sp.solver_U.solve(rhs)
        return (sol * (2.0 * self.sp.zz)[None, :]).T      # (L, n_ed)

    def grad_pi_perp(self, PiM):
        return self.cols.mass_solve(self.cols.grad_zT(PiM))

    # -- vorticity and rotational values ------------------------------------

    def vorticity(self, u_par):
        """Vertical vorticity coefficients (L, n_nod) and qp values incl. f."""
        rhs = self.sp.DrotT @ (self.sp.M2dU @ u_par.T)    # (n_nod, L)
        om = self.sp.solver_W.solve(rhs).T                 # (L, n_nod)
        loc = self.sp.gather_nod(om)                       # (L, nelem, nn)
        vals = np.einsum("qm,lem->leq", self.sp.Ln2, loc)
        vals = vals * (0.5 / self.sp.zz)[:, None, None]
        return om, vals + self.f_qp[None]

    def shear_qp(self, u_par):
        """d u_par / dz at interior interfaces by direct differencing: (L-1, nelem, nq, 3)."""
        vec = self.sp.upar_vec_layers(u_par) * (
            0.5 / (self.sp.A[None, :, :, None] * self.sp.zz[:, None, None, None]))
        dzm = np.diff(self.cols.z_mid)
        return (vec[1:] - vec[:-1]) / dzm[:, None, None, None]

    def grad_w_qp(self, u_perp):
        """Horizontal gradient of w at interior interfaces: (nelem, L-1, nq, 3)."""
        sp_ = self.sp
        what = u_perp
        wref = what @ sp_.Eq2.T
        dxi = what @ sp_.dEq2_dxi.T
        deta = what @ sp_.dEq2_deta.T
        # grad(wref/A) = [(dxi - wref dlnA_xi) a^xi + (deta - wref dlnA_eta) a^eta]/A
        gx = dxi - wref * sp_.dlnA_dxi[:, None, :]
        gy = deta - wref * sp_.dlnA_deta[:, None, :]
        grad = (gx[..., None] * sp_.a_xi[:, None, :, :]
                + gy[..., None] * sp_.a_eta[:, None, :, :])
        return grad / sp_.A[:, None, :, None]

    # -- fluxes --------------------------------------------------------------

    def fluxes_par(self, state, theta):
        """U_par = M^{-1} N u and F_par = M^{-1} S U per layer, multi-RHS."""
        sp_ = self.sp
        rho_qp = np.moveaxis(self.q_phys_qp(state.rho), 1, 0)
        th_qp = np.moveaxis(self.theta_bar_qp(theta), 1, 0)
        rhsU = sp_.apply_weighted_edge_layers(state.u_par, rho_qp)
        U = sp_.solver_U.solve(rhsU.T).T                  # (L, n_ed)
        rhsF = sp_.apply_weighted_edge_layers(U, th_qp)
        F = sp_.solver_U.solve(rhsF.T).T
        return U, F

    def theta_bar_qp(self, theta):
        """Layer-mean physical theta at qp: (nelem, L, nq)."""
        tref = self.cols.face_ref_ifaces(theta)
        tbar = 0.5 * (tref[:, :-1] + tref[:, 1:])
        return tbar / self.sp.A[:, None, :]

    def fluxes_perp(self, state, theta):
        """U_perp = M^{-1} N u_perp, F_perp = M^{-1} S U_perp (interior)."""
        N = self.cols.n_blocks(state.rho)[:, 1:-1]
        S = self.cols.s_blocks(theta)[:, 1:-1]
        U = self.cols.mass_solve(np.matmul(N, state.u_perp[..., None])[..., 0])
        F = self.cols.mass_solve(np.matmul(S, U[..., None])[..., 0])
        return U, F

    # -- full diagnostic bundle ----------------------------------------------

    def diagnostics(self, state, horizontal=True, vertical=True):
        d = Diagnostics()
        d.Pi, d.PiM = self.exner(state.Theta)
        d.theta = self.theta_diag(state.rho, state.Theta)
        if horizontal:
            sp_ = self.sp
            L = self.L
            # P and U share one multi-RHS mass solve; F follows from U
            QM = np.moveaxis(d.PiM, 1, 0).reshape(L, -1)
            rho_qp = np.moveaxis(self.q_phys_qp(state.rho), 1, 0)
            th_qp = np.moveaxis(self.theta_bar_qp(d.theta), 1, 0)
            rhs = np.empty((self.dofs.n_ed, 2 * L))
            rhs[:, :L] = sp_.DdivT @ QM.T
            rhs[:, L:] = sp_.apply_weighted_edge_layers(state.u_par, rho_qp).T
            sol = sp_.solver_U.solve(rhs)
            d.P_par = (sol[:, :L] * (2.0 * sp_.zz)[None, :]).T
            d.U_par = sol[:, L:].T
            rhsF = sp_.apply_weighted_edge_layers(d.U_par, th_qp)
            d.F_par = sp_.solver_U.solve(rhsF.T).T
            d.omega_perp, d.vort_qp = self.vorticity(state.u_par)
        if vertical:
            d.P_perp = self.grad_pi_perp(d.PiM)
            d.U_perp, d.F_perp = self.fluxes_perp(state, d.theta)
        return d
