"""Per-column vertical operators: one horizontal element, all layers.

The vertical velocity space carries interface degrees of freedom; velocity-like
fields (u_perp, its mass/temperature fluxes, the vertical pressure gradient)
live on the interior interfaces with the z = 0 and z = z_top rows eliminated,
while theta keeps the boundary interfaces.  Under the collocated vertical rule
every Gram is diagonal in the interface index, so the implicit operator is
block-tridiagonal with p^2 x p^2 blocks and all columns are solved in one
batched sweep.

Index conventions: layers m = 0..L-1, interfaces k = 0..L; interior interface
arrays have length L-1 and start at k = 1.
"""

import numpy as np

from .assembly import block_thomas_solve

__all__ = ["ColumnOps"]


class ColumnOps:
    def __init__(self, spaces):
        self.sp = spaces
        self.H = spaces.H                    # (nelem, p2, p2) edge Gram / A
        self.Hinv = spaces.Hinv
        self.L = spaces.nlayers
        self.zz = spaces.zz                  # (L,) z_zeta per layer
        self.d = spaces.Vdiag                # (L+1,) lumped interface thickness
        zi = spaces.mesh.z_interfaces
        self.z_mid = 0.5 * (zi[:-1] + zi[1:])
        self.nelem = spaces.nelem
        self.p2 = spaces.p ** 2
        self._EE2 = np.einsum("qa,qb->qab", spaces.Eq2, spaces.Eq2).reshape(
            spaces.nq, self.p2 * self.p2)

    # -- incidence in the vertical ----------------------------------------

    def grad_zT(self, s):
        """(E32_perp)^T applied to layer moments: interior interfaces k=1..L-1."""
        return s[..., :-1, :] - s[..., 1:, :]

    def div_z(self, v):
        """E32_perp applied to an interior-interface field (implied 0 at ends)."""
        pad = np.zeros(v.shape[:-2] + (1, v.shape[-1]))
        vf = np.concatenate([pad, v, pad], axis=-2)
        return vf[..., 1:, :] - vf[..., :-1, :]

    # -- mass and weighted blocks ------------------------------------------

    def mass_apply(self, v):
        """M^{U-perp} on interior interfaces: d_k * H per interface."""
        return self.d[1:-1, None] * (v @ np.swapaxes(self.H, -1, -2))

    def mass_solve(self, r):
        return (r @ np.swapaxes(self.Hinv, -1, -2)) / self.d[1:-1, None]

    def face_ref_layers(self, fhat):
        """Reference qp values of per-layer face fields: (nelem, L, p2) -> (nelem, L, nq)."""
        return fhat @ self.sp.Eq2.T

    def face_ref_ifaces(self, fhat):
        return fhat @ self.sp.Eq2.T

    def _hw(self, qp_weight):
        """Blocks int ee_a ee_b * w / A^2 for a (nelem[, K], nq) qp weight."""
        A2 = self.sp.A**2 if qp_weight.ndim == 2 else self.sp.A[:, None, :] ** 2
        w = (qp_weight / A2) * self.sp.W
        return (w @ self._EE2).reshape(qp_weight.shape[:-1] + (self.p2, self.p2))

    def n_blocks(self, rho):
        """rho-weighted U-perp mass, all interfaces: (nelem, L+1, p2, p2)."""
        rq = self.face_ref_layers(rho)          # (nelem, L, nq)
        Hr = self._hw(rq)                        # (nelem, L, p2, p2)
        out = np.zeros((self.nelem, self.L + 1, self.p2, self.p2))
        out[:, :-1] += 0.5 * Hr
        out[:, 1:] += 0.5 * Hr
        return out

    def s_blocks(self, theta):
        """theta-weighted U-perp mass (theta on interfaces): (nelem, L+1, p2, p2)."""
        tq = self.face_ref_ifaces(theta)
        Ht = self._hw(tq)
        w = np.zeros(self.L + 1)
        w[:-1] += self.zz
        w[1:] += self.zz
        return w[None, :, None, None] * Ht

    def mtheta_blocks(self, Theta):
        """Theta(Q)-weighted U-perp mass; same sparsity as n_blocks."""
        return self.n_blocks(Theta)

    def mq_w_blocks(self, w):
        """Q-weighted Q mass per layer: (0.25/zz^2) int ee ee w / A^2."""
        wq = self.face_ref_layers(w)
        Hwb = self._hw(wq)
        return (0.25 / self.zz**2)[None, :, None, None] * Hwb

    def mq_apply(self, v):
        """Unweighted M^Q per layer applied to (nelem, L, p2)."""
        return (0.5 / self.zz)[None, :, None] * (v @ np.swapaxes(self.H, -1, -2))

    def mq_solve(self, r):
        return (2.0 * self.zz)[None, :, None] * (r @ np.swapaxes(self.Hinv, -1, -2))

    def t_node_blocks(self, w_iface):
        """Kinetic pairing blocks K_k = 0.25 * int ee ee w_k / A^2 per interface.

        (T u)_layer m = K_m u_m + K_{m+1} u_{m+1} for the current iterate w.
        """
        wq = self.face_ref_ifaces(w_iface)
        return 0.25 * self._hw(wq)

    def l_apply(self, Theta):
        """Mixed <eps^Q, eps^{U-perp}> pairing on ALL interfaces: (nelem,L+1,p2)."""
        HT = Theta @ np.swapaxes(self.H, -1, -2)
        out = np.zeros((self.nelem, self.L + 1, self.p2))
        out[:, :-1] += 0.5 * HT
        out[:, 1:] += 0.5 * HT
        return out

    def z_moments(self):
        """M^Q z for the projected height field: z_mid per cell and layer."""
        return np.broadcast_to(self.z_mid[None, :, None],
                               (self.nelem, self.L, self.p2)).copy()

    def kinetic_moments_z(self, w_full):
        """Q moments of half w^2 from a full-interface w field (nelem,L+1,p2)."""
        wq = self.face_ref_ifaces(w_full) / self.sp.A[:, None]  # physical w
        ke = 0.5 * wq**2
        mom = (ke * self.sp.W) @ self.sp.Eq2
        return 0.5 * (mom[:, :-1] + mom[:, 1:])

    # -- batched tridiagonal helpers ---------------------------------------

    def solve_tridiag(self, D, Lo, Up, rhs):
        return block_thomas_solve(D, Lo, Up, rhs)

    def full_from_interior(self, v):
        pad = np.zeros(v.shape[:-2] + (1, v.shape[-1]))
        return np.concatenate([pad, v, pad], axis=-2)
