"""Mass, weighted, and rotational operators on layers and columns.

Horizontal (per-layer) operators are assembled from per-element dense blocks
through signed gather/scatter maps; the unweighted mass matrices are built
once per mesh and prefactored, while weighted matrices (S, N, T, R) are
rebuilt from the current fields at every evaluation and applied matrix-free.

Vertical (per-column) operators exploit the collocated vertical quadrature
(q_v = p_v + 1 = 2): every vertical Gram is then diagonal or bidiagonal in
the interface index, so column systems are block-tridiagonal and solved by a
batched block-Thomas sweep across all columns at once.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .basis import EdgeBasis, NodalBasis, gll_quadrature

__all__ = ["Spaces", "MassSolver", "block_thomas_solve"]


class MassSolverError(RuntimeError):
    pass


class MassSolver:
    """SPD solver with the run-wide mode switch: direct LU or CG/block-Jacobi."""

    def __init__(self, A, elem_idx, mode="direct", tol=1e-12, maxiter=2000):
        self.A = A.tocsr()
        self.n = A.shape[0]
        self.mode = mode
        self.tol = tol
        self.maxiter = maxiter
        if mode == "direct":
            self._groups = self._component_factor(self.A)
            self._lu = None if self._groups is not None else spla.splu(
                A.tocsc(), permc_spec="MMD_AT_PLUS_A")
        elif mode == "cg":
            # overlapping additive-Schwarz block Jacobi, one block per element
            self._idx = np.asarray(elem_idx)
            blocks = np.empty((len(self._idx), self._idx.shape[1], self._idx.shape[1]))
            for e, idx in enumerate(self._idx):
                blocks[e] = self.A[np.ix_(idx, idx)].toarray()
            self._pinv = np.linalg.inv(blocks)
            self._flat = self._idx.reshape(-1)
        else:
            raise ValueError(f"unknown mass solver mode {mode!r}")

    @staticmethod
    def _component_factor(A, max_block=512):
        """Batched dense inverses of the matrix's connected components.

        Collocated quadrature decouples the mass matrices into small 1D-line
        (or single-node) blocks; anything larger falls back to sparse LU.
        """
        from scipy.sparse import csgraph

        ncomp, labels = csgraph.connected_components(A, directed=False)
        if ncomp <= 4:
            return None
        order = np.argsort(labels, kind="stable")
        sizes = np.bincount(labels)
        if sizes.max() > max_block:
            return None
        groups = []
        Ad = A.tocsr()
        start = 0
        by_size = {}
        for comp in range(ncomp):
            idx = order[start:start + sizes[comp]]
            start += sizes[comp]
            by_size.setdefault(sizes[comp], []).append(idx)
        for s, idxs in by_size.items():
            I = np.array(idxs)                      # (g, s)
            blocks = np.empty((len(idxs), s, s))
            for g, idx in enumerate(idxs):
                blocks[g] = Ad[np.ix_(idx, idx)].toarray()
            groups.append((I, np.linalg.inv(blocks)))
        return groups

    def _precondition(self, R):
        loc = R[self._idx, :]
        y = np.einsum("eab,ebk->eak", self._pinv, loc).reshape(-1, R.shape[1])
        Z = np.empty_like(R)
        for k in range(R.shape[1]):
            Z[:, k] = np.bincount(self._flat, weights=y[:, k], minlength=self.n)
        return Z

    def solve(self, B):
        """Solve A X = B for one vector or a stack of right-hand sides."""
        one = B.ndim == 1
        B2 = B[:, None] if one else B
        if self.mode == "direct":
            if self._groups is not None:
                X = np.empty_like(B2)
                for I, inv in self._groups:
                    X[I.reshape(-1)] = np.matmul(inv, B2[I]).reshape(-1, B2.shape[1])
                return X[:, 0] if one else X
            X = self._lu.solve(B2)
            return X[:, 0] if one else X
        X = np.zeros_like(B2)
        R = B2 - self.A @ X
        bnorm = np.maximum(np.linalg.norm(B2, axis=0), 1e-300)
        Z = self._precondition(R)
        P = Z.copy()
        rz = np.einsum("ik,ik->k", R, Z)
        for _ in range(self.maxiter):
            if np.all(np.linalg.norm(R, axis=0) <= self.tol * bnorm):
                return X[:, 0] if one else X
            AP = self.A @ P
            denom = np.einsum("ik,ik->k", P, AP)
            alpha = np.where(denom != 0.0, rz / np.where(denom == 0, 1, denom), 0.0)
            X += alpha * P
            R -= alpha * AP
            Z = self._precondition(R)
            rz_new = np.einsum("ik,ik->k", R, Z)
            beta = np.where(rz != 0.0, rz_new / np.where(rz == 0, 1, rz), 0.0)
            P = Z + beta * P
            rz = rz_new
        res = np.linalg.norm(R, axis=0) / bnorm
        raise MassSolverError(f"CG stalled: max relative residual {res.max():.3e}")


def block_thomas_solve(D, Lo, Up, rhs):
    """Solve a batched block-tridiagonal system.

    D  (B, n, m, m) diagonal blocks, Lo (B, n-1, m, m) sub-diagonal
    (row k+1 <- col k), Up (B, n-1, m, m) super-diagonal (row k <- col k+1),
    rhs (B, n, m).  All batches solved simultaneously; contents untouched.
    """
    B, n, m, _ = D.shape
    Dw = D.copy()
    rw = rhs.copy()
    for k in range(1, n):
        W = np.linalg.solve(
            np.swapaxes(Dw[:, k - 1], -1, -2), np.swapaxes(Lo[:, k - 1], -1, -2)
        )
        W = np.swapaxes(W, -1, -2)  # W = Lo[k-1] @ inv(D[k-1])
        Dw[:, k] -= W @ Up[:, k - 1]
        rw[:, k] -= np.einsum("bij,bj->bi", W, rw[:, k - 1])
    out = np.empty_like(rw)
    out[:, n - 1] = np.linalg.solve(Dw[:, n - 1], rw[:, n - 1, :, None])[..., 0]
    for k in range(n - 2, -1, -1):
        r = rw[:, k] - np.einsum("bij,bj->bi", Up[:, k], out[:, k + 1])
        out[:, k] = np.linalg.solve(Dw[:, k], r[:, :, None])[..., 0]
    return out


class Spaces:
    """Basis/geometry tabulations and operator builders for one mesh.

    All per-element arrays index quadrature points q = i_xi * nq + i_eta and
    the local entity slots of the DOF numbering (x-located slots first).
    """

    def __init__(self, mesh, dofs, q=None, qv=2, mass_mode="direct", mass_tol=1e-12):
        p = dofs.p
        self.mesh = mesh
        self.dofs = dofs
        self.p = p
        self.q1 = p + 1 if q is None else q
        self.qv = qv
        self.mass_mode = mass_mode
        self.mass_tol = mass_tol

        geo = mesh.horizontal_tabs(self.q1)
        self.geo = geo
        self.W = geo["W"]            # (nq,)
        self.A = geo["A"]            # (nelem, nq)
        self.UP = geo["UP"]          # (nelem, nq, 3)
        self.T1, self.T2 = geo["T1"], geo["T2"]
        self.nq = self.W.size
        self.nelem = mesh.nelem

        # contravariant horizontal vectors and area-scale log-gradients
        self.a_xi = np.cross(self.T2, self.UP) / self.A[..., None]
        self.a_eta = np.cross(self.UP, self.T1) / self.A[..., None]
        self.dlnA_dxi, self.dlnA_deta = self._area_log_gradients(mesh, geo)

        nb = NodalBasis(p, q=self.q1)
        eb = EdgeBasis(nb)
        qn = geo["nodes"]
        Lq = nb.eval_all(qn)         # (q1, p+1)
        Eq = eb.eval_all(qn)         # (q1, p)
        dLq = nb.deriv_all(qn)
        # edge-basis derivative from the cumulative Lagrange form
        dEq = -np.cumsum(self._lagrange_second_deriv(nb, qn)[:, :-1], axis=1)

        # scalar tabs: face (Q / U-perp horizontal), nodal (W-perp horizontal)
        self.Eq2 = np.einsum("qa,rb->qrba", Eq, Eq).reshape(self.nq, p * p)
        self.Ln2 = np.einsum("qa,rb->qrba", Lq, Lq).reshape(self.nq, (p + 1) ** 2)
        self.dEq2_dxi = np.einsum("qa,rb->qrba", dEq, Eq).reshape(self.nq, p * p)
        self.dEq2_deta = np.einsum("qa,rb->qrba", Eq, dEq).reshape(self.nq, p * p)

        # U-par physical (unnormalized) basis vectors per local entity slot
        nx = p * (p + 1)
        self.nloc_ed = 2 * nx
        Bx = np.einsum("qa,rb->qrba", Eq, Lq).reshape(self.nq, nx)  # x-located: e(xi) l(eta)
        By = np.einsum("qa,rb->qrba", Lq, Eq).reshape(self.nq, nx)  # y-located: l(xi) e(eta)
        self.Bvec = np.empty((self.nelem, self.nq, self.nloc_ed, 3))
        self.Bvec[:, :, :nx, :] = self.T2[:, :, None, :] * Bx[None, :, :, None]
        self.Bvec[:, :, nx:, :] = self.T1[:, :, None, :] * By[None, :, :, None]
        # GEMM layouts: (nelem, nloc, nq*3) and its transpose
        self._Bmat = np.ascontiguousarray(
            self.Bvec.transpose(0, 2, 1, 3).reshape(self.nelem, self.nloc_ed, self.nq * 3))
        self._BmatT = np.ascontiguousarray(self._Bmat.transpose(0, 2, 1))

        # gathers
        self.ed_idx = dofs.ed_idx
        self.flux_sgn = dofs.flux_sgn.astype(float)
        self.tan_sgn = dofs.tan_sgn.astype(float)
        self.nod_idx = dofs.nod_idx
        self._ed_flat = self.ed_idx.reshape(-1)
        self._nod_flat = self.nod_idx.reshape(-1)

        # incidence (2D restrictions)
        self.Ddiv = dofs.Ddiv2.astype(float).tocsr()
        self.DdivT = self.Ddiv.T.tocsr()
        self.Drot = dofs.Drot2.astype(float).tocsr()
        self.DrotT = self.Drot.T.tocsr()

        # unweighted horizontal matrices
        Mblk = np.einsum("eqad,eqbd,eq->eab", self.Bvec, self.Bvec, self.W / self.A)
        self.M2dU = self._assemble_edge(Mblk)
        Wblk = np.einsum("qa,qb,eq->eab", self.Ln2, self.Ln2, self.W * self.A)
        self.M2dW = self._assemble_nodal(Wblk)
        self.H = np.einsum("qa,qb,eq->eab", self.Eq2, self.Eq2, self.W / self.A)
        self.Hinv = np.linalg.inv(self.H)

        self.solver_U = MassSolver(self.M2dU, self.ed_idx, mass_mode, mass_tol)
        self.solver_W = MassSolver(self.M2dW, self.nod_idx, mass_mode, mass_tol)

        # vertical rule and layer scales
        self.zq, self.zw = gll_quadrature(qv)
        self.dz = mesh.dz
        self.zz = 0.5 * mesh.dz                     # z_zeta per layer
        self.nlayers = mesh.nlayers
        # interface lumped thickness d_k = integral of hat_k * z_zeta
        lv = np.stack([(1 - self.zq) / 2, (1 + self.zq) / 2], axis=1)  # (qv, 2)
        self.Vdiag = np.zeros(self.nlayers + 1)
        self.Vhat = np.einsum("qa,qb,q->ab", lv, lv, self.zw)  # per unit z_zeta
        for m in range(self.nlayers):
            self.Vdiag[m] += self.Vhat[0, 0] * self.zz[m]
            self.Vdiag[m + 1] += self.Vhat[1, 1] * self.zz[m]
        if abs(self.Vhat[0, 1]) > 1e-14 and qv == 2:
            raise AssertionError("collocated vertical rule should be lumped")
        self._lv = lv

    @staticmethod
    def _area_log_gradients(mesh, geo, h=1e-6):
        """d ln A / d(xi, eta) at qp, by chart differencing at setup time."""
        xi, eta = geo["xi"], geo["eta"]
        nelem, nq = mesh.nelem, xi.size
        out = np.empty((2, nelem, nq))
        for e in range(nelem):
            for axis, (dx, de) in enumerate(((h, 0.0), (0.0, h))):
                _, t1p, t2p, _ = mesh._chart_point(e, xi + dx, eta + de)
                _, t1m, t2m, _ = mesh._chart_point(e, xi - dx, eta - de)
                Ap = np.linalg.norm(np.cross(t1p, t2p), axis=-1)
                Am = np.linalg.norm(np.cross(t1m, t2m), axis=-1)
                out[axis, e] = (np.log(Ap) - np.log(Am)) / (2 * h)
        return out[0], out[1]

    @staticmethod
    def _lagrange_second_deriv(nb, x):
        import numpy.polynomial.polynomial as nppoly

        n = len(nb.nodes)
        out = np.empty((len(x), n))
        for i in range(n):
            c = np.zeros(n)
            c[i] = 1.0
            poly = nppoly.Polynomial(nppoly.polyfit(nb.nodes, c, n - 1)).deriv(2)
            out[:, i] = poly(x)
        return out

    # -- gathers ----------------------------------------------------------

    def gather_flux(self, u):
        """(.., n_ed) global U-par field -> (.., nelem, nloc) local coefficients."""
        return u[..., self.ed_idx] * self.flux_sgn

    def scatter_flux(self, loc):
        return self._scatter(loc * self.flux_sgn, self._ed_flat, self.dofs.n_ed)

    def gather_nod(self, w):
        return w[..., self.nod_idx]

    def scatter_nod(self, loc):
        return self._scatter(loc, self._nod_flat, self.dofs.n_nod)

    @staticmethod
    def _scatter(vals, flat_idx, n):
        lead = vals.shape[:-2]
        flat = vals.reshape(-1, vals.shape[-2] * vals.shape[-1])
        out = np.empty((flat.shape[0], n))
        for b in range(flat.shape[0]):
            out[b] = np.bincount(flat_idx, weights=flat[b], minlength=n)
        return out.reshape(lead + (n,)) if lead else out[0]

    def _assemble_edge(self, blocks):
        idx = self.ed_idx
        sgn = self.flux_sgn
        rows = np.repeat(idx[:, :, None], idx.shape[1], axis=2)
        cols = np.repeat(idx[:, None, :], idx.shape[1], axis=1)
        vals = sgn[:, :, None] * sgn[:, None, :] * blocks
        n = self.dofs.n_ed
        return sp.coo_matrix((vals.reshape(-1), (rows.reshape(-1), cols.reshape(-1))),
                             shape=(n, n)).tocsr()

    def _assemble_nodal(self, blocks):
        idx = self.nod_idx
        rows = np.repeat(idx[:, :, None], idx.shape[1], axis=2)
        cols = np.repeat(idx[:, None, :], idx.shape[1], axis=1)
        n = self.dofs.n_nod
        return sp.coo_matrix((blocks.reshape(-1), (rows.reshape(-1), cols.reshape(-1))),
                             shape=(n, n)).tocsr()

    # -- pointwise field values at quadrature points ----------------------

    def face_ref(self, fhat):
        """Reference expansion of a face-space field: (.., nelem, p^2) -> values."""
        return np.einsum("qm,...em->...eq", self.Eq2, fhat)

    def q_phys(self, fhat, layer):
        """Physical values of a Q field (includes the 1/det Piola factor)."""
        return self.face_ref(fhat) * (0.5 / (self.A * self.zz[layer]))

    def uperp_phys(self, what):
        """Physical w at an interface from U-perp coefficients (one interface)."""
        return self.face_ref(what) / self.A

    def wperp_phys(self, omhat, layer):
        """Physical value of a W-perp field (vertical component)."""
        loc = self.gather_nod(omhat)
        return np.einsum("qm,...em->...eq", self.Ln2, loc) * (0.5 / self.zz[layer])

    def upar_vec(self, u):
        """Unnormalized Sum(coef * B) at qp: multiply by 0.5/(A z_zeta) for physical."""
        if u.ndim == 2:
            return self.upar_vec_layers(u)
        return self.upar_vec_layers(u[None])[0]

    def project_edge_layers(self, v):
        """<v, B_a> per element for a (L, nelem, nq, 3) integrand (weights folded)."""
        L = v.shape[0]
        return np.matmul(v.transpose(1, 0, 2, 3).reshape(self.nelem, L, -1),
                         self._BmatT).transpose(1, 0, 2)

    def upar_phys(self, u, layer):
        return self.upar_vec(u) * (0.5 / (self.A * self.zz[layer]))[..., None]

    # -- layer operator applications --------------------------------------

    def apply_M_Upar(self, u, layer):
        return (0.5 / self.zz[layer]) * (self.M2dU @ u)

    def solve_M_Upar(self, rhs, layer_scale):
        """Solve M^{U-par} x = rhs with per-column layer scales folded in."""
        return self.solver_U.solve(rhs) * (2.0 * layer_scale)

    def edge_blocks(self, qp_weight):
        """Per-element U-par blocks with a quadrature-point scalar weight."""
        return np.einsum("eqad,eqbd,eq->eab", self.Bvec, self.Bvec,
                         self.W * qp_weight / self.A)

    def apply_edge_blocks(self, blocks, u):
        loc = self.gather_flux(u)
        return self.scatter_flux(np.einsum("eab,...eb->...ea", blocks, loc))

    def apply_weighted_edge(self, u, qp_weight):
        """Matrix-free weighted U-par mass action: <w u, eps_a> per element."""
        uvec = self.upar_vec(u)
        y = np.einsum("eqad,eqd->ea", self.Bvec,
                      uvec * (self.W * qp_weight / self.A)[..., None])
        return self.scatter_flux(y)

    def apply_weighted_edge_layers(self, u, qp_weight):
        """Batched over layers: u (L, n_ed), qp_weight (L, nelem, nq)."""
        uvec = self.upar_vec_layers(u)
        v = uvec * (qp_weight * (self.W / self.A))[..., None]
        L = u.shape[0]
        y = np.matmul(v.transpose(1, 0, 2, 3).reshape(self.nelem, L, -1),
                      self._BmatT).transpose(1, 0, 2)
        return self.scatter_flux(y)

    def upar_vec_layers(self, u):
        """(L, n_ed) -> (L, nelem, nq, 3) via batched matmul."""
        loc = self.gather_flux(u)                              # (L, ne, m)
        out = np.matmul(loc.transpose(1, 0, 2), self._Bmat)    # (ne, L, nq*3)
        return out.reshape(self.nelem, u.shape[0], self.nq, 3).transpose(1, 0, 2, 3)

    def kinetic_moments_layers(self, u):
        """Q moments of half |u_par|^2 for all layers at once: (L, nelem, p2)."""
        vec = self.upar_vec_layers(u) * (0.5 / (self.A[None, :, :, None]
                                                * self.zz[:, None, None, None]))
        ke = 0.5 * (vec * vec).sum(-1)
        return (ke * self.W) @ self.Eq2

    def rot_blocks(self, vort_qp):
        """Rotational blocks <v (up x e_b), e_a>, antisymmetric by construction."""
        CxB = np.cross(self.UP[:, :, None, :], self.Bvec)
        return np.einsum("eqad,eqbd,eq->eab", self.Bvec, CxB,
                         self.W * vort_qp / self.A)

    def kinetic_moments(self, u, layer):
        """Q-space moments of half |u_par|^2 for one layer: (nelem, p^2)."""
        vec = self.upar_phys(u, layer)
        ke = 0.5 * (vec * vec).sum(-1)
        return np.einsum("q,eq,qm->em", self.W, ke, self.Eq2)

    def face_moments(self, qp_values):
        """Q-space moments of pointwise values that are constant in zeta."""
        return np.einsum("q,...eq,qm->...em", self.W, qp_values, self.Eq2)

    def weighted_face_blocks(self, qp_weight):
        """Blocks <w e_b, e_a> over Q x Q with 1/A^2-weighted edge products."""
        return np.einsum("qa,qb,eq->eab", self.Eq2, self.Eq2, self.W * qp_weight)
