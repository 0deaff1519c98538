"""Tensor-product de Rham spaces P, W, U, Q and their integer incidence matrices.

Space layout on one hexahedral element of horizontal degree ph, vertical pv
(0-based flat index m, x fastest, z slowest):

    P : l_i l_j l_k                           m = i + j(ph+1) + k(ph+1)^2
    W : x  e_i l_j l_k   i=1..ph              m = (i-1) + j ph + k ph(ph+1)
        y  l_i e_j l_k   j=1..ph              m = i + (j-1)(ph+1) + k ph(ph+1) + off
        z  l_i l_j e_k   k=1..pv  (W-perp)
    U : x  l_i e_j e_k   j,k>=1               (U-par, then y, then z = U-perp)
        y  e_i l_j e_k
        z  e_i e_j l_k
    Q : e_i e_j e_k

Global (multi-element) degrees of freedom are entity-based: horizontal
vertex/edge/face entities tensored with vertical nodes/segments.  Horizontal
edge DOFs carry a tangent t (the edge's stored vertex order; element axes for
element-interior entities) and a flux direction n = z x t.  Element-local
coefficients relate to global ones through per-element index/sign gathers.
"""

import numpy as np
import scipy.sparse as sp

__all__ = [
    "SpaceDims",
    "space_dims",
    "local_incidence",
    "IncidenceSet",
    "xz_incidence",
    "HorizontalTopology",
    "HorizontalDofs",
    "Complex3D",
    "plane_topology",
    "dump_triplets",
]

SIDE_CORNERS = ((0, 1), (1, 2), (3, 2), (0, 3))  # S, E, N, W along local tangent
SIDE_FLUX_FAC = (1, -1, 1, -1)  # n_local . (z x t_local): +1 on S/N, -1 on E/W


class SpaceDims:
    """DOF counts of the four spaces and their horizontal/vertical splits."""

    def __init__(self, ph, pv):
        if ph < 1 or pv < 1:
            raise ValueError("polynomial degrees must be >= 1")
        self.ph, self.pv = ph, pv
        hp, vp = ph + 1, pv + 1
        self.dP = hp * hp * vp
        self.dWpar = 2 * ph * hp * vp
        self.dWperp = hp * hp * pv
        self.dW = self.dWpar + self.dWperp
        self.dUpar = 2 * hp * ph * pv
        self.dUperp = ph * ph * vp
        self.dU = self.dUpar + self.dUperp
        self.dQ = ph * ph * pv


def space_dims(ph, pv=None):
    return SpaceDims(ph, ph if pv is None else pv)


def _diff1d(n):
    """1D incidence (n x n+1): row i maps nodal f to f[i+1] - f[i]."""
    return sp.diags([-np.ones(n), np.ones(n)], [0, 1], shape=(n, n + 1), dtype=np.int64).tocsr()


def _kron3(az, ay, ax):
    return sp.kron(az, sp.kron(ay, ax, format="csr"), format="csr")


class IncidenceSet:
    """Integer incidence matrices of one grid, with their par/perp block views."""

    def __init__(self, dims, E10, E21, E32):
        self.dims = dims
        self.E10, self.E21, self.E32 = E10, E21, E32

    @property
    def E10_par(self):
        return self.E10[: self.dims.dWpar, :]

    @property
    def E10_perp(self):
        return self.E10[self.dims.dWpar :, :]

    @property
    def E21_parpar(self):
        return self.E21[: self.dims.dUpar, : self.dims.dWpar]

    @property
    def E21_parperp(self):
        return self.E21[: self.dims.dUpar, self.dims.dWpar :]

    @property
    def E21_perp(self):
        return self.E21[self.dims.dUpar :, : self.dims.dWpar]

    @property
    def E21_perpperp(self):
        return self.E21[self.dims.dUpar :, self.dims.dWpar :]

    @property
    def E32_par(self):
        return self.E32[:, : self.dims.dUpar]

    @property
    def E32_perp(self):
        return self.E32[:, self.dims.dUpar :]

    _BLOCKS = (
        "E10", "E21", "E32", "E10_par", "E10_perp",
        "E21_parpar", "E21_parperp", "E21_perp",
        "E32_par", "E32_perp",
    )

    def apply(self, block, vec):
        """Apply a named incidence block to a coefficient vector."""
        if block not in self._BLOCKS:
            raise KeyError(f"unknown incidence block {block!r}")
        mat = getattr(self, block)
        vec = np.asarray(vec)
        if vec.shape[-1] != mat.shape[1]:
            raise ValueError(
                f"{block} expects length {mat.shape[1]}, got {vec.shape[-1]}"
            )
        return mat @ vec


def local_incidence(ph, pv=None):
    """Incidence matrices of a single reference element (paper DOF ordering)."""
    dims = space_dims(ph, pv)
    ph, pv = dims.ph, dims.pv
    hp, vp = ph + 1, pv + 1
    Dx, Dy, Dz = _diff1d(ph), _diff1d(ph), _diff1d(pv)
    Ix_n, Iy_n, Iz_n = sp.identity(hp, dtype=np.int64), sp.identity(hp, dtype=np.int64), sp.identity(vp, dtype=np.int64)
    Ix_e, Iy_e, Iz_e = sp.identity(ph, dtype=np.int64), sp.identity(ph, dtype=np.int64), sp.identity(pv, dtype=np.int64)

    # gradient: (Wx, Wy, Wz) <- P
    E10 = sp.vstack([
        _kron3(Iz_n, Iy_n, Dx),
        _kron3(Iz_n, Dy, Ix_n),
        _kron3(Dz, Iy_n, Ix_n),
    ], format="csr")

    # curl: rows (Ux, Uy, Uz), cols (Wx, Wy, Wz)
    zUxWx = sp.csr_matrix((hp * ph * pv, ph * hp * vp), dtype=np.int64)
    zUyWy = sp.csr_matrix((ph * hp * pv, hp * ph * vp), dtype=np.int64)
    zUzWz = sp.csr_matrix((ph * ph * vp, hp * hp * pv), dtype=np.int64)
    E21 = sp.bmat([
        [zUxWx, -_kron3(Dz, Iy_e, Ix_n), _kron3(Iz_e, Dy, Ix_n)],
        [_kron3(Dz, Iy_n, Ix_e), zUyWy, -_kron3(Iz_e, Iy_n, Dx)],
        [-_kron3(Iz_n, Dy, Ix_e), _kron3(Iz_n, Iy_e, Dx), zUzWz],
    ], format="csr")

    # divergence: Q <- (Ux, Uy, Uz)
    E32 = sp.hstack([
        _kron3(Iz_e, Iy_e, Dx),
        _kron3(Iz_e, Dy, Ix_e),
        _kron3(Dz, Iy_e, Ix_e),
    ], format="csr")
    return IncidenceSet(dims, E10, E21, E32)


def xz_incidence(nx, nz):
    """2D x-z incidence matrices on an nx-by-nz cell grid, x-major ordering.

    Nodes/edges/cells are numbered with the z index fastest and x slowest, the
    layout of the 2D example grid (gradient/curl/divergence on the 3x3-node
    mesh).  Returns (E10, E21, E32) with the par (x) blocks leading.
    """
    Dx, Dz = _diff1d(nx), _diff1d(nz)
    Ixn = sp.identity(nx + 1, dtype=np.int64)
    Ixe = sp.identity(nx, dtype=np.int64)
    Izn = sp.identity(nz + 1, dtype=np.int64)
    Ize = sp.identity(nz, dtype=np.int64)
    # x-major: kron(x-part, z-part)
    E10 = sp.vstack([sp.kron(Dx, Izn), sp.kron(Ixn, Dz)], format="csr")
    E21 = sp.hstack([-sp.kron(Ixe, Dz), sp.kron(Dx, Ize)], format="csr")
    E32 = sp.hstack([sp.kron(Dx, Ize), sp.kron(Ixe, Dz)], format="csr")
    return E10.astype(np.int64), E21.astype(np.int64), E32.astype(np.int64)


class HorizontalTopology:
    """Quad-mesh connectivity: elements, global edges, per-side orientation."""

    def __init__(self, elem_verts, n_verts):
        elem_verts = np.asarray(elem_verts, dtype=np.int64)
        if elem_verts.ndim != 2 or elem_verts.shape[1] != 4 or len(elem_verts) == 0:
            raise ValueError("element array must be (nelem, 4) and non-empty")
        self.elem_verts = elem_verts
        self.nelem = len(elem_verts)
        self.n_verts = int(n_verts)
        edge_ids = {}
        edges = []
        self.elem_edges = np.empty((self.nelem, 4), dtype=np.int64)
        self.elem_rev = np.zeros((self.nelem, 4), dtype=bool)
        for e in range(self.nelem):
            c = elem_verts[e]
            for s, (a, b) in enumerate(SIDE_CORNERS):
                va, vb = int(c[a]), int(c[b])
                key = (min(va, vb), max(va, vb))
                if key not in edge_ids:
                    edge_ids[key] = len(edges)
                    edges.append((va, vb))
                eid = edge_ids[key]
                self.elem_edges[e, s] = eid
                self.elem_rev[e, s] = edges[eid] != (va, vb)
        self.edges = np.array(edges, dtype=np.int64)
        self.n_edges = len(edges)


def plane_topology(nx, ny):
    """Doubly periodic nx-by-ny quad grid."""
    if nx < 1 or ny < 1:
        raise ValueError("plane grid needs at least one element per direction")

    def vid(i, j):
        return (i % nx) + (j % ny) * nx

    elems = [
        [vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)]
        for j in range(ny)
        for i in range(nx)
    ]
    return HorizontalTopology(np.array(elems), nx * ny)


class HorizontalDofs:
    """Global DOF numbering of the four horizontal trace spaces on a quad mesh.

    Spaces: nodal (vertices+edge interiors+element interiors), edge DOFs
    (p per mesh edge plus element-interior x/y entities, shared by the
    tangential and flux interpretations), and face DOFs (p^2 per element,
    never shared).
    """

    def __init__(self, topo, p):
        self.topo = topo
        self.p = p
        ne, nv, ned = topo.nelem, topo.n_verts, topo.n_edges
        hp = p + 1

        self.n_nod = nv + ned * (p - 1) + ne * (p - 1) ** 2
        self.n_ed = ned * p + ne * 2 * p * (p - 1)
        self.n_fq = ne * p * p

        self.nod_idx = np.empty((ne, hp * hp), dtype=np.int64)
        self.ed_idx = np.empty((ne, 2 * p * hp), dtype=np.int64)
        self.tan_sgn = np.ones((ne, 2 * p * hp), dtype=np.int64)
        self.flux_sgn = np.ones((ne, 2 * p * hp), dtype=np.int64)
        self.fq_idx = (
            np.arange(ne * p * p, dtype=np.int64).reshape(ne, p * p)
        )

        edge_nod0 = nv
        elem_nod0 = nv + ned * (p - 1)
        elem_ed0 = ned * p

        def nod_local(i, j):
            return i + j * hp

        def edx_local(i, j):  # x-component: e_i l_j, i=1..p, j=0..p
            return (i - 1) + j * p

        def edy_local(i, j):  # y-component: l_i e_j, i=0..p, j=1..p
            return p * hp + i + (j - 1) * hp

        corner_local = (nod_local(0, 0), nod_local(p, 0), nod_local(p, p), nod_local(0, p))

        for e in range(ne):
            c = topo.elem_verts[e]
            # vertices
            for loc, v in zip(corner_local, c):
                self.nod_idx[e, loc] = v
            # mesh-edge entities: nodal interiors + p edge DOFs per side
            for s in range(4):
                eid = topo.elem_edges[e, s]
                rev = topo.elem_rev[e, s]
                # local node/edge positions along side s, traversal order = local tangent
                if s == 0:
                    nod_line = [nod_local(t, 0) for t in range(hp)]
                    ed_line = [edx_local(t, 0) for t in range(1, p + 1)]
                elif s == 1:
                    nod_line = [nod_local(p, t) for t in range(hp)]
                    ed_line = [edy_local(p, t) for t in range(1, p + 1)]
                elif s == 2:
                    nod_line = [nod_local(t, p) for t in range(hp)]
                    ed_line = [edx_local(t, p) for t in range(1, p + 1)]
                else:
                    nod_line = [nod_local(0, t) for t in range(hp)]
                    ed_line = [edy_local(0, t) for t in range(1, p + 1)]
                for t in range(1, p):
                    g = edge_nod0 + eid * (p - 1) + (t - 1 if not rev else p - 1 - t)
                    self.nod_idx[e, nod_line[t]] = g
                tau = -1 if rev else 1
                chi = tau * SIDE_FLUX_FAC[s]
                for m in range(1, p + 1):
                    sub = (m - 1) if not rev else (p - m)
                    g = eid * p + sub
                    self.ed_idx[e, ed_line[m - 1]] = g
                    self.tan_sgn[e, ed_line[m - 1]] = tau
                    self.flux_sgn[e, ed_line[m - 1]] = chi
            # element-interior nodal
            base = elem_nod0 + e * (p - 1) ** 2
            for j in range(1, p):
                for i in range(1, p):
                    self.nod_idx[e, nod_local(i, j)] = base + (i - 1) + (j - 1) * (p - 1)
            # element-interior edge DOFs: x-located (i=1..p, j=1..p-1), then y-located
            base = elem_ed0 + e * 2 * p * (p - 1)
            k = 0
            for j in range(1, p):
                for i in range(1, p + 1):
                    loc = edx_local(i, j)
                    self.ed_idx[e, loc] = base + k
                    self.tan_sgn[e, loc] = 1
                    self.flux_sgn[e, loc] = 1  # n = z x (+x) = +y = local axis
                    k += 1
            for j in range(1, p + 1):
                for i in range(1, p):
                    loc = edy_local(i, j)
                    self.ed_idx[e, loc] = base + k
                    self.tan_sgn[e, loc] = 1
                    self.flux_sgn[e, loc] = -1  # n = z x (+y) = -x
                    k += 1

        self._build_incidence()

    def _build_incidence(self):
        """Assemble grad (edge DOFs x nodal) and curl (faces x edge DOFs)."""
        p, hp = self.p, self.p + 1
        ne = self.topo.nelem
        # grad rows are owned by edge DOFs; write each global row once
        rows, cols, vals = [], [], []
        written = np.zeros(self.n_ed, dtype=bool)

        def nod_local(i, j):
            return i + j * hp

        for e in range(ne):
            for j in range(hp):
                for i in range(1, p + 1):
                    loc = (i - 1) + j * p
                    r = self.ed_idx[e, loc]
                    if written[r]:
                        continue
                    written[r] = True
                    tau = self.tan_sgn[e, loc]
                    rows += [r, r]
                    cols += [self.nod_idx[e, nod_local(i, j)], self.nod_idx[e, nod_local(i - 1, j)]]
                    vals += [tau, -tau]
            for j in range(1, p + 1):
                for i in range(hp):
                    loc = p * hp + i + (j - 1) * hp
                    r = self.ed_idx[e, loc]
                    if written[r]:
                        continue
                    written[r] = True
                    tau = self.tan_sgn[e, loc]
                    rows += [r, r]
                    cols += [self.nod_idx[e, nod_local(i, j)], self.nod_idx[e, nod_local(i, j - 1)]]
                    vals += [tau, -tau]
        self.Dgrad2 = sp.csr_matrix(
            (np.array(vals, dtype=np.int64), (rows, cols)), shape=(self.n_ed, self.n_nod)
        )

        rows, cols, vals = [], [], []
        for e in range(ne):
            for j in range(1, p + 1):
                for i in range(1, p + 1):
                    r = self.fq_idx[e, (i - 1) + (j - 1) * p]
                    # ccw circulation: +bottom +right -top -left
                    quads = (
                        ((i - 1) + (j - 1) * p, 1),            # Wx(i, j-1)
                        (p * hp + i + (j - 1) * hp, 1),        # Wy(i, j)
                        ((i - 1) + j * p, -1),                 # Wx(i, j)
                        (p * hp + (i - 1) + (j - 1) * hp, -1),  # Wy(i-1, j)
                    )
                    for loc, s in quads:
                        rows.append(r)
                        cols.append(self.ed_idx[e, loc])
                        vals.append(s * self.tan_sgn[e, loc])
        self.Dcurl2 = sp.csr_matrix(
            (np.array(vals, dtype=np.int64), (rows, cols)), shape=(self.n_fq, self.n_ed)
        )
        self.Ddiv2 = (-self.Dcurl2).tocsr()
        self.Drot2 = (-self.Dgrad2).tocsr()


def _vertical_diff(nl, pv):
    return _diff1d(nl * pv)


class Complex3D:
    """Assembled 3D complex: horizontal trace spaces tensored with nl layers."""

    def __init__(self, hdofs, nl, pv=1):
        if nl < 1:
            raise ValueError("grid needs at least one layer")
        self.h = hdofs
        self.nl, self.pv = nl, pv
        nvz = nl * pv + 1
        nez = nl * pv
        self.n_vz, self.n_ez = nvz, nez
        Ivn = sp.identity(nvz, dtype=np.int64)
        Ive = sp.identity(nez, dtype=np.int64)
        Dz = _vertical_diff(nl, pv)

        h = hdofs
        self.dP = h.n_nod * nvz
        self.dWpar = h.n_ed * nvz
        self.dWperp = h.n_nod * nez
        self.dW = self.dWpar + self.dWperp
        self.dUpar = h.n_ed * nez
        self.dUperp = h.n_fq * nvz
        self.dU = self.dUpar + self.dUperp
        self.dQ = h.n_fq * nez

        E10 = sp.vstack([
            sp.kron(h.Dgrad2, Ivn),
            sp.kron(sp.identity(h.n_nod, dtype=np.int64), Dz),
        ], format="csr")
        E21 = sp.bmat([
            [sp.kron(sp.identity(h.n_ed, dtype=np.int64), Dz), sp.kron(h.Drot2, Ive)],
            [sp.kron(h.Dcurl2, Ivn), None],
        ], format="csr")
        E32 = sp.hstack([
            sp.kron(h.Ddiv2, Ive),
            sp.kron(sp.identity(h.n_fq, dtype=np.int64), Dz),
        ], format="csr")

        class _D:  # dims view compatible with IncidenceSet blocks
            pass

        d = _D()
        d.dWpar, d.dWperp, d.dW = self.dWpar, self.dWperp, self.dW
        d.dUpar, d.dUperp, d.dU = self.dUpar, self.dUperp, self.dU
        d.dP, d.dQ = self.dP, self.dQ
        self.inc = IncidenceSet(d, E10.astype(np.int64), E21.astype(np.int64), E32.astype(np.int64))


def eval_local(ph, pv, space, coeffs, pts):
    """Evaluate a reference-element field from paper-ordered coefficients.

    pts is (n, 3) in [-1,1]^3; scalar spaces return (n,), vector spaces (n, 3)
    in reference components.
    """
    from .basis import EdgeBasis, NodalBasis

    dims = space_dims(ph, pv)
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if np.any(np.abs(pts) > 1 + 1e-12):
        raise ValueError("evaluation points must lie in [-1, 1]^3")
    nbh, nbv = NodalBasis(ph), NodalBasis(pv)
    ebh, ebv = EdgeBasis(nbh), EdgeBasis(nbv)
    lx, ly = nbh.eval_all(pts[:, 0]), nbh.eval_all(pts[:, 1])
    lz = nbv.eval_all(pts[:, 2])
    ex, ey = ebh.eval_all(pts[:, 0]), ebh.eval_all(pts[:, 1])
    ez = ebv.eval_all(pts[:, 2])

    def tens(a, b, c):
        return np.einsum("ni,nj,nk->nkji", a, b, c).reshape(len(pts), -1)

    c = np.asarray(coeffs, dtype=float)
    if space == "P":
        return tens(lx, ly, lz) @ c
    if space == "Q":
        return tens(ex, ey, ez) @ c
    if space == "W":
        nx = ph * (ph + 1) * (pv + 1)
        out = np.zeros((len(pts), 3))
        out[:, 0] = tens(ex, ly, lz) @ c[:nx]
        out[:, 1] = tens(lx, ey, lz) @ c[nx:2 * nx]
        out[:, 2] = tens(lx, ly, ez) @ c[2 * nx:]
        return out
    if space == "U":
        nu = (ph + 1) * ph * pv
        out = np.zeros((len(pts), 3))
        out[:, 0] = tens(lx, ey, ez) @ c[:nu]
        out[:, 1] = tens(ex, ly, ez) @ c[nu:2 * nu]
        out[:, 2] = tens(ex, ey, lz) @ c[2 * nu:]
        return out
    raise KeyError(f"unknown space {space!r}")


def project_local(ph, pv, space, fn, q=None):
    """Commuting projections onto the reference-element spaces.

    fn maps (x, y, z) arrays to a scalar (P, Q) or to a 3-tuple of components
    (W, U).  P: nodal values; W: sub-edge tangential line integrals; U:
    sub-face normal flux integrals; Q: sub-cell volume integrals, all with a
    q-point Gauss rule per direction (q defaults to max degree + 2).
    """
    from .basis import gll_nodes

    dims = space_dims(ph, pv)
    xh, xv = gll_nodes(ph), gll_nodes(pv)
    q = max(ph, pv) + 2 if q is None else q
    gx, gw = np.polynomial.legendre.leggauss(q)

    def seg(nodes, i):
        a, b = nodes[i - 1], nodes[i]
        return 0.5 * (b - a) * gx + 0.5 * (a + b), 0.5 * (b - a) * gw

    if space == "P":
        X, Y, Z = np.meshgrid(xh, xh, xv, indexing="ij")
        vals = fn(X, Y, Z)
        return np.transpose(vals, (2, 1, 0)).reshape(-1)

    if space == "Q":
        out = np.empty(dims.dQ)
        m = 0
        for k in range(1, pv + 1):
            zs, wz = seg(xv, k)
            for j in range(1, ph + 1):
                ys, wy = seg(xh, j)
                for i in range(1, ph + 1):
                    xs, wx = seg(xh, i)
                    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
                    Wt = wx[:, None, None] * wy[None, :, None] * wz[None, None, :]
                    out[(i - 1) + (j - 1) * ph + (k - 1) * ph * ph] = np.sum(fn(X, Y, Z) * Wt)
                    m += 1
        return out

    if space == "W":
        nx = ph * (ph + 1) * (pv + 1)
        out = np.empty(dims.dW)
        for k in range(pv + 1):
            for j in range(ph + 1):
                for i in range(1, ph + 1):
                    xs, wx = seg(xh, i)
                    v = fn(xs, np.full_like(xs, xh[j]), np.full_like(xs, xv[k]))[0]
                    out[(i - 1) + j * ph + k * ph * (ph + 1)] = np.sum(v * wx)
        for k in range(pv + 1):
            for j in range(1, ph + 1):
                ys, wy = seg(xh, j)
                for i in range(ph + 1):
                    v = fn(np.full_like(ys, xh[i]), ys, np.full_like(ys, xv[k]))[1]
                    out[nx + i + (j - 1) * (ph + 1) + k * ph * (ph + 1)] = np.sum(v * wy)
        for k in range(1, pv + 1):
            zs, wz = seg(xv, k)
            for j in range(ph + 1):
                for i in range(ph + 1):
                    v = fn(np.full_like(zs, xh[i]), np.full_like(zs, xh[j]), zs)[2]
                    out[2 * nx + i + j * (ph + 1) + (k - 1) * (ph + 1) ** 2] = np.sum(v * wz)
        return out

    if space == "U":
        nu = (ph + 1) * ph * pv
        out = np.empty(dims.dU)
        for k in range(1, pv + 1):
            zs, wz = seg(xv, k)
            for j in range(1, ph + 1):
                ys, wy = seg(xh, j)
                Y, Z = np.meshgrid(ys, zs, indexing="ij")
                Wt = wy[:, None] * wz[None, :]
                for i in range(ph + 1):
                    v = fn(np.full_like(Y, xh[i]), Y, Z)[0]
                    out[i + (j - 1) * (ph + 1) + (k - 1) * (ph + 1) * ph] = np.sum(v * Wt)
        for k in range(1, pv + 1):
            zs, wz = seg(xv, k)
            for i in range(1, ph + 1):
                xs, wx = seg(xh, i)
                X, Z = np.meshgrid(xs, zs, indexing="ij")
                Wt = wx[:, None] * wz[None, :]
                for j in range(ph + 1):
                    v = fn(X, np.full_like(X, xh[j]), Z)[1]
                    out[nu + (i - 1) + j * ph + (k - 1) * ph * (ph + 1)] = np.sum(v * Wt)
        for j in range(1, ph + 1):
            ys, wy = seg(xh, j)
            for i in range(1, ph + 1):
                xs, wx = seg(xh, i)
                X, Y = np.meshgrid(xs, ys, indexing="ij")
                Wt = wx[:, None] * wy[None, :]
                for k in range(pv + 1):
                    v = fn(X, Y, np.full_like(X, xv[k]))[2]
                    out[2 * nu + (i - 1) + (j - 1) * ph + k * ph * ph] = np.sum(v * Wt)
        return out
    raise KeyError(f"unknown space {space!r}")


def dump_triplets(matrix, path):
    """Write a sparse integer matrix as 'row col value' lines for diffing."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as f:
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            f.write(f"{r} {c} {v}\n")
