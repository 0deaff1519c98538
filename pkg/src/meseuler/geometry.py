"""Physical domains: equiangular gnomonic cubed sphere and doubly periodic plane.

Horizontal charts are right-handed with respect to the outward vertical, so
the orientation rules of the DOF numbering hold on every panel.  All metric
quantities used in assembly are frame-free (tangent vectors, their Gram
matrix, and the area scale), which keeps panel corners regular even though
the lon-lat chart is singular there; lon/lat appear only in outputs.
"""

import numpy as np

from .basis import NodalBasis, gll_quadrature
from .derham import HorizontalTopology, plane_topology

__all__ = ["Mesh", "cubed_sphere_mesh", "plane_mesh", "metric_factor"]

# panel frames (normal, alpha-axis, beta-axis); a1 x a2 = n on every panel
_PANELS = (
    ((1, 0, 0), (0, 1, 0), (0, 0, 1)),
    ((0, 1, 0), (-1, 0, 0), (0, 0, 1)),
    ((-1, 0, 0), (0, -1, 0), (0, 0, 1)),
    ((0, -1, 0), (1, 0, 0), (0, 0, 1)),
    ((0, 0, 1), (0, 1, 0), (-1, 0, 0)),
    ((0, 0, -1), (0, 1, 0), (1, 0, 0)),
)


class Mesh:
    """Horizontal quad mesh plus flat vertical layers.

    backend       "cubed_sphere" or "plane"
    topo          HorizontalTopology (edges, orientation data)
    elem_rect     per element, chart rectangle: (panel, a0, a1, b0, b1) on the
                  sphere (equiangular coordinates) or (-1, x0, x1, y0, y1)
    z_interfaces  z_0 = 0 < ... < z_L = z_top in meters
    """

    def __init__(self, backend, topo, elem_rect, z_interfaces, radius=None):
        self.backend = backend
        self.topo = topo
        self.elem_rect = np.asarray(elem_rect, dtype=float)
        self.z_interfaces = np.asarray(z_interfaces, dtype=float)
        if self.z_interfaces[0] != 0.0:
            raise ValueError("bottom interface must sit at z = 0")
        if np.any(np.diff(self.z_interfaces) <= 0):
            raise ValueError("layer interfaces must increase strictly")
        self.radius = radius
        self.nlayers = len(self.z_interfaces) - 1
        self.dz = np.diff(self.z_interfaces)

    @property
    def nelem(self):
        return self.topo.nelem

    @property
    def z_top(self):
        return self.z_interfaces[-1]

    # -- point maps ------------------------------------------------------

    def _chart_point(self, elem, xi, eta):
        """3D position (sphere: on radius-r shell; plane: z=0) and tangents."""
        rect = self.elem_rect[int(elem)]
        if self.backend == "plane":
            _, x0, x1, y0, y1 = rect
            x = x0 + 0.5 * (xi + 1.0) * (x1 - x0)
            y = y0 + 0.5 * (eta + 1.0) * (y1 - y0)
            pos = np.stack([x, y, np.zeros_like(x)], axis=-1)
            t1 = np.zeros_like(pos)
            t2 = np.zeros_like(pos)
            t1[..., 0] = 0.5 * (x1 - x0)
            t2[..., 1] = 0.5 * (y1 - y0)
            up = np.zeros_like(pos)
            up[..., 2] = 1.0
            return pos, t1, t2, up
        panel, a0, a1, b0, b1 = rect
        n, e1, e2 = (np.array(v, dtype=float) for v in _PANELS[int(panel)])
        alpha = a0 + 0.5 * (xi + 1.0) * (a1 - a0)
        beta = b0 + 0.5 * (eta + 1.0) * (b1 - b0)
        X, Y = np.tan(alpha), np.tan(beta)
        v = n + X[..., None] * e1 + Y[..., None] * e2
        nv = np.linalg.norm(v, axis=-1)
        rhat = v / nv[..., None]
        dX = (1.0 + X**2) * 0.5 * (a1 - a0)
        dY = (1.0 + Y**2) * 0.5 * (b1 - b0)
        d_dX = (e1 - rhat * (rhat @ e1)[..., None]) / nv[..., None]
        d_dY = (e2 - rhat * (rhat @ e2)[..., None]) / nv[..., None]
        t1 = self.radius * d_dX * dX[..., None]
        t2 = self.radius * d_dY * dY[..., None]
        return self.radius * rhat, t1, t2, rhat

    def map_point(self, elem, xi, eta, zeta, layer=None):
        """Map local coordinates to (lon, lat, z) or (x, y, z)."""
        xi, eta, zeta = (np.asarray(c, dtype=float) for c in (xi, eta, zeta))
        if np.any(np.abs(xi) > 1 + 1e-12) or np.any(np.abs(eta) > 1 + 1e-12) or np.any(np.abs(zeta) > 1 + 1e-12):
            raise ValueError("local coordinates must lie in [-1, 1]^3")
        if not 0 <= int(elem) < self.nelem:
            raise IndexError(f"element {elem} out of range")
        pos, _, _, _ = self._chart_point(elem, xi, eta)
        if layer is None:
            layer = 0
        z = self.z_interfaces[layer] + 0.5 * (zeta + 1.0) * self.dz[layer]
        if self.backend == "plane":
            return pos[..., 0], pos[..., 1], z
        lon = np.arctan2(pos[..., 1], pos[..., 0])
        lat = np.arcsin(np.clip(pos[..., 2] / self.radius, -1.0, 1.0))
        return lon, lat, z

    def jacobian(self, elem, xi, eta, zeta, layer=0):
        """3x3 Jacobian in an (east, north, up) frame, and its determinant.

        Block structure [[J_h, 0], [0, z_zeta]]; J_h expressed in the
        east-north frame (undefined exactly at the poles).
        """
        pos, t1, t2, _ = self._chart_point(elem, np.asarray(xi, float), np.asarray(eta, float))
        if self.backend == "plane":
            east = np.array([1.0, 0.0, 0.0])
            north = np.array([0.0, 1.0, 0.0])
            e, n = np.broadcast_to(east, t1.shape), np.broadcast_to(north, t1.shape)
        else:
            rhat = pos / np.linalg.norm(pos, axis=-1, keepdims=True)
            lon = np.arctan2(rhat[..., 1], rhat[..., 0])
            e = np.stack([-np.sin(lon), np.cos(lon), np.zeros_like(lon)], axis=-1)
            n = np.cross(rhat, e)
        zz = 0.5 * self.dz[layer]
        J = np.zeros(t1.shape[:-1] + (3, 3))
        J[..., 0, 0] = (t1 * e).sum(-1)
        J[..., 0, 1] = (t2 * e).sum(-1)
        J[..., 1, 0] = (t1 * n).sum(-1)
        J[..., 1, 1] = (t2 * n).sum(-1)
        J[..., 2, 2] = zz
        det = (J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]) * zz
        return J, det

    # -- quadrature-point geometry for assembly --------------------------

    def horizontal_tabs(self, q):
        """Frame-free geometry at the q x q tensor GLL points of every element.

        Returns dict with T1, T2 (nelem, nq, 3), area scale A (nelem, nq),
        radial unit UP (nelem, nq, 3), quadrature weights W (nq,), and the
        1D rule (nodes, weights).
        """
        qn, qw = gll_quadrature(q)
        XI, ETA = np.meshgrid(qn, qn, indexing="ij")  # i fastest convention: [i, j]
        xi = XI.reshape(-1)
        eta = ETA.reshape(-1)
        W = np.outer(qw, qw).reshape(-1)
        T1 = np.empty((self.nelem, xi.size, 3))
        T2 = np.empty_like(T1)
        UP = np.empty_like(T1)
        POS = np.empty_like(T1)
        for e in range(self.nelem):
            pos, t1, t2, up = self._chart_point(e, xi, eta)
            T1[e], T2[e], UP[e], POS[e] = t1, t2, up, pos
        A = np.linalg.norm(np.cross(T1, T2), axis=-1)
        if np.any(A <= 0):
            raise ValueError("degenerate horizontal map: nonpositive area scale")
        return {"T1": T1, "T2": T2, "A": A, "UP": UP, "POS": POS,
                "W": W, "nodes": qn, "weights": qw, "xi": xi, "eta": eta}


def metric_factor(mesh, space, elem, xi, eta, zeta=0.0, layer=0):
    """Per-space metric factors of the Piola transforms.

    space in {"Wpar", "Wperp", "Upar", "Uperp", "Q", "UperpQ"}; the vector
    spaces return symmetric 2x2 matrices, the rest scalars.
    """
    J, det = mesh.jacobian(elem, xi, eta, zeta, layer)
    Jh = J[..., :2, :2]
    zz = J[..., 2, 2]
    deth = Jh[..., 0, 0] * Jh[..., 1, 1] - Jh[..., 0, 1] * Jh[..., 1, 0]
    G = np.swapaxes(Jh, -1, -2) @ Jh
    if space == "Wpar":
        adj = np.empty_like(G)
        adj[..., 0, 0] = G[..., 1, 1]
        adj[..., 1, 1] = G[..., 0, 0]
        adj[..., 0, 1] = -G[..., 0, 1]
        adj[..., 1, 0] = -G[..., 1, 0]
        return adj / (deth**2)[..., None, None]
    if space == "Wperp":
        return 1.0 / zz**2
    if space == "Upar":
        return G / (det**2)[..., None, None]
    if space == "Uperp":
        return 1.0 / deth**2
    if space == "Q":
        return 1.0 / det**2
    if space == "UperpQ":
        return 1.0 / (zz * deth**2)
    raise KeyError(f"unknown space tag {space!r}")


def cubed_sphere_mesh(ne, p, nlevels, z_top, radius=6.37122e6, reduction=1.0,
                      z_interfaces=None):
    """Equiangular cubed sphere: 6 panels of ne x ne elements."""
    if ne < 1:
        raise ValueError("need at least one element per panel direction")
    if reduction < 1.0:
        raise ValueError("radius reduction factor must be >= 1")
    r = radius / reduction
    angles = np.linspace(-np.pi / 4, np.pi / 4, ne + 1)
    X = np.tan(angles)
    # global vertices by dedupe of rounded unit positions
    vid = {}
    verts = []

    def vertex(panel, i, j):
        n, e1, e2 = (np.array(v, dtype=float) for v in _PANELS[panel])
        v = n + X[i] * e1 + X[j] * e2
        v = v / np.linalg.norm(v)
        key = tuple(np.round(v * 1e9).astype(np.int64))
        if key not in vid:
            vid[key] = len(verts)
            verts.append(v)
        return vid[key]

    elems = []
    rects = []
    for panel in range(6):
        for j in range(ne):
            for i in range(ne):
                elems.append([vertex(panel, i, j), vertex(panel, i + 1, j),
                              vertex(panel, i + 1, j + 1), vertex(panel, i, j + 1)])
                rects.append((panel, angles[i], angles[i + 1], angles[j], angles[j + 1]))
    topo = HorizontalTopology(np.array(elems), len(verts))
    if z_interfaces is None:
        z_interfaces = np.linspace(0.0, z_top, nlevels + 1)
    mesh = Mesh("cubed_sphere", topo, rects, z_interfaces, radius=r)
    mesh.p = p
    return mesh


def plane_mesh(nx, ny, p, nlevels, z_top, Lx=1.0e6, Ly=1.0e6, z_interfaces=None):
    """Doubly periodic Cartesian plane of nx x ny elements."""
    topo = plane_topology(nx, ny)
    rects = []
    dx, dy = Lx / nx, Ly / ny
    for j in range(ny):
        for i in range(nx):
            rects.append((-1, i * dx, (i + 1) * dx, j * dy, (j + 1) * dy))
    if z_interfaces is None:
        z_interfaces = np.linspace(0.0, z_top, nlevels + 1)
    mesh = Mesh("plane", topo, rects, z_interfaces)
    mesh.p = p
    mesh.Lx, mesh.Ly = Lx, Ly
    return mesh
