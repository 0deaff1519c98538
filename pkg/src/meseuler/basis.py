"""Gauss-Lobatto-Legendre nodes, nodal and edge (histopolant) bases on [-1, 1]."""

import numpy as np

__all__ = [
    "gll_nodes",
    "gll_quadrature",
    "legendre_deriv",
    "NodalBasis",
    "EdgeBasis",
    "diff_to_edge",
]

_NEWTON_TOL = 1e-15
_NEWTON_MAXIT = 100


def legendre_deriv(p, x):
    """Evaluate L_p(x), L_p'(x), L_p''(x) by the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    L0 = np.ones_like(x)
    L0_1 = np.zeros_like(x)
    L0_2 = np.zeros_like(x)
    if p == 0:
        return L0, L0_1, L0_2
    L1, L1_1, L1_2 = L0, L0_1, L0_2
    L0, L0_1, L0_2 = x.copy(), np.ones_like(x), np.zeros_like(x)
    for k in range(2, p + 1):
        a = (2 * k - 1) / k
        b = (k - 1) / k
        L2, L2_1, L2_2 = L1, L1_1, L1_2
        L1, L1_1, L1_2 = L0, L0_1, L0_2
        L0 = a * x * L1 - b * L2
        L0_1 = a * (L1 + x * L1_1) - b * L2_1
        L0_2 = a * (2 * L1_1 + x * L1_2) - b * L2_2
    return L0, L0_1, L0_2


def gll_nodes(p):
    """Return the p+1 Gauss-Lobatto-Legendre nodes, ascending, endpoints exact.

    Roots of (1 - x^2) L_p'(x), computed by Newton iteration on L_p' with
    Chebyshev-Gauss-Lobatto initial guesses; the endpoints are pinned to +-1.
    """
    if p < 1:
        raise ValueError(f"GLL node degree must be >= 1, got {p}")
    if p == 1:
        return np.array([-1.0, 1.0])
    x = -np.cos(np.pi * np.arange(1, p) / p)  # interior initial guesses
    for _ in range(_NEWTON_MAXIT):
        _, d1, d2 = legendre_deriv(p, x)
        dx = d1 / d2
        x = x - dx
        if np.max(np.abs(dx)) < _NEWTON_TOL:
            break
    nodes = np.empty(p + 1)
    nodes[0], nodes[-1] = -1.0, 1.0
    nodes[1:-1] = x
    # symmetrize so reflection identities hold exactly
    nodes[1:-1] = 0.5 * (nodes[1:-1] - nodes[-2:0:-1])
    return nodes


def gll_quadrature(q):
    """GLL quadrature with q points: exact for degree <= 2q-3.

    Weights w_i = 2 / (q (q-1) L_{q-1}(x_i)^2); they are positive and sum to 2.
    """
    if q < 2:
        raise ValueError(f"GLL quadrature needs q >= 2 points, got {q}")
    nodes = gll_nodes(q - 1)
    L, _, _ = legendre_deriv(q - 1, nodes)
    weights = 2.0 / (q * (q - 1) * L**2)
    return nodes, weights


def _lagrange_eval(nodes, x):
    """Values of all Lagrange polynomials on `nodes` at points `x`: (nx, p+1)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = len(nodes)
    out = np.ones((len(x), n))
    for i in range(n):
        for k in range(n):
            if k != i:
                out[:, i] *= (x - nodes[k]) / (nodes[i] - nodes[k])
    return out


def _lagrange_deriv_eval(nodes, x):
    """Derivatives of all Lagrange polynomials at points `x`: (nx, p+1)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = len(nodes)
    out = np.zeros((len(x), n))
    for i in range(n):
        denom = 1.0
        for k in range(n):
            if k != i:
                denom *= nodes[i] - nodes[k]
        for m in range(n):
            if m == i:
                continue
            term = np.ones(len(x))
            for k in range(n):
                if k != i and k != m:
                    term *= x - nodes[k]
            out[:, i] += term
        out[:, i] /= denom
    return out


class NodalBasis:
    """Degree-p Lagrange basis l_i on the GLL nodes, with its quadrature rule."""

    def __init__(self, p, q=None):
        if p < 1:
            raise ValueError(f"nodal basis degree must be >= 1, got {p}")
        self.p = p
        self.nodes = gll_nodes(p)
        q = p + 1 if q is None else q
        self.quad_nodes, self.quad_weights = gll_quadrature(q)

    def eval(self, i, x):
        """l_i^p(x) for a single index i."""
        if not 0 <= i <= self.p:
            raise IndexError(f"nodal index {i} outside 0..{self.p}")
        return self.eval_all(x)[..., i]

    def eval_all(self, x):
        """Values of every l_i at x: shape (..., p+1)."""
        scalar = np.isscalar(x)
        out = _lagrange_eval(self.nodes, x)
        return out[0] if scalar else out

    def deriv_all(self, x):
        """Values of every dl_i/dx at x: shape (..., p+1)."""
        scalar = np.isscalar(x)
        out = _lagrange_deriv_eval(self.nodes, x)
        return out[0] if scalar else out


class EdgeBasis:
    """Edge (histopolant) polynomials e_i = -sum_{k<i} dl_k/dx, i = 1..p.

    Degree p-1; the integral of e_i over [x_{j-1}, x_j] is the Kronecker delta.
    Evaluated through the differentiated Lagrange form, never stored monomials.
    """

    def __init__(self, nodal):
        self.p = nodal.p
        self.nodal = nodal
        self.nodes = nodal.nodes

    def eval(self, i, x):
        """e_i^p(x) for a single index i in 1..p."""
        if not 1 <= i <= self.p:
            raise IndexError(f"edge index {i} outside 1..{self.p}")
        return self.eval_all(x)[..., i - 1]

    def eval_all(self, x):
        """Values of every e_i at x: shape (..., p)."""
        scalar = np.isscalar(x)
        dl = _lagrange_deriv_eval(self.nodes, x)
        out = -np.cumsum(dl[:, :-1], axis=1)
        return out[0] if scalar else out


def diff_to_edge(q):
    """1D incidence action: nodal coefficients q_0..q_p -> edge g_i = q_i - q_{i-1}.

    The edge expansion of g is the pointwise derivative of the nodal expansion.
    """
    q = np.asarray(q, dtype=float)
    return q[..., 1:] - q[..., :-1]
