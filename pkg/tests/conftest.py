"""Shared fixtures: balanced states on small plane and sphere meshes."""

import numpy as np
import pytest

from meseuler.geometry import cubed_sphere_mesh, plane_mesh
from meseuler.state import Model
from meseuler.vdyn import hydrostatic_init

T0 = 300.0


def isothermal(const, T0=T0):
    def exner(z):
        return const.cp * np.exp(-const.g * np.asarray(z, float) / (const.cp * T0))

    def rho(z):
        p = const.p0 * (exner(z) / const.cp) ** (const.cp / const.R)
        return p / (const.R * T0)

    return exner, rho


def balanced_state(model):
    exner, rho = isothermal(model.const)
    r, Th = hydrostatic_init(model, exner, rho)
    st = model.zero_state()
    st.rho, st.Theta = r, Th
    return st


def perturbed_state(model, amp=1e-3, wind=None, seed=0):
    """Balanced state plus a smooth Theta wobble and physical-amplitude winds.

    amp is the relative Theta perturbation (capped at 2%); wind the horizontal
    speed scale in m/s (defaults to 1e3 * amp).
    """
    rng = np.random.default_rng(seed)
    st = balanced_state(model)
    sp = model.sp
    pos = sp.geo["POS"]
    scale = np.abs(pos).max()
    mode = np.sin(2 * np.pi * pos[..., 0] / scale) * np.cos(2 * np.pi * pos[..., 1] / scale)
    mom = np.einsum("q,eq,qm->em", sp.W, mode, sp.Eq2)
    bump = model.cols.mq_solve(np.repeat(mom[:, None, :], model.L, axis=1))
    eps = min(amp, 0.02)
    st.Theta = st.Theta * (1.0 + eps * bump / max(np.abs(bump).max(), 1e-30))
    # physical wind: project a smooth rotational-ish field of the given speed
    wind = 1e3 * amp if wind is None else wind
    if wind > 0:
        ax = rng.standard_normal(3)
        uvals = np.cross(ax / np.linalg.norm(ax), pos / scale)
        uvals -= sp.UP * (uvals * sp.UP).sum(-1, keepdims=True)
        uvals *= wind / max(np.abs(uvals).max(), 1e-30)
        rhs = sp.scatter_flux(np.einsum("eqd,eqmd,q->em", uvals, sp.Bvec, sp.W))
        uhat = sp.solver_U.solve(rhs)
        st.u_par = st.u_par + (2.0 * model.sp.zz)[:, None] * uhat[None, :]
    return st


def wmax_phys(model, state):
    wq = np.einsum("qm,ekm->ekq", model.sp.Eq2,
                   model.cols.full_from_interior(state.u_perp)) / model.sp.A[:, None, :]
    return float(np.abs(wq).max())


def umax_phys(model, state):
    return max(float(np.abs(model.sp.upar_phys(state.u_par[l], l)).max())
               for l in range(model.L))


@pytest.fixture(scope="session")
def plane_model_s():
    return Model(plane_mesh(3, 3, 3, 6, 1e4, Lx=3e5, Ly=3e5), coriolis=False)


@pytest.fixture(scope="session")
def plane_balanced(plane_model_s):
    return balanced_state(plane_model_s)


@pytest.fixture(scope="session")
def sphere_model_s():
    return Model(cubed_sphere_mesh(2, 3, 6, 1e4))


@pytest.fixture(scope="session")
def sphere_balanced(sphere_model_s):
    return balanced_state(sphere_model_s)
