"""Run configuration, test-case initializers, the Strang carryover loop,
snapshot files, and the energy ledger cadence."""

import hashlib
import json
import os
import struct

import numpy as np

from . import hdyn, vdyn
from .energetics import EnergyLedger
from .geometry import cubed_sphere_mesh, plane_mesh
from .state import Constants, Model, State

__all__ = ["RunConfig", "ConfigError", "build_model", "init_case",
            "strang_step", "run", "write_snapshot", "read_snapshot",
            "SNAPSHOT_MAGIC"]

SNAPSHOT_MAGIC = b"MESEULR1"


class ConfigError(ValueError):
    pass


_DEFAULTS = {
    "testcase": "isothermal_rest",
    "geometry": {
        "backend": "cubed_sphere",
        "elements_per_panel_edge": 4,
        "nx": 4, "ny": 4,
        "degree": 3,
        "levels": 10,
        "z_top_meters": 1.0e4,
        "radius_meters": 6.37122e6,
        "radius_reduction_factor": 1.0,
        "plane_extent_meters": [1.0e6, 1.0e6],
    },
    "physics": {
        "R": 287.0, "cp": 1004.5, "p0_pascals": 1.0e5,
        "gravity": 9.80616, "rotation_rate": 7.292e-5,
        "coriolis": True, "nonhydrostatic": False,
        "testcase_params": {},
    },
    "numerics": {
        "dt_seconds": 60.0,
        "t_end_seconds": 3600.0,
        "rk_variant": "rk3",
        "quadrature_points": None,
        "mass_solver": "direct",
        "mass_solver_tol": 1.0e-12,
        "picard_tol": 1.0e-8,
        "picard_max_iter": 50,
        "viscosity_momentum": 0.0,      # "auto" -> 0.072/0.144 dx^3.2
        "viscosity_temperature": 0.0,
        "rayleigh_coefficient": 0.2,
        "split_viscosity": False,
    },
    "io": {
        "output_dir": "out",
        "snapshot_interval_seconds": 0.0,
        "ledger_interval_steps": 1,
        "picard_trace": False,
    },
}


_FREEFORM = {"testcase_params"}


def _merge(base, over):
    out = dict(base)
    for k, v in (over or {}).items():
        if k not in base:
            raise ConfigError(f"unknown config key {k!r}")
        if isinstance(base[k], dict) and k not in _FREEFORM:
            out[k] = _merge(base[k], v)
        else:
            out[k] = v
    return out


class RunConfig:
    def __init__(self, data=None):
        data = data or {}
        for key in data:
            if key not in _DEFAULTS:
                raise ConfigError(f"unknown config section {key!r}")
        self.testcase = data.get("testcase", _DEFAULTS["testcase"])
        self.geometry = _merge(_DEFAULTS["geometry"], data.get("geometry"))
        self.physics = _merge(_DEFAULTS["physics"], data.get("physics"))
        self.numerics = _merge(_DEFAULTS["numerics"], data.get("numerics"))
        self.io = _merge(_DEFAULTS["io"], data.get("io"))
        self.validate()

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls(json.load(f))

    def validate(self):
        n = self.numerics
        if n["dt_seconds"] <= 0:
            raise ConfigError("dt_seconds must be positive")
        if n["rk_variant"] not in ("rk2", "rk3"):
            raise ConfigError("rk_variant must be rk2 or rk3")
        if self.geometry["radius_reduction_factor"] < 1.0:
            raise ConfigError("radius_reduction_factor must be >= 1")
        si = self.io["snapshot_interval_seconds"]
        if si:
            ratio = si / n["dt_seconds"]
            if abs(ratio - round(ratio)) > 1e-9:
                raise ConfigError("snapshot interval must be a multiple of dt")
        if self.geometry["backend"] not in ("cubed_sphere", "plane"):
            raise ConfigError("backend must be cubed_sphere or plane")

    def mesh_descriptor(self):
        g = self.geometry
        if g["backend"] == "cubed_sphere":
            return {"backend": "cubed_sphere",
                    "elements_per_panel_edge": g["elements_per_panel_edge"],
                    "degree": g["degree"], "levels": g["levels"],
                    "z_top_meters": g["z_top_meters"],
                    "radius_meters": g["radius_meters"],
                    "radius_reduction_factor": g["radius_reduction_factor"]}
        return {"backend": "plane", "nx": g["nx"], "ny": g["ny"],
                "degree": g["degree"], "levels": g["levels"],
                "z_top_meters": g["z_top_meters"],
                "plane_extent_meters": list(g["plane_extent_meters"])}


def build_mesh(desc):
    if desc["backend"] == "cubed_sphere":
        return cubed_sphere_mesh(desc["elements_per_panel_edge"], desc["degree"],
                                 desc["levels"], desc["z_top_meters"],
                                 radius=desc["radius_meters"],
                                 reduction=desc["radius_reduction_factor"])
    Lx, Ly = desc["plane_extent_meters"]
    return plane_mesh(desc["nx"], desc["ny"], desc["degree"], desc["levels"],
                      desc["z_top_meters"], Lx=Lx, Ly=Ly)


def build_model(cfg):
    ph = cfg.physics
    const = Constants(R=ph["R"], cp=ph["cp"], p0=ph["p0_pascals"],
                      g=ph["gravity"], omega=ph["rotation_rate"])
    mesh = build_mesh(cfg.mesh_descriptor())
    n = cfg.numerics
    model = Model(mesh, const, q=n["quadrature_points"],
                  mass_mode=n["mass_solver"], mass_tol=n["mass_solver_tol"],
                  coriolis=ph["coriolis"], nonhydrostatic=ph["nonhydrostatic"])
    for key in ("viscosity_momentum", "viscosity_temperature"):
        if n[key] == "auto":
            n[key] = hdyn.default_viscosity(model)
    return model


def isothermal_profiles(const, T0):
    def exner(z):
        return const.cp * np.exp(-const.g * np.asarray(z, float) / (const.cp * T0))

    def rho(z):
        p = const.p0 * (exner(z) / const.cp) ** (const.cp / const.R)
        return p / (const.R * T0)

    return exner, rho


def nsquared_profiles(const, t_eq, nfreq):
    """Constant Brunt-Vaisala background: theta = T_eq exp(N^2 z / g)."""
    g, cp, R, p0 = const.g, const.cp, const.R, const.p0
    gstar = g * g / (cp * t_eq * nfreq * nfreq)

    def exner(z):
        z = np.asarray(z, float)
        return cp * (1.0 + gstar * (np.exp(-nfreq**2 * z / g) - 1.0))

    def theta_bg(z):
        return t_eq * np.exp(nfreq**2 * np.asarray(z, float) / g)

    def rho(z):
        z = np.asarray(z, float)
        Pi = exner(z)
        T = theta_bg(z) * Pi / cp
        p = p0 * (Pi / cp) ** (cp / R)
        return p / (R * T)

    return exner, rho, theta_bg


def _perturb_theta(model, state, theta_prime_fn):
    """Add rho * theta'(x, z) to Theta through its Q moments."""
    sp, co = model.sp, model.cols
    rho_qp = model.q_phys_qp(state.rho)               # (ne, L, nq)
    pos = sp.geo["POS"]
    zi = model.mesh.z_interfaces
    dTh = np.zeros_like(state.Theta)
    for l in range(model.L):
        mom = np.zeros((sp.nelem, model.p2))
        for znode in (zi[l], zi[l + 1]):
            tp = theta_prime_fn(pos, znode)
            mom += 0.5 * np.einsum("q,eq,qm->em", sp.W, rho_qp[:, l, :] * tp, sp.Eq2)
        dTh[:, l, :] = mom
    state.Theta = state.Theta + co.mq_solve(dTh)
    return state


def init_case(cfg, model):
    tp = cfg.physics["testcase_params"]
    c = model.const
    name = cfg.testcase
    if name == "isothermal_rest":
        T0 = tp.get("surface_temperature_kelvin", 300.0)
        exner, rho = isothermal_profiles(c, T0)
        r, Th = vdyn.hydrostatic_init(model, exner, rho)
        st = model.zero_state()
        st.rho, st.Theta = r, Th
        return st
    if name == "gravity_wave":
        t_eq = tp.get("t_eq_kelvin", 300.0)
        nfreq = tp.get("brunt_vaisala_hz", 0.01)
        dtheta = tp.get("delta_theta_kelvin", 1.0)
        dwidth = tp.get("width_meters", 5000.0)
        lonc = tp.get("lon_center_radians", 2.0 * np.pi / 3.0)
        latc = tp.get("lat_center_radians", 0.0)
        exner, rho, _ = nsquared_profiles(c, t_eq, nfreq)
        r, Th = vdyn.hydrostatic_init(model, exner, rho)
        st = model.zero_state()
        st.rho, st.Theta = r, Th
        ztop = model.mesh.z_top
        cc = np.array([np.cos(latc) * np.cos(lonc),
                       np.cos(latc) * np.sin(lonc), np.sin(latc)])

        def theta_prime(pos, z):
            if model.mesh.backend == "cubed_sphere":
                rhat = pos / np.linalg.norm(pos, axis=-1, keepdims=True)
                dist = model.mesh.radius * np.arccos(np.clip(rhat @ cc, -1, 1))
            else:
                dist = np.linalg.norm(pos[..., :2] - np.array([0.5e6, 0.5e6]), axis=-1)
            s = dwidth**2 / (dwidth**2 + dist**2)
            return dtheta * s * np.sin(np.pi * z / ztop)

        return _perturb_theta(model, st, theta_prime)
    if name == "bubble_plane":
        T0 = tp.get("surface_temperature_kelvin", 300.0)
        dtheta = tp.get("delta_theta_kelvin", 1.0)
        exner, rho = isothermal_profiles(c, T0)
        r, Th = vdyn.hydrostatic_init(model, exner, rho)
        st = model.zero_state()
        st.rho, st.Theta = r, Th
        Lx = getattr(model.mesh, "Lx", 1.0e6)
        Ly = getattr(model.mesh, "Ly", 1.0e6)
        ztop = model.mesh.z_top
        rad = tp.get("bubble_radius_meters", 0.15 * Lx)

        def theta_prime(pos, z):
            dx = pos[..., 0] - 0.5 * Lx
            dy = pos[..., 1] - 0.5 * Ly
            dz = z - 0.4 * ztop
            return dtheta * np.exp(-(dx**2 + dy**2 + dz**2) / rad**2)

        return _perturb_theta(model, st, theta_prime)
    raise ConfigError(f"unknown testcase {cfg.testcase!r}")


def strang_step(model, state, dt, rk="rk3", nu_u=0.0, nu_theta=0.0,
                rayleigh=0.2, picard_tol=1e-8, picard_max_iter=50,
                split_viscosity=False):
    """One Strang carryover step: explicit vertical half, horizontal full,
    implicit vertical half.  With split_viscosity the biharmonic terms run as
    their own forward-Euler substep instead of inside every RK stage."""
    s1 = vdyn.vertical_explicit_half_step(model, state, dt, rayleigh=rayleigh)
    stepper = hdyn.rk3_step if rk == "rk3" else hdyn.rk2_step
    if split_viscosity and (nu_u > 0.0 or nu_theta > 0.0):
        s2 = stepper(model, s1, dt)
        s2 = hdyn.dissipation_step(model, s2, dt, nu_u, nu_theta)
    else:
        s2 = stepper(model, s1, dt, nu_u=nu_u, nu_theta=nu_theta)
    s3, pic = vdyn.vertical_implicit_half_step(
        model, s2, dt, tol=picard_tol, max_iter=picard_max_iter, rayleigh=rayleigh)
    s3.t = state.t + dt
    return s3, pic


def run(cfg, model=None, state=None, steps=None, on_step=None):
    """Advance the configured case, writing ledger/snapshots to the output dir."""
    if model is None:
        model = build_model(cfg)
    if state is None:
        state = init_case(cfg, model)
    n = cfg.numerics
    dt = n["dt_seconds"]
    nsteps = steps if steps is not None else int(round(n["t_end_seconds"] / dt))
    outdir = cfg.io["output_dir"]
    os.makedirs(outdir, exist_ok=True)
    ledger = EnergyLedger()
    ledger.append(model, state)
    snap_every = cfg.io["snapshot_interval_seconds"]
    snap_steps = int(round(snap_every / dt)) if snap_every else 0
    traces = [] if cfg.io["picard_trace"] else None
    write_snapshot(os.path.join(outdir, "snapshot_00000.bin"), cfg, state)
    for k in range(1, nsteps + 1):
        state, pic = strang_step(
            model, state, dt, rk=n["rk_variant"],
            nu_u=n["viscosity_momentum"], nu_theta=n["viscosity_temperature"],
            rayleigh=n["rayleigh_coefficient"],
            picard_tol=n["picard_tol"], picard_max_iter=n["picard_max_iter"],
            split_viscosity=n["split_viscosity"])
        if traces is not None:
            traces.append((k, pic.iterations, pic.trace[-1]))
        if k % cfg.io["ledger_interval_steps"] == 0:
            ledger.append(model, state)
        if snap_steps and k % snap_steps == 0:
            write_snapshot(os.path.join(outdir, f"snapshot_{k:05d}.bin"), cfg, state)
        if on_step is not None:
            on_step(k, state)
    ledger.write(os.path.join(outdir, "energy_ledger.csv"))
    if traces is not None:
        with open(os.path.join(outdir, "picard_trace.csv"), "w") as f:
            f.write("step,iterations,final_change\n")
            for row in traces:
                f.write(f"{row[0]},{row[1]},{row[2]:.6e}\n")
    write_snapshot(os.path.join(outdir, "snapshot_final.bin"), cfg, state)
    return model, state, ledger


# -- snapshot format ---------------------------------------------------------

def mesh_hash(desc):
    return hashlib.sha256(json.dumps(desc, sort_keys=True).encode()).hexdigest()[:16]


_FIELDS = ("u_par", "u_perp", "rho", "Theta")
_TAGS = {"u_par": "Upar", "u_perp": "Uperp", "rho": "Q", "Theta": "Q"}


def write_snapshot(path, cfg, state):
    desc = cfg.mesh_descriptor()
    header = {
        "version": 1,
        "t_seconds": state.t,
        "mesh": desc,
        "mesh_hash": mesh_hash(desc),
        "arrays": [{"name": f, "space": _TAGS[f],
                    "shape": list(getattr(state, f).shape)} for f in _FIELDS],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(SNAPSHOT_MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for name in _FIELDS:
            f.write(np.ascontiguousarray(getattr(state, name), dtype="<f8").tobytes())


class SnapshotError(IOError):
    pass


def read_snapshot(path):
    """Returns (header dict, State)."""
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != SNAPSHOT_MAGIC:
            raise SnapshotError(f"bad magic {magic!r}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        if header.get("version") != 1:
            raise SnapshotError(f"unsupported snapshot version {header.get('version')}")
        arrays = []
        for spec in header["arrays"]:
            n = int(np.prod(spec["shape"]))
            buf = f.read(8 * n)
            if len(buf) != 8 * n:
                raise SnapshotError("truncated snapshot payload")
            arrays.append(np.frombuffer(buf, dtype="<f8").reshape(spec["shape"]).copy())
        if f.read(1):
            raise SnapshotError("trailing bytes after snapshot payload")
    st = State(*arrays, t=header["t_seconds"])
    return header, st
