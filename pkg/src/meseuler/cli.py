"""Command line entry points: run, validate, hydro-init, diag."""

import argparse
import json
import sys

import numpy as np

from . import derham, driver, energetics, vdyn
from .basis import NodalBasis, gll_quadrature
from .state import Model

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _cmd_run(args):
    cfg = driver.RunConfig.from_file(args.config)
    model, state, ledger = driver.run(cfg)
    last = ledger.rows[-1]
    print(f"finished t={last[0]:.1f}s  K={last[1]:.6e}  P={last[2]:.6e}  I={last[3]:.6e}")
    return EXIT_OK


def _cmd_validate(_args):
    """Fast internal invariant suite: complex exactness, goldens, bases."""
    failures = []

    def check(name, ok):
        print(f"  {'ok' if ok else 'FAIL'}  {name}")
        if not ok:
            failures.append(name)

    for p in (1, 2, 3):
        inc = derham.local_incidence(p)
        check(f"exactness p={p} single element",
              (inc.E21 @ inc.E10).nnz == 0 and (inc.E32 @ inc.E21).nnz == 0)
    E10, E21, E32 = derham.xz_incidence(2, 2)
    check("appendix x-z grid shapes",
          E10.shape == (12, 9) and E21.shape == (4, 12) and E32.shape == (4, 12))
    from .geometry import cubed_sphere_mesh
    mesh = cubed_sphere_mesh(2, 2, 2, 1e4)
    h = derham.HorizontalDofs(mesh.topo, 2)
    c3 = derham.Complex3D(h, nl=2)
    check("exactness cubed sphere",
          (c3.inc.E21 @ c3.inc.E10).nnz == 0 and (c3.inc.E32 @ c3.inc.E21).nnz == 0)
    nb = NodalBasis(4)
    check("nodal Kronecker",
          np.max(np.abs(nb.eval_all(nb.nodes) - np.eye(5))) < 1e-13)
    qn, qw = gll_quadrature(5)
    check("quadrature sums to 2", abs(qw.sum() - 2) < 1e-13)
    return EXIT_OK if not failures else EXIT_RUNTIME


def _cmd_hydro_init(args):
    cfg = driver.RunConfig.from_file(args.config)
    model = driver.build_model(cfg)
    state = driver.init_case(cfg, model)
    res = vdyn.vertical_balance_residual(model, state.rho, state.Theta)
    gz = model.const.g * model.cols.grad_zT(model.cols.z_moments())
    rel = np.abs(res).max() / np.abs(gz).max()
    print(f"columns: {model.mesh.nelem}  levels: {model.L}")
    print(f"max |balance residual| (relative to gravity term): {rel:.3e}")
    return EXIT_OK if rel < 1e-10 else EXIT_RUNTIME


def _sample_point(model, state, lon, lat, z):
    """Point samples of (rho, Theta, Pi, theta) at a physical location."""
    mesh = model.mesh
    elem, xi, eta = _locate(mesh, lon, lat)
    zi = mesh.z_interfaces
    layer = min(np.searchsorted(zi, z, side="right") - 1, model.L - 1)
    layer = max(layer, 0)
    _, t1, t2, _ = mesh._chart_point(elem, np.array([xi]), np.array([eta]))
    A = float(np.linalg.norm(np.cross(t1, t2), axis=-1)[0])
    from .basis import EdgeBasis
    nb = NodalBasis(mesh.p)
    eb = EdgeBasis(nb)
    ex, ey = eb.eval_all(np.array([xi]))[0], eb.eval_all(np.array([eta]))[0]
    e2d = np.einsum("a,b->ba", ex, ey).reshape(-1)
    zz = 0.5 * mesh.dz[layer]
    out = {}
    for name in ("rho", "Theta"):
        out[name] = float(getattr(state, name)[elem, layer] @ e2d * 0.5 / (A * zz))
    diag_Pi, _ = model.exner(state.Theta)
    out["Pi"] = float(diag_Pi[elem, layer] @ e2d * 0.5 / (A * zz))
    theta = model.theta_diag(state.rho, state.Theta)
    zeta = 2.0 * (z - zi[layer]) / mesh.dz[layer] - 1.0
    tlo = theta[elem, layer] @ e2d / A
    thi = theta[elem, layer + 1] @ e2d / A
    out["theta"] = float(0.5 * (1 - zeta) * tlo + 0.5 * (1 + zeta) * thi)
    return out


def _locate(mesh, lon, lat):
    """Element and local horizontal coordinates containing (lon, lat) or (x, y)."""
    if mesh.backend == "plane":
        x, y = lon % mesh.Lx, lat % mesh.Ly
        for e, (_, x0, x1, y0, y1) in enumerate(mesh.elem_rect):
            if x0 - 1e-9 <= x <= x1 + 1e-9 and y0 - 1e-9 <= y <= y1 + 1e-9:
                return e, np.clip(2 * (x - x0) / (x1 - x0) - 1, -1, 1), \
                    np.clip(2 * (y - y0) / (y1 - y0) - 1, -1, 1)
        raise ValueError("point not located")
    v = np.array([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)])
    from .geometry import _PANELS
    best = None
    for panel, (n, a1, a2) in enumerate(_PANELS):
        n, a1, a2 = map(np.asarray, (n, a1, a2))
        denom = v @ n
        if denom <= 0:
            continue
        X, Y = (v @ a1) / denom, (v @ a2) / denom
        if abs(X) <= 1 + 1e-12 and abs(Y) <= 1 + 1e-12:
            best = (panel, np.arctan(X), np.arctan(Y))
            break
    if best is None:
        raise ValueError("point not located on any panel")
    panel, alpha, beta = best
    for e, (pe, a0, a1_, b0, b1) in enumerate(mesh.elem_rect):
        if int(pe) == panel and a0 - 1e-12 <= alpha <= a1_ + 1e-12 \
                and b0 - 1e-12 <= beta <= b1 + 1e-12:
            return e, np.clip(2 * (alpha - a0) / (a1_ - a0) - 1, -1, 1), \
                np.clip(2 * (beta - b0) / (b1 - b0) - 1, -1, 1)
    raise ValueError("point not located in any element")


def _cmd_diag(args):
    header, state = driver.read_snapshot(args.snapshot)
    model = Model(driver.build_mesh(header["mesh"]))
    K, P, I = energetics.energies(model, state)
    print(f"t = {state.t:.3f} s")
    print(f"K = {K:.12e}")
    print(f"P = {P:.12e}")
    print(f"I = {I:.12e}")
    if args.sample:
        lon, lat, z = (float(x) for x in args.sample.split(","))
        vals = _sample_point(model, state, lon, lat, z)
        for k, v in vals.items():
            print(f"{k} = {v:.12e}")
    return EXIT_OK


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="meseuler",
        description="Mimetic spectral element compressible Euler simulator")
    sub = parser.add_subparsers(dest="command")
    prun = sub.add_parser("run", help="advance a configured case")
    prun.add_argument("config")
    sub.add_parser("validate", help="run the fast invariant suite")
    phyd = sub.add_parser("hydro-init", help="report hydrostatic balance residuals")
    phyd.add_argument("config")
    pdiag = sub.add_parser("diag", help="print energies of a snapshot")
    pdiag.add_argument("snapshot")
    pdiag.add_argument("--sample", help="lon,lat,z point sample", default=None)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    if args.command is None:
        parser.print_usage()
        return EXIT_CONFIG
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "validate":
            return _cmd_validate(args)
        if args.command == "hydro-init":
            return _cmd_hydro_init(args)
        if args.command == "diag":
            return _cmd_diag(args)
    except driver.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (driver.SnapshotError, FileNotFoundError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failures keep a distinct code
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
