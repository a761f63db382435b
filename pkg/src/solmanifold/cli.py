"""Command-line interface: spectrum | evolve | manifold | strichartz | sweep | validate.

Exit codes: 0 = all checks passed, 1 = at least one check failed,
2 = usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import soliton
from .experiments import (
    ConfigError,
    ExperimentConfig,
    _write,
    family_field,
    run,
    seeded_query,
    validate,
)
from .grid import RadialField, RadialGrid, l2_norm
from .modulation import evolve_nonlinear, picard_map, shoot_h, trajectory_modulation
from .norms import energy, mixed_norm
from .propagators import free_sine_traj, secular_decomposition_S
from .spectral import ground_state, spectrum_report


def _add_grid_args(p, R=60.0, n=1201):
    p.add_argument("--R", type=float, default=R, help="outer radius")
    p.add_argument("--n", type=int, default=n, help="node count (rounded to odd)")
    p.add_argument("--R-obs", type=float, default=None, dest="R_obs")
    p.add_argument("--out", type=str, default="out", help="output directory")


def _cmd_spectrum(args):
    grid = RadialGrid(R=args.R, n=args.n, R_obs=args.R_obs)
    S = ground_state(grid, a=args.a)
    rep = spectrum_report(S)
    _write(args.out, "spectrum.json", json.dumps(rep, indent=2, sort_keys=True))
    _write(args.out, "g_profile.csv", S.g.to_csv())
    print(json.dumps(rep, indent=2, sort_keys=True))
    return 0


def _cmd_evolve(args):
    grid = RadialGrid(R=args.R, n=args.n, R_obs=args.R_obs)
    dt = args.dt if args.dt else 0.8 * grid.dr
    S = ground_state(grid)
    f = family_field(grid, args.family, S=S)
    nf = l2_norm(f)
    psi0 = RadialField(grid, soliton.phi(grid.r, 1.0) + args.eps * f.values / nf)
    run_out = evolve_nonlinear(psi0, grid.zeros(), args.T, dt, S=S, stride=10)
    rows = ["t,energy,g_overlap"]
    stride_steps = max(1, run_out.psi.samples.shape[0] // 400)
    for m in range(0, run_out.psi.samples.shape[0], stride_steps):
        E = energy(run_out.psi.slice(m), run_out.dpsi_dt.slice(m))
        rows.append(
            f"{m * run_out.psi.dt:.17g},{E:.17g},{run_out.g_overlap[min(m * 10, len(run_out.g_overlap) - 1)]:.17g}"
        )
    _write(args.out, "evolution.csv", "\n".join(rows) + "\n")
    print(f"status: {run_out.status}; wrote {os.path.join(args.out, 'evolution.csv')}")
    return 0


def _cmd_strichartz(args):
    grid = RadialGrid(R=args.R, n=args.n, R_obs=args.R_obs)
    dt = args.dt if args.dt else grid.dr
    T = min(args.T, grid.budget_horizon())
    S = ground_state(grid)
    f = family_field(grid, args.family, S=S)
    fn = RadialField(grid, f.values / l2_norm(f))
    if args.mode == "free":
        traj = free_sine_traj(fn, T, dt)
    else:
        traj, _ = secular_decomposition_S(fn, T, dt, S)
    kinds = {
        "L62x_Linf_t": (("lorentz", 6, 2), "Linf_t"),
        "Linf_x_L2_t": ("Linf_x", "L2_t"),
        "Linf_x_L1_t": ("Linf_x", "L1_t"),
    }
    rows = ["t,norm_kind,value"]
    horizons = np.linspace(T / 8.0, T, 8)
    norms = {}
    for kind, (outer, inner) in kinds.items():
        for Th in horizons:
            val = mixed_norm(traj.restricted(Th), outer, inner)
            rows.append(f"{Th:.17g},{kind},{val:.17g}")
        norms[kind] = val
    _write(args.out, "strichartz_run.csv", "\n".join(rows) + "\n")
    summary = {"mode": args.mode, "family": args.family, "T": T, "sup_constants": norms}
    _write(args.out, "strichartz_summary.json", json.dumps(summary, indent=2, sort_keys=True))
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_manifold(args):
    from solmanifold.modulation import make_query

    grid = RadialGrid(R=args.R, n=args.n, R_obs=args.R_obs)
    dt = args.dt if args.dt else 0.8 * grid.dr
    S = ground_state(grid)
    if args.family == "pc_bump":
        query = seeded_query(grid, S, args.eps, args.seed)
    else:
        f = family_field(grid, args.family, S=S)
        query = make_query(
            S, RadialField(grid, args.eps * f.values / l2_norm(f)), grid.zeros()
        )
    out = {}
    if args.method in ("shoot", "both"):
        res = shoot_h(query, S, args.T, dt)
        out["shoot"] = {
            "h": res.h,
            "method": "shoot",
            "bracket_width": res.bracket_width,
            "tail_bound": None,
        }
        phi_f = soliton.phi_field(grid)
        psi0 = RadialField(
            grid, phi_f.values + query.psi0_perturbation.values + res.h * S.g.values
        )
        psi1 = RadialField(grid, query.psi1.values + res.h * S.k * S.g.values)
        nl = evolve_nonlinear(psi0, psi1, args.T - 4.0, dt, S=S, stride=5)
        traj = trajectory_modulation(nl, S)
        _write(args.out, "trajectory.csv", traj.to_csv())
        out["diagnostics"] = [json.loads(d.to_json()) for d in traj.diagnostics]
    if args.method in ("picard", "both"):
        T = min(args.T, grid.budget_horizon())
        it = picard_map(None, None, None, query, S, T, dt)
        for _ in range(args.picard_iters - 1):
            it = picard_map(it.u, it.a, it.adot, query, S, T, dt)
        out["picard"] = {
            "h": it.h,
            "method": "picard",
            "bracket_width": None,
            "tail_bound": it.tail_bound,
        }
    _write(args.out, "h_report.json", json.dumps(out, indent=2, sort_keys=True))
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def _cmd_sweep(args):
    config = ExperimentConfig.from_file(args.config)
    if args.out:
        config.output_dir = args.out
    if args.workers:
        config.workers = args.workers
    report = run(config)
    for c in report.checks:
        status = "PASS" if c.passed else "FAIL"
        print(f"[{status}] {c.name}: {c.value:.6g} {c.op} {c.threshold:.6g}")
    print(f"report: {os.path.join(config.output_dir, 'report.json')}")
    return 0 if report.passed else 1


def _cmd_validate(args):
    config = ExperimentConfig.from_file(args.config)
    issues = validate(config)
    for issue in issues:
        print(f"violation: {issue}")
    if not issues:
        print("config ok")
    return 0 if not issues else 1


def build_parser():
    p = argparse.ArgumentParser(
        prog="solmanifold",
        description="numerical laboratory for the soliton centre-stable manifold",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("spectrum", help="ground state of the linearized operator")
    _add_grid_args(sp, R=20.0, n=1601)
    sp.add_argument("--a", type=float, default=1.0)
    sp.set_defaults(fn=_cmd_spectrum)

    ev = sub.add_parser("evolve", help="nonlinear evolution with energy diagnostics")
    _add_grid_args(ev)
    ev.add_argument("--T", type=float, default=20.0)
    ev.add_argument("--dt", type=float, default=None)
    ev.add_argument("--eps", type=float, default=1e-3)
    ev.add_argument("--family", type=str, default="bump",
                    choices=["ball", "bump", "phi5", "vdphi_bump"])
    ev.set_defaults(fn=_cmd_evolve)

    st = sub.add_parser("strichartz", help="reverse Strichartz norms of one run")
    _add_grid_args(st, R=80.0, n=1601)
    st.add_argument("--dt", type=float, default=None)
    st.add_argument("--T", type=float, default=40.0)
    st.add_argument("--family", type=str, default="bump", choices=["ball", "bump", "phi5"])
    st.add_argument("--mode", type=str, default="free", choices=["free", "perturbed"])
    st.set_defaults(fn=_cmd_strichartz)

    mf = sub.add_parser("manifold", help="manifold offset by shooting and/or Picard")
    _add_grid_args(mf)
    mf.add_argument("--eps", type=float, default=1e-3)
    mf.add_argument("--family", type=str, default="pc_bump")
    mf.add_argument("--T", type=float, default=18.0)
    mf.add_argument("--dt", type=float, default=None)
    mf.add_argument("--method", type=str, default="shoot", choices=["shoot", "picard", "both"])
    mf.add_argument("--seed", type=int, default=0)
    mf.add_argument("--picard-iters", type=int, default=4, dest="picard_iters")
    mf.set_defaults(fn=_cmd_manifold)

    sw = sub.add_parser("sweep", help="run a config-driven experiment")
    sw.add_argument("--config", type=str, required=True)
    sw.add_argument("--out", type=str, default=None)
    sw.add_argument("--workers", type=int, default=None)
    sw.set_defaults(fn=_cmd_sweep)

    va = sub.add_parser("validate", help="static config checks")
    va.add_argument("--config", type=str, required=True)
    va.set_defaults(fn=_cmd_validate)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
