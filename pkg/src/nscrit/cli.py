"""Command-line entry point: simulate, diagnose, verify, report.

Exit codes: 0 success, 1 validation error, 2 numerical tolerance failure,
3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import criteria, cylinders, io, norms, solver, verify
from .spectral_core import Grid, ScalarField, fft_workers, resample

log = logging.getLogger("nscrit")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3

DIAGNOSE_COLUMNS = ("criterion", "x1", "x2", "x3", "t0", "r_unit", "A", "C", "E", "D",
                    "quantity", "value", "threshold", "hypothesis_satisfied")

# the measured quantity and threshold each verdict is summarized by in CSV rows
_SUMMARY = {
    "ckn": ("C_plus_D", "eps0"),
    "ckn_oscillation": ("C_plus_D", "eps0"),
    "gkt_velocity": ("max_quantity", "eps1"),
    "theorem12": ("min_G_u3", "eps"),
    "theorem13": ("u3_L1", "eps"),
    "lemma_c": ("C_r0", None),
}


class NumericalFailure(RuntimeError):
    pass


def _initial_velocity(cfg: io.RunConfig, grid: Grid):
    preset = cfg["initial.preset"]
    amp = cfg["initial.amplitude"]
    t0 = cfg["solver.t_start"]
    if preset == "taylor_green":
        return solver.taylor_green(grid, amp, t=t0, viscosity=cfg["solver.nu"])
    if preset in ("random", "planar_random"):
        rng = np.random.default_rng(cfg["initial.seed"])
        return solver.random_velocity(grid, cfg["initial.kmax"], rng, amp,
                                      planar=preset == "planar_random")
    if preset == "zero":
        return solver.VectorField.zeros(grid)
    raise io.ConfigError(f"unknown initial.preset {preset!r} "
                         "(taylor_green, random, planar_random, zero)")


def _criterion_config(cfg: io.RunConfig, r_unit: float | None) -> criteria.CriterionConfig:
    return criteria.CriterionConfig(
        eps0=cfg["criteria.eps0"], eps1=cfg["criteria.eps1"], eps=cfg["criteria.eps"],
        M=cfg["criteria.M"], c=cfg["criteria.c"], p=cfg["criteria.p"], q=cfg["criteria.q"],
        r_unit=r_unit if r_unit is not None else cfg["criteria.r_unit"],
        sweep_count=cfg["sweeps.count"],
    )


def cmd_simulate(args) -> int:
    cfg = io.load_config(args.config)
    grid = Grid(cfg["grid.n"], cfg["grid.L"])
    sc = solver.SolverConfig(grid, dt=cfg["solver.dt"], T=cfg["solver.T"],
                             viscosity=cfg["solver.nu"], dealias=cfg["solver.dealias"],
                             stride=cfg["solver.stride"], t_start=cfg["solver.t_start"])
    out = Path(args.out or cfg["io.out"])
    u0 = _initial_velocity(cfg, grid)
    traj = solver.simulate(u0, sc)
    io.write_trajectory(out, traj, cfg.echo())
    print(f"wrote {len(traj)} snapshots to {out}")
    return EXIT_OK


def _parse_z0(text: str | None):
    if text is None:
        return None
    vals = [float(v) for v in text.split(",")]
    if len(vals) != 4:
        raise ValueError(f"--z0 needs x1,x2,x3,t; got {text!r}")
    return tuple(vals)


def _diagnose_cylinder(traj, ccfg: criteria.CriterionConfig, z0):
    unit = ccfg.unit(traj)
    q = cylinders.cylinder_quantities(traj, cylinders.ParabolicCylinder(z0[:3], z0[3], unit))
    rows, verdicts = [], []
    for v in criteria.evaluate_all(traj, ccfg, z0):
        key, thr = _SUMMARY[v.criterion]
        threshold = v.measured["threshold"] if thr is None else v.thresholds[thr]
        rows.append((v.criterion, *z0, unit, q.A, q.C, q.E, q.D, key, v.measured[key],
                     threshold, int(v.hypothesis_satisfied)))
        verdicts.append(v.to_dict())
    return rows, verdicts


def _eligible_times(traj, unit: float) -> list[float]:
    tol = 1e-9 * traj.dt
    return [float(t) for t in traj.times if t - unit**2 >= traj.times[0] - tol]


def cmd_diagnose(args) -> int:
    cfg = io.load_config(args.config)
    traj = io.read_trajectory(args.traj)
    ccfg = _criterion_config(cfg, args.r_unit)
    unit = ccfg.unit(traj)
    z0 = _parse_z0(args.z0)
    if z0 is None:
        times = _eligible_times(traj, unit)
        if not times:
            raise cylinders.WindowError(
                f"no snapshot time t0 with [t0 - r_unit^2, t0] inside the stored window "
                f"[{traj.times[0]:.6g}, {traj.times[-1]:.6g}] (r_unit = {unit:.6g})")
        cyls = [(0.0, 0.0, 0.0, t) for t in times]
    else:
        cyls = [z0]
    workers = fft_workers()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda z: _diagnose_cylinder(traj, ccfg, z), cyls))
    rows = [r for res in results for r in res[0]]
    bundle = {
        "config": cfg.echo(),
        "trajectory": {"n": traj.grid.n, "length": traj.grid.length,
                       "times": [float(t) for t in traj.times]},
        "cylinders": [{"z0": list(z), "verdicts": res[1]} for z, res in zip(cyls, results)],
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "diagnose.csv").write_text(io.format_rows(DIAGNOSE_COLUMNS, rows))
    (out / "verdicts.json").write_text(json.dumps(bundle, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(rows)} rows for {len(cyls)} cylinders to {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = verify.run_checks(args.filter)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        raise NumericalFailure(
            "; ".join(f"{r.module}.{r.operation} error {r.error:.3e} > {r.tolerance:.1e}"
                      for r in failed))
    return EXIT_OK


def cmd_report(args) -> int:
    traj = io.read_trajectory(args.traj)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = traj.grid
    unit = args.r_unit or grid.length / 4
    t0 = float(traj.times[-1])
    center = (0.0, 0.0, 0.0)

    rows = []
    for r in cylinders.radius_sweep(unit, 8):
        r = float(r)
        if t0 - r * r < traj.times[0] - 1e-9 * traj.dt:
            continue
        cyl = cylinders.ParabolicCylinder(center, t0, r)
        q = cylinders.cylinder_quantities(traj, cyl)
        g = cylinders.G(traj, "u", 4.0, 4.0, cyl)
        h = cylinders.H(traj, "vorticity", 2.0, 2.0, cyl)
        rows.append((r, q.A, q.C, q.E, q.D, g, h))
    (out / "quantity_vs_r.csv").write_text(
        io.format_rows(("r", "A", "C", "E", "D", "G_u_4_4", "H_vorticity_2_2"), rows))

    u1 = ScalarField(grid, traj.velocity[-1].coeffs[0])
    params = norms.BesovParams(s=-0.5, p=4.0, q=4.0)
    taus, prof = norms.besov_profile(u1, params)
    (out / "norm_vs_tau.csv").write_text(
        io.format_rows(("tau", "weighted_Lp"), list(zip(taus, prof))))

    rows = []
    for n in (grid.n // 2, grid.n, 2 * grid.n):
        if n < 8:
            continue
        f = resample(u1, Grid(n, grid.length))
        if np.abs(f.coeffs).max() == 0:
            continue
        rows.append((n, norms.embedding_ratio(f, 4.0, 4.0)))
    (out / "ratio_vs_refinement.csv").write_text(
        io.format_rows(("n", "bmo_minus1_over_besov"), rows))

    if traj.history:
        h = traj.history
        (out / "energy_vs_time.csv").write_text(io.format_rows(
            ("time", "energy", "dissipation"),
            list(zip(h["time"], h["energy"], h["dissipation"]))))
    print(f"wrote report tables to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nscrit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the solver and store a trajectory")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="trajectory directory (default: io.out from the config)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("diagnose", help="evaluate criterion hypotheses on a trajectory")
    p.add_argument("--config", required=True)
    p.add_argument("--traj", required=True)
    p.add_argument("--z0", help="cylinder vertex x1,x2,x3,t (default: origin at every "
                                "snapshot time whose cylinder fits)")
    p.add_argument("--r-unit", type=float, dest="r_unit")
    p.add_argument("--out", default="diagnose_out")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("verify", help="run the built-in oracle checks")
    p.add_argument("--filter", help="only checks of this module")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="write plot-ready CSV tables")
    p.add_argument("--traj", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--r-unit", type=float, dest="r_unit")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (io.SnapshotFormatError, OSError) as exc:
        print(f"error: I/O: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalFailure, solver.CFLError, solver.InstabilityError) as exc:
        print(f"error: numerical tolerance: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except cylinders.WindowError as exc:
        print(f"error: window: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"error: validation: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
