"""Command-line front end: solve scenarios, run sweep studies, benchmark.

Exit codes: 0 converged, 1 input error, 2 stagnation/non-convergence.
Artifacts are legacy-VTK structured-points files for matrix fields and CSV
for everything else. Numeric CSV content is deterministic for a fixed
scenario; wall-clock columns are the one exception.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import linalg
from .assembly import t_ratio as compute_t_ratio
from .coarsen import CLASS_NAMES, build_hierarchy
from .scenario import (
    Scenario,
    ScenarioError,
    build_scenario,
    load_scenario,
    with_t_ratio,
)
from .solver import (
    STAGE_LABELS,
    SolverConfig,
    fams_solve,
    reconstruct_flux,
    setup as solver_setup,
)

_F = "{!r}".format  # shortest round-trip float formatting, deterministic


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return _F(float(x))
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_vtk_structured_points(path, grid, name, values):
    """Legacy-VTK structured points with one scalar cell field."""
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"{name}\n")
        fh.write("ASCII\n")
        fh.write("DATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {grid.nx + 1} {grid.ny + 1} {grid.nz + 1}\n")
        fh.write("ORIGIN 0 0 0\n")
        fh.write(f"SPACING {_F(grid.hx)} {_F(grid.hy)} {_F(grid.hz)}\n")
        fh.write(f"CELL_DATA {grid.n_cells}\n")
        fh.write(f"SCALARS {name} double 1\n")
        fh.write("LOOKUP_TABLE default\n")
        for v in values:
            fh.write(_F(float(v)) + "\n")


def _write_solution(outdir, system, p, report):
    grid = system.grid
    write_vtk_structured_points(
        outdir / "matrix_pressure.vtk", grid, "pressure", p[: system.n_matrix]
    )
    rows = []
    for net, off in zip(system.networks, system.frac_offset):
        for c, cell in enumerate(net.cells):
            x, y, z = cell.centroid
            rows.append((net.network_id, c, x, y, z,
                         int(cell.is_intersection), p[off + c]))
    write_csv(outdir / "fracture_pressure.csv",
              ["network", "cell", "x", "y", "z", "intersection", "pressure"], rows)
    rows = [(w.well_id, w.control, w.value, p[system.well_dof(k)])
            for k, w in enumerate(system.pressure_wells)]
    write_csv(outdir / "wells.csv", ["well", "control", "value", "pressure"], rows)
    _write_report(outdir, report)


def _write_report(outdir, report, prefix=""):
    cum = 0.0
    per_it = (report.total_seconds / max(report.iterations, 1))
    rows = []
    for i, r in enumerate(report.residuals):
        rows.append((i, r, cum))
        cum += per_it
    write_csv(outdir / f"{prefix}convergence.csv",
              ["iteration", "residual_2norm", "cumulative_seconds"], rows)
    write_csv(outdir / f"{prefix}stages.csv", ["stage", "seconds"],
              [(label, report.stage_seconds.get(label, 0.0)) for label in STAGE_LABELS])


def _apply_flag_overrides(scenario: Scenario, args) -> Scenario:
    cfg = scenario.solver
    updates = {}
    for flag, key in (
        ("strategy", "strategy"), ("restriction", "restriction"), ("alpha", "alpha"),
        ("mode", "mode"), ("tol", "tol"), ("max_it", "max_it"),
    ):
        val = getattr(args, flag, None)
        if val is not None:
            updates[key] = val
    if getattr(args, "ratio", None) is not None:
        parts = [int(v) for v in args.ratio.lower().split("x")]
        if len(parts) == 2:
            parts.append(1)
        if len(parts) != 3:
            raise ScenarioError(f"--ratio expects NxNxN, got {args.ratio!r}")
        updates["ratio"] = tuple(parts)
    if getattr(args, "dmin", None) is not None:
        updates["d_min"] = math.inf if args.dmin.lower() == "inf" else int(args.dmin)
    if updates:
        scenario = replace(scenario, solver=replace(cfg, **updates))
    if getattr(args, "seed", None) is not None:
        perm = scenario.grid.get("perm")
        if isinstance(perm, dict) and "patchy" in perm:
            perm["patchy"]["seed"] = args.seed
        if "random" in scenario.fractures:
            scenario.fractures["random"]["seed"] = args.seed
    return scenario


def _outdir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_solve(args):
    scenario = _apply_flag_overrides(load_scenario(args.scenario), args)
    system = build_scenario(scenario).assemble()
    reference = None
    if args.check_reference:
        reference = linalg.lu_solve(system.A, system.q)
    p, report = fams_solve(system, scenario.solver, reference=reference)
    out = _outdir(args)
    _write_solution(out, system, p, report)
    if args.reconstruct:
        hier = build_hierarchy(system, ratio=scenario.solver.ratio,
                               d_min=scenario.solver.d_min,
                               ratio_z=scenario.solver.ratio_z)
        ops = solver_setup(system, scenario.solver)
        flux, _ = reconstruct_flux(system, hier, ops.prol, p=p)
        div = flux.divergence()
        write_csv(out / "flux_balance.csv",
                  ["quantity", "value"],
                  [("max_abs_divergence", float(np.abs(div).max())),
                   ("global_balance", flux.global_balance())])
    print(f"{report.exit_reason}: {report.iterations} iterations, "
          f"final residual {report.residuals[-1]:.3e}")
    if report.final_relative_error is not None:
        print(f"relative error vs direct solve: {report.final_relative_error:.3e}")
    return 0 if report.converged else 2


_SWEEP_AXES = ("alpha", "t_ratio", "ratio", "d_min", "scale", "density")


def _sweep_rows(scenario, axis, values, threads=1):
    rows = []

    def run_point(value):
        return _sweep_point(scenario, axis, value)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run_point, values))
    else:
        rows = [run_point(v) for v in values]
    return rows


def _sweep_point(scenario, axis, value):
    cfg = scenario.solver
    built = None
    if axis == "alpha":
        cfg = replace(cfg, alpha=float(value))
        built = build_scenario(scenario)
    elif axis == "t_ratio":
        built = with_t_ratio(build_scenario(scenario), float(value))
    elif axis == "ratio":
        r = tuple(int(v) for v in value) if not isinstance(value, int) else (value,) * 3
        cfg = replace(cfg, ratio=r, d_min=r[0], ratio_z=r[2])
        built = build_scenario(scenario)
    elif axis == "d_min":
        d = math.inf if (isinstance(value, str) and value.lower() == "inf") else float(value)
        cfg = replace(cfg, d_min=d)
        built = build_scenario(scenario)
    elif axis == "density":
        if "random" not in scenario.fractures:
            raise ScenarioError("density sweep needs generated fractures")
        fr = dict(scenario.fractures)
        fr["random"] = dict(fr["random"], count=int(value))
        built = build_scenario(replace(scenario, fractures=fr))
    elif axis == "scale":
        built, cfg = _scaled_scenario(scenario, value)
    else:
        raise ScenarioError(f"unknown sweep axis {axis!r}; expected one of {_SWEEP_AXES}")

    system = built.assemble()
    p, report = fams_solve(system, cfg)
    ops = solver_setup(system, cfg)
    label = value if not isinstance(value, (list, tuple)) else "x".join(map(str, value))
    return [
        label, system.n, ops.coarse.n, ops.prol.P.nnz, report.iterations,
        int(report.converged), int(report.stagnated), report.residuals[-1],
        *(report.stage_seconds.get(k, 0.0) for k in STAGE_LABELS),
        report.total_seconds,
    ]


def _scaled_scenario(scenario, entry):
    """One row of a domain-scale study: resize grid and fracture population."""
    if isinstance(entry, (int, float)):
        entry = {"n": int(entry)}
    n = int(entry["n"])
    base_nx = int(scenario.grid["nx"])
    factor = n / base_nx
    gspec = dict(scenario.grid)
    gspec["nx"] = n
    gspec["ny"] = n
    if int(gspec.get("nz", 1)) > 1:
        gspec["nz"] = n
    fr = dict(scenario.fractures)
    if "random" in fr:
        fr["random"] = dict(fr["random"],
                            count=max(1, round(fr["random"]["count"] * factor)))
    elif "plates" in fr:
        fr["plates"] = [
            {**p,
             "p0": [c * factor for c in p["p0"]],
             "p1": [c * factor for c in p["p1"]]}
            if "p0" in p else
            {**p, "points": [[c * factor for c in q] for q in p["points"]]}
            for p in fr["plates"]
        ]
    wells = []
    for w in scenario.wells:
        w = dict(w)
        perfs = []
        for perf in w["perforations"]:
            perf = dict(perf)
            if perf.get("medium", "matrix") == "matrix" and isinstance(perf["cell"], (list, tuple)):
                perf["cell"] = [min(int(round(c * factor)), n - 1) for c in perf["cell"]]
            perfs.append(perf)
        w["perforations"] = perfs
        wells.append(w)
    cfg = scenario.solver
    if "ratio" in entry:
        r = int(entry["ratio"])
        cfg = replace(cfg, ratio=(r, r, r), d_min=r, ratio_z=r)
    sub = replace(scenario, grid=gspec, fractures=fr, wells=wells, solver=cfg)
    built = build_scenario(sub)
    return built, cfg


def cmd_sweep(args):
    scenario = _apply_flag_overrides(load_scenario(args.scenario), args)
    axis = args.axis
    if axis not in _SWEEP_AXES:
        print(f"error: unknown sweep axis {axis!r}", file=sys.stderr)
        return 1
    values = scenario.sweep.get(axis)
    if args.values:
        values = [v for v in args.values.split(",")]
        if axis in ("alpha", "t_ratio"):
            values = [float(v) for v in values]
        elif axis in ("density",):
            values = [int(v) for v in values]
        elif axis == "scale":
            values = [int(v) for v in values]
    if not values:
        print(f"error: no values for sweep axis {axis!r}", file=sys.stderr)
        return 1
    threads = max(1, int(os.environ.get("FAMS_THREADS", "1"))) if args.parallel else 1
    rows = _sweep_rows(scenario, axis, values, threads=threads)
    out = _outdir(args)
    write_csv(
        out / f"sweep_{axis}.csv",
        [axis, "n_fine", "n_coarse", "nnz_P", "iterations", "converged",
         "stagnated", "final_residual", *STAGE_LABELS, "total_seconds"],
        rows,
    )
    print(f"wrote {out / f'sweep_{axis}.csv'} ({len(rows)} rows)")
    return 0


def cmd_bench(args):
    scenario = _apply_flag_overrides(load_scenario(args.scenario), args)
    if args.baseline not in ("ilu0-gmres", "none"):
        print(f"error: unknown baseline {args.baseline!r}", file=sys.stderr)
        return 1
    system = build_scenario(scenario).assemble()
    cfg = replace(scenario.solver, mode="gmres")
    rows = []

    p, report = fams_solve(system, cfg)
    rows.append(("fams-gmres", report.iterations, int(report.converged),
                 report.residuals[-1], report.total_seconds))

    if args.baseline == "ilu0-gmres":
        import time as _time

        t0 = _time.perf_counter()
        sm = linalg.ilu0(system.A)
        norm_q = np.linalg.norm(system.q)
        x, info = linalg.gmres(system.A, system.q, M=sm.solve,
                               tol=cfg.tol / max(1.0, norm_q),
                               max_it=cfg.max_it,
                               restart=cfg.gmres_restart)
        rows.append(("ilu0-gmres", info.iterations, int(info.converged),
                     info.residuals[-1], _time.perf_counter() - t0))

    out = _outdir(args)
    write_csv(out / "bench.csv",
              ["method", "iterations", "converged", "final_residual", "seconds"],
              rows)
    for r in rows:
        print(f"{r[0]}: {r[1]} iterations, converged={bool(r[2])}")
    return 0


def cmd_grids(args):
    scenario = _apply_flag_overrides(load_scenario(args.scenario), args)
    system = build_scenario(scenario).assemble()
    hier = build_hierarchy(system, ratio=scenario.solver.ratio,
                           d_min=scenario.solver.d_min,
                           ratio_z=scenario.solver.ratio_z)
    med_names = {0: "matrix", 1: "fracture", 2: "well"}
    rows = [
        (dof, med_names[int(hier.medium_of[dof])], int(hier.primal_of[dof]),
         CLASS_NAMES[int(hier.class_of[dof])])
        for dof in range(system.n)
    ]
    out = _outdir(args)
    write_csv(out / "grids.csv", ["cell_id", "medium", "primal", "class"], rows)
    print(f"wrote {out / 'grids.csv'} ({len(rows)} rows)")
    return 0


def _add_common(p):
    p.add_argument("scenario", help="scenario JSON file")
    p.add_argument("--strategy", choices=["decoupled", "frac", "rock", "coupled"])
    p.add_argument("--restriction", choices=["fv", "fe", "mix"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--ratio", help="matrix coarsening, e.g. 8x8x8")
    p.add_argument("--dmin", help="fracture coarsening distance, integer or 'inf'")
    p.add_argument("--mode", choices=["richardson", "gmres"])
    p.add_argument("--tol", type=float)
    p.add_argument("--max-it", dest="max_it", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="out", help="artifact directory")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="fams",
        description="Algebraic multiscale pressure solver for fractured porous media",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run one scenario")
    _add_common(p)
    p.add_argument("--reconstruct", action="store_true",
                   help="emit conservative-flux balance after an FV stage")
    p.add_argument("--check-reference", action="store_true",
                   help="also direct-solve and report the relative error")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="run a one-axis experiment sweep")
    _add_common(p)
    p.add_argument("--axis", required=True, choices=_SWEEP_AXES)
    p.add_argument("--values", help="comma-separated values overriding the scenario")
    p.add_argument("--parallel", action="store_true",
                   help="run points concurrently (capped by FAMS_THREADS)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="compare against an ILU(0)-GMRES baseline")
    _add_common(p)
    p.add_argument("--baseline", default="ilu0-gmres", choices=["ilu0-gmres", "none"])
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("grids", help="dump primal/dual grid assignments as CSV")
    _add_common(p)
    p.set_defaults(func=cmd_grids)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
