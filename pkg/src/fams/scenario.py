"""Scenario files: JSON description of grid, fractures, wells and solver setup.

A scenario fully determines a solve, so identical files give identical
results. Permeability rasters may be inline arrays, external little-endian
float64 binaries (row-major, x fastest), or a seeded blockwise-lognormal
"patchy" generator. Fracture plates are explicit endpoint lists or a seeded
random generator, which keeps sweep studies reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .assembly import FineSystem, assemble, t_ratio
from .mesh import FracturePlate, MeshError, Perforation, StructuredGrid, Well, build_grid, embed_fractures
from .solver import SolverConfig


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    grid: dict
    fractures: dict = field(default_factory=dict)
    wells: list = field(default_factory=list)
    viscosity: float = 1.0
    t_ratio_target: float = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    sweep: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path)


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ScenarioError(f"scenario file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}")
    return scenario_from_dict(raw, base_dir=path.parent)


def scenario_from_dict(raw, base_dir=Path(".")) -> Scenario:
    if "grid" not in raw:
        raise ScenarioError("scenario is missing the 'grid' section")
    solver_cfg = _solver_config(raw.get("solver", {}))
    return Scenario(
        grid=raw["grid"],
        fractures=raw.get("fractures", {}),
        wells=raw.get("wells", []),
        viscosity=float(raw.get("fluid", {}).get("viscosity", 1.0)),
        t_ratio_target=raw.get("t_ratio"),
        solver=solver_cfg,
        sweep=raw.get("sweep", {}),
        base_dir=Path(base_dir),
    )


def _solver_config(d) -> SolverConfig:
    cfg = SolverConfig()
    known = {f for f in vars(cfg)}
    fields = {}
    for key, val in d.items():
        if key not in known:
            raise ScenarioError(f"unknown solver option {key!r}")
        if key == "d_min" and isinstance(val, str):
            val = math.inf if val.lower() in ("inf", "infinity") else float(val)
        if key == "ratio":
            val = tuple(int(v) for v in val)
        fields[key] = val
    return replace(cfg, **fields)


def generate_patchy_perm(nx, ny, nz=1, *, seed=0, patch=8, mean_log10=0.0,
                         sigma_log10=1.0):
    """Blockwise lognormal permeability: one log10 draw per patch."""
    rng = np.random.default_rng(seed)
    pbx = max(1, (nx + patch - 1) // patch)
    pby = max(1, (ny + patch - 1) // patch)
    pbz = max(1, (nz + patch - 1) // patch)
    logk = mean_log10 + sigma_log10 * rng.standard_normal((pbz, pby, pbx))
    k = np.empty((nz, ny, nx))
    for kz in range(nz):
        for jy in range(ny):
            k[kz, jy, :] = 10.0 ** logk[kz // patch, jy // patch,
                                        (np.arange(nx) // patch)]
    return k.ravel()


def _resolve_perm(gspec, n, base_dir):
    perm = gspec.get("perm", 1.0)
    if isinstance(perm, dict):
        if "file" in perm:
            data = np.fromfile(base_dir / perm["file"], dtype="<f8")
            if data.size not in (n, 3 * n):
                raise ScenarioError(
                    f"permeability file has {data.size} values, expected {n} or {3 * n}"
                )
            return data.reshape(n, 3) if data.size == 3 * n else data
        if "patchy" in perm:
            p = perm["patchy"]
            return generate_patchy_perm(
                gspec["nx"], gspec["ny"], gspec.get("nz", 1),
                seed=int(p.get("seed", 0)), patch=int(p.get("patch", 8)),
                mean_log10=float(p.get("mean_log10", 0.0)),
                sigma_log10=float(p.get("sigma_log10", 1.0)),
            )
        if "uniform" in perm:
            return float(perm["uniform"])
        raise ScenarioError(f"unrecognized perm spec: {sorted(perm)}")
    if isinstance(perm, (int, float)):
        return float(perm)
    return np.asarray(perm, dtype=float)


def build_grid_from_spec(gspec, base_dir=Path(".")) -> StructuredGrid:
    try:
        nx, ny = int(gspec["nx"]), int(gspec["ny"])
    except KeyError as exc:
        raise ScenarioError(f"grid spec missing {exc}")
    nz = int(gspec.get("nz", 1))
    return build_grid(
        nx, ny, nz,
        hx=float(gspec.get("hx", 1.0)),
        hy=float(gspec.get("hy", 1.0)),
        hz=float(gspec.get("hz", 1.0)),
        perm=_resolve_perm(gspec, nx * ny * nz, base_dir),
    )


def generate_random_plates(grid, count, *, seed=0, min_len=0.2, max_len=0.6,
                           aperture=1e-3, perm=1e4):
    """Seeded random plate set; lengths are fractions of the domain size."""
    rng = np.random.default_rng(seed)
    Lx, Ly = grid.nx * grid.hx, grid.ny * grid.hy
    plates = []
    for _ in range(count):
        cx, cy = rng.uniform(0.1 * Lx, 0.9 * Lx), rng.uniform(0.1 * Ly, 0.9 * Ly)
        ang = rng.uniform(0, math.pi)
        half = 0.5 * rng.uniform(min_len, max_len) * min(Lx, Ly)
        dx, dy = half * math.cos(ang), half * math.sin(ang)
        p0 = (min(max(cx - dx, 0.0), Lx), min(max(cy - dy, 0.0), Ly))
        p1 = (min(max(cx + dx, 0.0), Lx), min(max(cy + dy, 0.0), Ly))
        if math.hypot(p1[0] - p0[0], p1[1] - p0[1]) < 1e-6:
            continue
        plates.append(FracturePlate(points=(p0, p1), aperture=aperture, perm=perm))
    return plates


def _plates_from_spec(fspec, grid):
    if not fspec:
        return []
    if "random" in fspec:
        r = fspec["random"]
        return generate_random_plates(
            grid, int(r["count"]), seed=int(r.get("seed", 0)),
            min_len=float(r.get("min_len", 0.2)), max_len=float(r.get("max_len", 0.6)),
            aperture=float(r.get("aperture", 1e-3)), perm=float(r.get("perm", 1e4)),
        )
    plates = []
    for p in fspec.get("plates", []):
        pts = p.get("points")
        if pts is None:
            pts = [p["p0"], p["p1"]]
        z_range = tuple(p["z"]) if "z" in p else None
        plates.append(
            FracturePlate(
                points=tuple(tuple(map(float, q)) for q in pts),
                aperture=float(p["aperture"]),
                perm=float(p["perm"]),
                z_range=z_range,
            )
        )
    return plates


def _wells_from_spec(wspec, grid):
    wells = []
    for w in wspec:
        perfs = []
        for p in w["perforations"]:
            medium = p.get("medium", "matrix")
            cell = p["cell"]
            if medium == "matrix" and isinstance(cell, (list, tuple)):
                cell = grid.cell_index(*(int(c) for c in cell))
            perfs.append(
                Perforation(medium=medium, cell=int(cell), pi=float(p["pi"]),
                            network=int(p.get("network", 0)))
            )
        ctl = w["control"]
        wells.append(
            Well(well_id=str(w.get("id", f"W{len(wells)}")), perforations=tuple(perfs),
                 control=str(ctl["type"]), value=float(ctl["value"]))
        )
    return wells


@dataclass
class BuiltScenario:
    grid: StructuredGrid
    networks: list
    overlaps: list
    wells: list
    viscosity: float
    frac_perm_scale: float = 1.0

    def assemble(self) -> FineSystem:
        networks = self.networks
        if self.frac_perm_scale != 1.0:
            networks = _scaled_networks(self.networks, self.frac_perm_scale)
        return assemble(self.grid, networks, self.overlaps, self.wells,
                        viscosity=self.viscosity)


def _scaled_networks(networks, scale):
    out = []
    for net in networks:
        clone = replace_network(net)
        for cell in clone.cells:
            cell.perm *= scale
        out.append(clone)
    return out


def replace_network(net):
    from copy import deepcopy

    return deepcopy(net)


def build_scenario(scenario: Scenario) -> BuiltScenario:
    """Geometry and meshes for a scenario; assembly is deferred so sweeps can
    re-scale fracture conductivity without re-embedding."""
    grid = build_grid_from_spec(scenario.grid, scenario.base_dir)
    plates = _plates_from_spec(scenario.fractures, grid)
    cell_size = scenario.fractures.get("cell_size") if scenario.fractures else None
    try:
        networks, overlaps = embed_fractures(grid, plates, cell_size=cell_size)
    except MeshError:
        raise
    wells = _wells_from_spec(scenario.wells, grid)
    built = BuiltScenario(grid=grid, networks=networks, overlaps=overlaps,
                          wells=wells, viscosity=scenario.viscosity)
    if scenario.t_ratio_target is not None:
        built = with_t_ratio(built, float(scenario.t_ratio_target))
    return built


def with_t_ratio(built: BuiltScenario, target) -> BuiltScenario:
    """Scale fracture permeabilities so the assembled transmissibility ratio
    hits ``target`` exactly (every fracture transmissibility is 1-homogeneous
    in the fracture permeability)."""
    if not built.networks:
        raise ScenarioError("t_ratio target needs at least one fracture network")
    base = replace(built, frac_perm_scale=1.0)
    current = t_ratio(base.assemble()).ratio
    return replace(built, frac_perm_scale=target / current)


def build_system(scenario: Scenario) -> FineSystem:
    return build_scenario(scenario).assemble()
