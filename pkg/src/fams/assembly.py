"""Fine-scale TPFA assembly for the coupled matrix/fracture/well system.

Unknown ordering is [matrix cells | network 0 cells | network 1 cells | ... |
pressure wells]. All fluxes are two-point: an off-diagonal entry is minus the
transmissibility divided by viscosity, the diagonal collects the incident
transmissibilities plus the matrix-fracture (CI-based) and well (PI-based)
couplings.

Pressure-controlled wells keep an explicit DOF but are eliminated in place to
preserve symmetry: the perforated-cell rows carry the PI coupling on the
diagonal with the target pressure moved to the right-hand side, and the well
row reduces to a scaled identity pinning the well pressure. Rate-controlled
wells have no DOF; their rate enters the right-hand side of the perforated
cells, apportioned by the perforation coupling strengths.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import FractureNetwork, Overlap, StructuredGrid, Well


class AssemblyError(ValueError):
    pass


def tpfa_transmissibility(area, d_a, k_a, d_b, k_b):
    """Two-point transmissibility ``area / (d_a/k_a + d_b/k_b)``.

    ``d_a``/``d_b`` are the half-distances from each cell center to the shared
    face; an intersection node passes ``d = 0``. Symmetric in the two sides.
    """
    if k_a <= 0 or k_b <= 0:
        raise AssemblyError("zero or negative permeability in transmissibility")
    return area / (d_a / k_a + d_b / k_b)


@dataclass
class TRatioReport:
    t_frac_avg: float
    t_rock_avg: float

    @property
    def ratio(self) -> float:
        return self.t_frac_avg / self.t_rock_avg


@dataclass
class FineSystem:
    """Assembled sparse system ``A p = q`` plus the index maps around it."""

    A: sp.csr_matrix
    q: np.ndarray
    grid: StructuredGrid
    networks: list
    overlaps: list
    wells: list
    viscosity: float
    n_matrix: int
    frac_offset: list          # global DOF of cell 0 of each network
    well_offset: int
    pressure_wells: list       # wells with an explicit DOF, in DOF order
    well_couplings: list       # per pressure well: [(cell dof, beta)]
    conn_i: np.ndarray         # flow connections (both media, incl. cross)
    conn_j: np.ndarray
    conn_t: np.ndarray
    t_matrix: np.ndarray       # matrix-matrix transmissibilities / viscosity
    t_frac: np.ndarray         # fracture-fracture transmissibilities / viscosity
    source: np.ndarray         # rate-well and external volumetric sources
    assembly_seconds: float = 0.0

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_fracture(self) -> int:
        return self.well_offset - self.n_matrix

    def frac_dof(self, network, cell):
        return self.frac_offset[network] + cell

    def well_dof(self, k):
        return self.well_offset + k

    def medium_of(self):
        """0 matrix, 1 fracture, 2 well, per global DOF."""
        med = np.zeros(self.n, dtype=np.int8)
        med[self.n_matrix:self.well_offset] = 1
        med[self.well_offset:] = 2
        return med


def _matrix_connections(grid, mu):
    nx, ny, nz = grid.nx, grid.ny, grid.nz
    k = grid.perm
    ii, jj, tt = [], [], []
    axes = (
        (0, 1, grid.hy * grid.hz, grid.hx),
        (1, nx, grid.hx * grid.hz, grid.hy),
        (2, nx * ny, grid.hx * grid.hy, grid.hz),
    )
    idx = np.arange(grid.n_cells).reshape(nz, ny, nx)  # [k, j, i]
    for axis, stride, area, h in axes:
        if (nx, ny, nz)[axis] < 2:
            continue
        sl_lo = [slice(None)] * 3
        sl_hi = [slice(None)] * 3
        pos = {0: 2, 1: 1, 2: 0}[axis]  # numpy axis for x/y/z
        sl_lo[pos] = slice(None, -1)
        sl_hi[pos] = slice(1, None)
        a = idx[tuple(sl_lo)].ravel()
        b = idx[tuple(sl_hi)].ravel()
        ka, kb = k[a, axis], k[b, axis]
        t = area / (0.5 * h / ka + 0.5 * h / kb) / mu
        ii.append(a)
        jj.append(b)
        tt.append(t)
    if not ii:
        return (np.empty(0, int), np.empty(0, int), np.empty(0))
    return np.concatenate(ii), np.concatenate(jj), np.concatenate(tt)


def assemble(grid, networks, overlaps, wells, viscosity=1.0, source=None) -> FineSystem:
    """Assemble the fine-scale system from geometry.

    ``source`` is an optional per-DOF volumetric rate added to the right-hand
    side (hook for gravity-like terms; unused by default).
    """
    t0 = time.perf_counter()
    mu = float(viscosity)
    if mu <= 0:
        raise AssemblyError("viscosity must be positive")

    n_matrix = grid.n_cells
    frac_offset = []
    off = n_matrix
    for net in networks:
        frac_offset.append(off)
        off += net.n_cells
    well_offset = off
    pressure_wells = [w for w in wells if w.control == "pressure"]
    n = well_offset + len(pressure_wells)

    conn_i, conn_j, conn_t = [], [], []
    mi, mj, mt = _matrix_connections(grid, mu)
    conn_i.append(mi)
    conn_j.append(mj)
    conn_t.append(mt)
    t_matrix = mt

    tf = []
    for net, offset in zip(networks, frac_offset):
        for e in net.edges:
            ca, cb = net.cells[e.a], net.cells[e.b]
            t = tpfa_transmissibility(e.area, e.dist_a, ca.perm, e.dist_b, cb.perm) / mu
            conn_i.append(np.array([offset + e.a]))
            conn_j.append(np.array([offset + e.b]))
            conn_t.append(np.array([t]))
            tf.append(t)
    t_frac = np.asarray(tf)

    for ov in overlaps:
        net = networks[ov.network_id]
        cell = net.cells[ov.frac_cell]
        # effective interface mobility: harmonic mean of the two sides; the
        # exchange flux crosses matrix rock, so a pure fracture mobility would
        # overcouple the media by orders of magnitude at high contrast
        lam_f = cell.perm / mu
        km = float(np.sqrt(grid.perm[ov.matrix_cell, 0] * grid.perm[ov.matrix_cell, 1]))
        lam_m = km / mu
        c = ov.ci * 2.0 * lam_m * lam_f / (lam_m + lam_f)
        conn_i.append(np.array([frac_offset[ov.network_id] + ov.frac_cell]))
        conn_j.append(np.array([ov.matrix_cell]))
        conn_t.append(np.array([c]))

    conn_i = np.concatenate(conn_i)
    conn_j = np.concatenate(conn_j)
    conn_t = np.concatenate(conn_t)
    if np.any(conn_t <= 0):
        raise AssemblyError("non-positive transmissibility encountered")

    rows = np.concatenate([conn_i, conn_j, conn_i, conn_j])
    cols = np.concatenate([conn_j, conn_i, conn_i, conn_j])
    vals = np.concatenate([-conn_t, -conn_t, conn_t, conn_t])

    q = np.zeros(n)
    src = np.zeros(n)
    if source is not None:
        src[: len(source)] = source
        q[: len(source)] += source

    def perf_dof(perf):
        if perf.medium == "matrix":
            if not (0 <= perf.cell < n_matrix):
                raise AssemblyError(f"perforation cell {perf.cell} out of range")
            return perf.cell
        return frac_offset[perf.network] + perf.cell

    def perf_mobility(perf):
        if perf.medium == "matrix":
            kx, ky = grid.perm[perf.cell, 0], grid.perm[perf.cell, 1]
            return float(np.sqrt(kx * ky)) / mu
        cell = networks[perf.network].cells[perf.cell]
        return cell.perm / mu

    well_couplings = []
    extra_rows, extra_cols, extra_vals = [], [], []
    wk = 0
    for w in wells:
        betas = [(perf_dof(p), p.pi * perf_mobility(p)) for p in w.perforations]
        if w.control == "pressure":
            wdof = well_offset + wk
            s = 0.0
            for dof, beta in betas:
                extra_rows.append(dof)
                extra_cols.append(dof)
                extra_vals.append(beta)
                q[dof] += beta * w.value
                s += beta
            extra_rows.append(wdof)
            extra_cols.append(wdof)
            extra_vals.append(s)
            q[wdof] = s * w.value
            well_couplings.append(betas)
            wk += 1
        else:
            total = sum(b for _, b in betas)
            for dof, beta in betas:
                q[dof] += w.value * beta / total
                src[dof] += w.value * beta / total

    rows = np.concatenate([rows, np.array(extra_rows, dtype=int)])
    cols = np.concatenate([cols, np.array(extra_cols, dtype=int)])
    vals = np.concatenate([vals, np.array(extra_vals)])

    A = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.sort_indices()

    return FineSystem(
        A=A,
        q=q,
        grid=grid,
        networks=list(networks),
        overlaps=list(overlaps),
        wells=list(wells),
        viscosity=mu,
        n_matrix=n_matrix,
        frac_offset=frac_offset,
        well_offset=well_offset,
        pressure_wells=pressure_wells,
        well_couplings=well_couplings,
        conn_i=conn_i,
        conn_j=conn_j,
        conn_t=conn_t,
        t_matrix=t_matrix,
        t_frac=t_frac,
        source=src,
        assembly_seconds=time.perf_counter() - t0,
    )


def t_ratio(system: FineSystem) -> TRatioReport:
    """Average fracture over average matrix transmissibility."""
    if system.t_frac.size == 0 or system.t_matrix.size == 0:
        raise AssemblyError("t_ratio needs both fracture and matrix connections")
    return TRatioReport(
        t_frac_avg=float(system.t_frac.mean()),
        t_rock_avg=float(system.t_matrix.mean()),
    )


def export_matrix_market(system: FineSystem, path_matrix, path_rhs=None):
    """Dump A (and optionally q) in Matrix Market coordinate format."""
    from scipy.io import mmwrite

    mmwrite(path_matrix, system.A.tocoo())
    if path_rhs is not None:
        mmwrite(path_rhs, system.q[:, None])
