"""Two-stage multiscale solver: coarse correction plus ILU(0) smoothing.

One iteration applies the multiscale correction ``P Ac^-1 R r``, re-evaluates
the residual, applies the smoother, and updates the solution; the loop runs
either as a stationary (Richardson) iteration or wrapped as a right
preconditioner for GMRES. After any finite-volume-restricted multiscale stage
a conservative fine-scale flux field can be reconstructed by re-solving local
Neumann problems per primal block with the block-boundary fluxes frozen.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import linalg
from .coarsen import CoarseHierarchy, build_hierarchy, merge_duals
from .multiscale import (
    CoarseSystem,
    Prolongation,
    Restriction,
    build_prolongation,
    build_restriction,
    coarse_system,
    truncate_rescale,
)

STAGE_INIT = "Initialization"
STAGE_OPERATORS = "Operators"
STAGE_FINE = "Fine linsys. constr."
STAGE_COARSE = "Coarse linsys. constr."
STAGE_SOLUTION = "Solution"
STAGE_SMOOTHER = "Smoother"

STAGE_LABELS = (STAGE_INIT, STAGE_OPERATORS, STAGE_FINE, STAGE_COARSE,
                STAGE_SOLUTION, STAGE_SMOOTHER)


class SolverError(RuntimeError):
    pass


@dataclass
class SolverConfig:
    strategy: str = "decoupled"
    restriction: str = "fe"
    alpha: float = 0.0
    ratio: tuple = (8, 8, 8)
    d_min: float = 8
    ratio_z: int = None
    mode: str = "richardson"
    tol: float = 1e-6
    max_it: int = 200
    smoother_sweeps: int = 1
    stagnation_window: int = 20
    merge_cap: int = None
    gmres_restart: int = 50

    def validated(self):
        if self.tol <= 0:
            raise SolverError("tol must be positive")
        if any(r < 1 for r in self.ratio):
            raise SolverError("coarsening ratios must be >= 1")
        if self.mode not in ("richardson", "gmres"):
            raise SolverError(f"unknown mode {self.mode!r}")
        if not (isinstance(self.d_min, (int, float)) and (self.d_min >= 1)):
            raise SolverError("d_min must be >= 1 (math.inf allowed)")
        return self


@dataclass
class SolveReport:
    mode: str
    converged: bool
    stagnated: bool
    iterations: int
    residuals: list
    stage_seconds: dict
    exit_reason: str = ""
    final_relative_error: float = None

    @property
    def total_seconds(self):
        return sum(self.stage_seconds.values())


@dataclass
class FamsOperators:
    hier: CoarseHierarchy
    prol: Prolongation
    restr: Restriction
    coarse: CoarseSystem
    smoother: object
    merged: object = None
    stage_seconds: dict = field(default_factory=dict)


def setup(system, config: SolverConfig) -> FamsOperators:
    """Build hierarchy, operators, coarse system and smoother for a solve."""
    config = config.validated()
    times = {label: 0.0 for label in STAGE_LABELS}
    times[STAGE_FINE] = system.assembly_seconds

    t0 = time.perf_counter()
    hier = build_hierarchy(system, ratio=config.ratio, d_min=config.d_min,
                           ratio_z=config.ratio_z)
    merged = merge_duals(hier, size_cap=config.merge_cap) \
        if config.strategy == "coupled" else None
    times[STAGE_INIT] += time.perf_counter() - t0

    t0 = time.perf_counter()
    prol = build_prolongation(system, hier, config.strategy, merged=merged)
    if config.alpha > 0:
        prol = truncate_rescale(prol, config.alpha)
    restr = build_restriction(hier, config.restriction, prol=prol)
    times[STAGE_OPERATORS] += time.perf_counter() - t0

    t0 = time.perf_counter()
    coarse = coarse_system(system, prol, restr)
    times[STAGE_COARSE] += time.perf_counter() - t0

    t0 = time.perf_counter()
    smoother = linalg.ilu0(system.A)
    times[STAGE_SMOOTHER] += time.perf_counter() - t0

    return FamsOperators(hier=hier, prol=prol, restr=restr, coarse=coarse,
                         smoother=smoother, merged=merged, stage_seconds=times)


def _smooth(ops, r, sweeps):
    z = ops.smoother.solve(r)
    for _ in range(sweeps - 1):
        z = z + ops.smoother.solve(r - ops.hier.system.A @ z)
    return z


def fams_solve(system, config: SolverConfig, reference=None, x0=None):
    """Run the two-stage iteration to ``tol`` and report per-stage timings.

    In Richardson mode, non-decreasing residuals over the stagnation window
    terminate the loop with the report flagged instead of looping forever.
    """
    config = config.validated()
    ops = setup(system, config)
    times = ops.stage_seconds
    A, q = system.A, system.q

    p = np.zeros(system.n) if x0 is None else np.array(x0, dtype=float)

    if config.mode == "gmres":
        t0 = time.perf_counter()
        precond = _preconditioner(ops, config)
        norm_q = np.linalg.norm(q)
        tol_eff = config.tol / max(1.0, norm_q)  # enforce an absolute target
        x, info = linalg.gmres(A, q, M=precond, tol=tol_eff,
                               max_it=config.max_it,
                               restart=config.gmres_restart, x0=x0)
        times[STAGE_SOLUTION] += time.perf_counter() - t0
        report = SolveReport(
            mode="gmres",
            converged=info.converged,
            stagnated=info.stagnated,
            iterations=info.iterations,
            residuals=info.residuals,
            stage_seconds=times,
            exit_reason="converged" if info.converged else
                        ("stagnated" if info.stagnated else "max_it"),
        )
        _attach_error(report, x, reference)
        return x, report

    r = q - A @ p
    residuals = [float(np.linalg.norm(r))]
    converged = residuals[0] <= config.tol
    stagnated = False
    reason = "converged" if converged else "max_it"
    it = 0
    while not converged and it < config.max_it:
        t0 = time.perf_counter()
        dp1 = ops.prol.P @ ops.coarse.solve(ops.restr.R @ r)
        r_half = r - A @ dp1
        times[STAGE_SOLUTION] += time.perf_counter() - t0

        t0 = time.perf_counter()
        dp2 = _smooth(ops, r_half, config.smoother_sweeps)
        times[STAGE_SMOOTHER] += time.perf_counter() - t0

        t0 = time.perf_counter()
        p = p + dp1 + dp2
        r = q - A @ p
        rnorm = float(np.linalg.norm(r))
        times[STAGE_SOLUTION] += time.perf_counter() - t0
        residuals.append(rnorm)
        it += 1

        if not np.isfinite(rnorm) or rnorm > 1e10 * max(residuals[0], 1e-300):
            stagnated = True
            reason = "diverged"
            break
        if rnorm <= config.tol:
            converged = True
            reason = "converged"
            break
        w = config.stagnation_window
        if len(residuals) > w and residuals[-1] > 0.99 * residuals[-1 - w]:
            stagnated = True
            reason = "stagnated"
            break

    report = SolveReport(
        mode="richardson",
        converged=converged,
        stagnated=stagnated,
        iterations=it,
        residuals=residuals,
        stage_seconds=times,
        exit_reason=reason,
    )
    _attach_error(report, p, reference)
    return p, report


def _attach_error(report, p, reference):
    if reference is not None:
        report.final_relative_error = float(
            np.linalg.norm(p - reference) / np.linalg.norm(reference)
        )


def _preconditioner(ops, config):
    A = ops.hier.system.A

    def apply(v):
        z1 = ops.prol.P @ ops.coarse.solve(ops.restr.R @ v)
        z2 = _smooth(ops, v - A @ z1, config.smoother_sweeps)
        return z1 + z2

    return apply


def fams_precondition(system, config: SolverConfig):
    """Build the two-stage preconditioner as a linear operator on residuals.

    Returns ``(apply, ops)`` where ``apply(r)`` performs one multiscale
    correction plus one smoothing sweep.
    """
    config = config.validated()
    ops = setup(system, config)
    return _preconditioner(ops, config), ops


def single_pass_error(system, config: SolverConfig, reference=None):
    """Error 2-norm after a single multiscale stage (no smoothing)."""
    config = config.validated()
    if reference is None:
        reference = linalg.lu_solve(system.A, system.q, refine=2)
    ops = setup(system, config)
    p1 = ops.prol.P @ ops.coarse.solve(ops.restr.R @ system.q)
    return float(np.linalg.norm(p1 - reference))


# ---------------------------------------------------------------------------
# Conservative flux reconstruction
# ---------------------------------------------------------------------------

@dataclass
class FluxField:
    """Fine-scale fluxes over every two-point connection plus well exchanges."""

    conn_i: np.ndarray
    conn_j: np.ndarray
    flux: np.ndarray          # positive from i to j
    well_flux: list           # per pressure well: signed rate into the domain
    well_cell_flux: np.ndarray  # per-cell outflow into pressure wells
    source: np.ndarray        # volumetric sources (rate wells, external)
    n_media: int

    def divergence(self):
        """Net outflow minus source per media cell; ~0 everywhere when the
        field is conservative."""
        div = np.zeros(self.n_media)
        np.add.at(div, self.conn_i, self.flux)
        np.add.at(div, self.conn_j, -self.flux)
        div += self.well_cell_flux
        div -= self.source[: self.n_media]
        return div

    def global_balance(self):
        """(total in-flow, total out-flow) across wells and sources."""
        inflow = float(np.sum(self.source[: self.n_media]))
        for wf in self.well_flux:
            inflow += wf
        return inflow


def fv_multiscale_update(system, hier, prol, p=None):
    """One finite-volume-restricted multiscale correction from ``p``."""
    restr = build_restriction(hier, "fv")
    coarse = coarse_system(system, prol, restr)
    p = np.zeros(system.n) if p is None else np.asarray(p, dtype=float)
    r = system.q - system.A @ p
    return p + prol.P @ coarse.solve(restr.R @ r)


def reconstruct_flux(system, hier, prol, p=None):
    """Conservative fine-scale flux field after an FV multiscale stage.

    Runs one FV-restricted coarse correction from ``p``, freezes every
    cross-block (and well) flux from that approximation, and re-solves each
    primal block with Neumann data and one pinned pressure at the block's
    coarse node. Returns ``(FluxField, p_ms)``.
    """
    p_ms = fv_multiscale_update(system, hier, prol, p=p)
    n_media = system.well_offset
    primal = hier.primal_of
    ci, cj, ct = system.conn_i, system.conn_j, system.conn_t

    cross = primal[ci] != primal[cj]
    p_block = np.full(n_media, np.nan)

    # per-cell frozen contributions: cross-block connection fluxes and wells
    frozen_rhs = np.zeros(n_media)
    fi, fj, ft = ci[cross], cj[cross], ct[cross]
    fflux = ft * (p_ms[fi] - p_ms[fj])
    np.add.at(frozen_rhs, fi, -fflux)
    np.add.at(frozen_rhs, fj, fflux)

    well_cell_flux = np.zeros(n_media)
    well_flux = []
    for k, couplings in enumerate(system.well_couplings):
        pw = p_ms[system.well_dof(k)]
        total = 0.0
        for dof, beta in couplings:
            f = beta * (pw - p_ms[dof])  # into the reservoir cell
            frozen_rhs[dof] += f
            well_cell_flux[dof] -= f
            total += f
        well_flux.append(total)

    # local Neumann problems per primal block over the internal connections
    internal = ~cross
    ii, jj, tt = ci[internal], cj[internal], ct[internal]
    n_blocks = int(primal[:n_media].max()) + 1
    order = np.argsort(primal[:n_media], kind="stable")
    block_cells = np.split(order, np.searchsorted(primal[:n_media][order],
                                                  np.arange(1, n_blocks)))
    conn_block = primal[ii]
    conn_order = np.argsort(conn_block, kind="stable")
    conn_split = np.split(conn_order, np.searchsorted(conn_block[conn_order],
                                                      np.arange(1, n_blocks)))

    for b in range(n_blocks):
        cells = block_cells[b]
        if len(cells) == 0:
            continue
        local = {c: t for t, c in enumerate(cells)}
        sel = conn_split[b]
        la = np.array([local[c] for c in ii[sel]], dtype=int)
        lb = np.array([local[c] for c in jj[sel]], dtype=int)
        t = tt[sel]
        m = len(cells)
        rows = np.concatenate([la, lb, la, lb])
        cols = np.concatenate([lb, la, la, lb])
        vals = np.concatenate([-t, -t, t, t])
        L = sp.coo_matrix((vals, (rows, cols)), shape=(m, m)).tolil()
        rhs = system.source[cells] + frozen_rhs[cells]
        pin = local[int(hier.coarse_dof_cell[b])]
        L.rows[pin] = [pin]
        L.data[pin] = [1.0]
        rhs = rhs.copy()
        rhs[pin] = p_ms[cells[pin]]
        try:
            x = splu(L.tocsc()).solve(rhs)
        except RuntimeError as exc:
            raise SolverError(
                f"singular local Neumann problem in block {b}: {exc}"
            ) from exc
        p_block[cells] = x

    flux = np.where(cross, ct * (p_ms[ci] - p_ms[cj]),
                    ct * (p_block[ci] - p_block[cj]))
    return (
        FluxField(
            conn_i=ci,
            conn_j=cj,
            flux=flux,
            well_flux=well_flux,
            well_cell_flux=well_cell_flux,
            source=system.source,
            n_media=n_media,
        ),
        p_ms,
    )
