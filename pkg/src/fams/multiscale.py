"""Multiscale prolongation/restriction operators and the coarse system.

Basis functions are computed algebraically, class by class in wirebasket
order. Each stage solves one localized block system

    L X = -(couplings kept toward already-resolved classes) X_resolved + well terms

where L is the in-class coupling block whose diagonal has the *neglected*
couplings removed (lumped), so that constants are preserved and the columns
form a partition of unity. Vertex rows are Kronecker rows; well rows are an
identity block. The four coupling strategies only differ in which cross-media
couplings are kept, lumped, or chained through previously resolved values:

* decoupled: both media localized away from each other
* frac:      fracture basis resolved first, then fed into the matrix stages
* rock:      matrix basis resolved first, then fed into the fracture stages
* coupled:   same-rank classes of both media solved as one merged block

Local solves are per-dual-block in effect: the in-class coupling block is
block-diagonal over the dual blocks, so one sparse LU of the class block
performs exactly the per-block back-substitutions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .coarsen import EDGE, FACE, INTERIOR, VERTEX, CoarseHierarchy, MergedDuals


class MultiscaleError(ValueError):
    pass


STRATEGIES = ("decoupled", "frac", "rock", "coupled")


@dataclass
class Prolongation:
    P: sp.csr_matrix
    strategy: str
    column_dof: np.ndarray     # coarse dof -> fine dof of its node (or well dof)
    column_medium: np.ndarray  # 0 matrix, 1 fracture, 2 well
    has_well_columns: bool = True

    @property
    def shape(self):
        return self.P.shape

    def row_sums(self):
        return np.asarray(self.P.sum(axis=1)).ravel()


@dataclass
class Restriction:
    R: sp.csr_matrix
    kind: str  # "fv", "fe" or "mix"


@dataclass
class CoarseSystem:
    Ac: sp.csr_matrix
    lu: object

    @property
    def n(self):
        return self.Ac.shape[0]

    def solve(self, rc):
        return self.lu.solve(np.asarray(rc, dtype=float))


@dataclass(frozen=True)
class _Stage:
    rows: np.ndarray
    drivers: tuple  # index sets whose resolved P rows feed the rhs

    # every coupling that is neither in-class nor toward a driver set is
    # neglected, i.e. removed from the localized diagonal


def _class_sets(hier: CoarseHierarchy):
    s = {}
    for med, name in ((0, "m"), (1, "f")):
        for cls, tag in ((INTERIOR, "I"), (FACE, "F"), (EDGE, "E"), (VERTEX, "V")):
            s[f"{tag}{name}"] = hier.cells_of(med, cls)
    s["mat"] = np.where(hier.medium_of == 0)[0]
    s["frc"] = np.where(hier.medium_of == 1)[0]
    return s


def _stages(strategy, s):
    cat = lambda *xs: np.sort(np.concatenate(xs)) if xs else np.empty(0, int)
    if strategy == "decoupled":
        # both media localized away from each other
        return [
            _Stage(s["Em"], (s["Vm"],)),
            _Stage(s["Fm"], (s["Em"],)),
            _Stage(s["Im"], (s["Fm"],)),
            _Stage(s["Ef"], (s["Vf"],)),
            _Stage(s["Ff"], (s["Ef"],)),
        ]
    if strategy == "frac":
        # fracture basis first, then chained into the matrix as Dirichlet data
        return [
            _Stage(s["Ef"], (s["Vf"],)),
            _Stage(s["Ff"], (s["Ef"],)),
            _Stage(s["Em"], (s["Vm"], s["frc"])),
            _Stage(s["Fm"], (s["Em"], s["frc"])),
            _Stage(s["Im"], (s["Fm"], s["frc"])),
        ]
    if strategy == "rock":
        # matrix basis first, then chained into the fractures
        return [
            _Stage(s["Em"], (s["Vm"],)),
            _Stage(s["Fm"], (s["Em"],)),
            _Stage(s["Im"], (s["Fm"],)),
            _Stage(s["Ef"], (s["Vf"], s["mat"])),
            _Stage(s["Ff"], (s["Ef"], s["mat"])),
        ]
    if strategy == "coupled":
        # merged same-rank classes of both media solved together
        E, F, I, V = (cat(s["Em"], s["Ef"]), cat(s["Fm"], s["Ff"]), s["Im"],
                      cat(s["Vm"], s["Vf"]))
        return [
            _Stage(E, (V,)),
            _Stage(F, (E, V)),
            _Stage(I, (F, E, V)),
        ]
    raise MultiscaleError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


def _well_rhs(system, rows, n_cols, well_col0, include_wells):
    """Sparse (len(rows), n_cols) block of PI-coupling sources for well columns."""
    shape = (len(rows), n_cols)
    if not include_wells or not system.pressure_wells:
        return sp.csr_matrix(shape)
    pos = {dof: i for i, dof in enumerate(rows)}
    ii, jj, vv = [], [], []
    for k, couplings in enumerate(system.well_couplings):
        for dof, beta in couplings:
            i = pos.get(dof)
            if i is not None:
                ii.append(i)
                jj.append(well_col0 + k)
                vv.append(beta)
    return sp.csr_matrix((vv, (ii, jj)), shape=shape)


def _drop_cross_block_couplings(Loff, rows, merged):
    """For a capped Coupled-AMS merge: neglect couplings between cells of the
    same class that ended up in different merged blocks."""
    coo = Loff.tocoo()
    blk = merged.merged_of_cell[rows]
    keep = blk[coo.row] == blk[coo.col]
    if keep.all():
        return Loff
    return sp.csr_matrix(
        (coo.data[keep], (coo.row[keep], coo.col[keep])), shape=Loff.shape
    )


def _beta_diag(system, rows):
    """Well-coupling sink per row (the basis functions keep it on the diagonal)."""
    beta = np.zeros(len(rows))
    if system.pressure_wells:
        pos = {dof: i for i, dof in enumerate(rows)}
        for couplings in system.well_couplings:
            for dof, b in couplings:
                i = pos.get(dof)
                if i is not None:
                    beta[i] += b
    return beta


def build_prolongation(system, hier, strategy, merged=None, include_wells=True,
                       _columns=None) -> Prolongation:
    """Assemble the prolongation operator for one coupling strategy.

    ``merged`` is only consulted for ``coupled`` runs with a merge size cap,
    where couplings between distinct merged blocks are dropped from the local
    systems (and lumped) to bound the basis support.
    """
    if strategy not in STRATEGIES:
        raise MultiscaleError(f"unknown strategy {strategy!r}")
    A = system.A
    n = system.n
    s = _class_sets(hier)

    n_media_cols = int(np.sum(hier.coarse_medium < 2))
    n_wells = len(system.pressure_wells)
    n_cols = n_media_cols + (n_wells if include_wells else 0)

    # Kronecker rows: vertices map to their own column, wells to theirs
    rows0 = list(hier.coarse_dof_cell[:n_media_cols])
    cols0 = list(range(n_media_cols))
    if include_wells:
        rows0 += [system.well_dof(k) for k in range(n_wells)]
        cols0 += [n_media_cols + k for k in range(n_wells)]
    P = sp.csr_matrix((np.ones(len(rows0)), (rows0, cols0)), shape=(n, n_cols))

    col_slice = _columns if _columns is not None else slice(None)

    for st in _stages(strategy, s):
        R = st.rows
        if len(R) == 0:
            continue
        AR = A[R]
        # localized diagonal, built from the kept couplings only: subtracting
        # the neglected (possibly huge) cross-media terms from the assembled
        # diagonal would cancel catastrophically at high contrast
        Loff = AR[:, R].tolil()
        Loff.setdiag(0.0)
        Loff = Loff.tocsr()
        if strategy == "coupled" and merged is not None and merged.capped:
            Loff = _drop_cross_block_couplings(Loff, R, merged)
        keep_sum = np.asarray(Loff.sum(axis=1)).ravel()
        for D in st.drivers:
            if len(D):
                keep_sum += np.asarray(AR[:, D].sum(axis=1)).ravel()
        L = Loff + sp.diags(_beta_diag(system, R) - keep_sum)

        rhs = _well_rhs(system, R, n_cols, n_media_cols, include_wells)
        for D in st.drivers:
            if len(D):
                rhs = rhs - AR[:, D] @ P[D]
        rhs = rhs.tocsc()[:, col_slice] if _columns is not None else rhs.tocsc()

        try:
            lu = splu(L.tocsc())
        except RuntimeError as exc:
            raise MultiscaleError(
                f"singular local block in stage with {len(R)} cells: {exc}"
            ) from exc

        # chunked multi-rhs solve; untouched dual blocks stay exactly zero
        ii, jj, vv = [], [], []
        dense_cols = rhs.shape[1]
        chunk = max(1, min(dense_cols, int(4e6 / max(len(R), 1))))
        for c0 in range(0, dense_cols, chunk):
            c1 = min(c0 + chunk, dense_cols)
            X = lu.solve(rhs[:, c0:c1].toarray())
            if X.ndim == 1:
                X = X[:, None]
            nz = np.nonzero(X)
            ii.append(nz[0])
            jj.append(nz[1] + c0)
            vv.append(X[nz])
        if ii:
            ii, jj, vv = map(np.concatenate, (ii, jj, vv))
            if _columns is not None:
                jj = np.asarray(_columns)[jj]
            block = sp.csr_matrix((vv, (R[ii], jj)), shape=(n, n_cols))
            P = P + block

    P = P.tocsr()
    P.sort_indices()
    return Prolongation(
        P=P,
        strategy=strategy,
        column_dof=np.concatenate(
            [hier.coarse_dof_cell[:n_media_cols],
             [system.well_dof(k) for k in range(n_wells)] if include_wells else []]
        ).astype(np.int64),
        column_medium=np.concatenate(
            [hier.coarse_medium[:n_media_cols],
             np.full(n_wells if include_wells else 0, 2, dtype=np.int8)]
        ),
        has_well_columns=include_wells,
    )


def add_well_columns(prol, system, hier, merged=None) -> Prolongation:
    """Extend a media-only prolongation with one locally supported basis
    column per pressure well, restoring the partition of unity."""
    if prol.has_well_columns:
        return prol
    n_wells = len(system.pressure_wells)
    if n_wells == 0:
        return replace(prol, has_well_columns=True)
    n_media_cols = prol.P.shape[1]
    full = build_prolongation(
        system, hier, prol.strategy, merged=merged, include_wells=True,
        _columns=list(range(n_media_cols, n_media_cols + n_wells)),
    )
    P = sp.hstack([prol.P, full.P[:, n_media_cols:]]).tocsr()
    P.sort_indices()
    return replace(
        prol,
        P=P,
        column_dof=full.column_dof,
        column_medium=full.column_medium,
        has_well_columns=True,
    )


def truncate_rescale(prol, alpha) -> Prolongation:
    """Drop entries below ``alpha`` in magnitude and rescale each affected row
    by its remaining sum, preserving the partition of unity."""
    if not 0.0 <= alpha < 1.0:
        raise MultiscaleError(f"alpha must be in [0, 1), got {alpha}")
    if alpha == 0.0:
        return replace(prol, P=prol.P.copy())
    P = prol.P.tocsr().copy()
    keep = np.abs(P.data) >= alpha
    removed_rows = np.unique(
        np.repeat(np.arange(P.shape[0]), np.diff(P.indptr))[~keep]
    )
    P.data[~keep] = 0.0
    P.eliminate_zeros()
    sums = np.asarray(P.sum(axis=1)).ravel()
    empty = np.setdiff1d(removed_rows, np.where(sums != 0)[0])
    if empty.size:
        raise MultiscaleError(
            f"alpha={alpha} truncated row {empty[0]} to empty; threshold too aggressive"
        )
    scale = np.ones(P.shape[0])
    scale[removed_rows] = 1.0 / sums[removed_rows]
    P = sp.diags(scale) @ P
    P = P.tocsr()
    P.sort_indices()
    return replace(prol, P=P)


def build_restriction(hier, kind, prol=None, fv_media=(1, 2)) -> Restriction:
    """MSFV indicator restriction, MSFE transpose restriction, or the hybrid
    that restricts the tagged media (default fractures and wells) by FV and
    the rest by FE."""
    kind = kind.lower()
    if kind not in ("fv", "fe", "mix"):
        raise MultiscaleError(f"unknown restriction kind {kind!r}")
    if kind in ("fe", "mix") and prol is None:
        raise MultiscaleError(f"{kind} restriction needs the prolongation")

    if kind == "fe":
        return Restriction(R=prol.P.T.tocsr(), kind="fe")

    n = len(hier.primal_of)
    nc = hier.n_coarse
    fv = sp.csr_matrix(
        (np.ones(n), (hier.primal_of, np.arange(n))), shape=(nc, n)
    )
    if kind == "fv":
        return Restriction(R=fv, kind="fv")

    is_fv_row = np.isin(hier.coarse_medium, np.asarray(fv_media, dtype=np.int8))
    pick = sp.diags(is_fv_row.astype(float))
    rest = sp.diags((~is_fv_row).astype(float))
    R = (pick @ fv + rest @ prol.P.T).tocsr()
    return Restriction(R=R, kind="mix")


def coarse_system(system, prol, restr) -> CoarseSystem:
    A = system.A
    if prol.P.shape[0] != A.shape[0] or restr.R.shape[1] != A.shape[0]:
        raise MultiscaleError("operator dimensions do not match the fine system")
    Ac = (restr.R @ A @ prol.P).tocsr()
    Ac.sum_duplicates()
    Ac.sort_indices()
    try:
        lu = splu(Ac.tocsc())
    except RuntimeError as exc:
        raise MultiscaleError(f"singular coarse system: {exc}") from exc
    return CoarseSystem(Ac=Ac, lu=lu)
