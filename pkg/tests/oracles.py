"""Independent reference computations the tests check the library against.

Each oracle deliberately takes a different route from the implementation:
the basis-function oracle solves small dense systems per dual block with
explicit Dirichlet value injection (the library does global per-class sparse
back-substitution); graph distances come from plain BFS; products from dense
matmul.
"""

from collections import deque

import numpy as np

from fams.coarsen import EDGE, FACE, INTERIOR, VERTEX

_RANK = {INTERIOR: 0, FACE: 1, EDGE: 2, VERTEX: 3}


def bfs_distances(adj, start):
    dist = [-1] * len(adj)
    dist[start] = 0
    q = deque([start])
    while q:
        u = q.popleft()
        for v in adj[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


def dense_matmul(A, B):
    return np.asarray(A.todense()) @ np.asarray(B.todense())


def _stage_plan(strategy):
    """(medium, class) solve order per coupling strategy; None medium means
    the merged cross-media stage."""
    mat = [(0, EDGE), (0, FACE), (0, INTERIOR)]
    frc = [(1, EDGE), (1, FACE)]
    if strategy == "decoupled":
        return mat + frc
    if strategy == "frac":
        return frc + mat
    if strategy == "rock":
        return mat + frc
    if strategy == "coupled":
        return [(None, EDGE), (None, FACE), (None, INTERIOR)]
    raise ValueError(strategy)


def _is_driver(strategy, row_med, row_cls, col_med, col_cls):
    """Does the (already resolved) column cell act as Dirichlet data for this
    row cell, under the strategy's coupling rule?"""
    if strategy == "coupled":
        return _RANK[col_cls] > _RANK[row_cls]
    same = row_med == col_med
    if same:
        return _RANK[col_cls] == _RANK[row_cls] + 1
    if strategy == "frac":
        return row_med == 0 and col_med == 1
    if strategy == "rock":
        return row_med == 1 and col_med == 0
    return False  # decoupled: никогда across media


def oracle_prolongation(system, hier, strategy, merged=None):
    """Dense per-dual-block basis construction with value injection.

    For every dual block of the active stage, assemble the local dense system
    over the block's cells: in-block couplings stay, resolved neighbors inject
    their basis values into the right-hand side, every other coupling is
    removed from the diagonal. Well perforations keep their coupling on the
    diagonal and source the well's own column.
    """
    A = system.A.tocsr()
    n = system.n
    n_wells = len(system.pressure_wells)
    nc = hier.n_coarse

    med = hier.medium_of
    cls = hier.class_of

    P = np.zeros((n, nc))
    for c, dof in enumerate(hier.coarse_dof_cell):
        P[dof, c] = 1.0

    beta_of = {}
    for k, couplings in enumerate(system.well_couplings):
        col = nc - n_wells + k
        for dof, beta in couplings:
            beta_of.setdefault(dof, []).append((col, beta))

    resolved = np.zeros(n, dtype=bool)
    resolved[cls == VERTEX] = True
    resolved[med == 2] = True

    for st_med, st_cls in _stage_plan(strategy):
        if st_med is None:
            rows = np.where((med < 2) & (cls == st_cls))[0]
            block_of = merged.merged_of_cell
        else:
            rows = np.where((med == st_med) & (cls == st_cls))[0]
            block_of = hier.dual_block_of
        if len(rows) == 0:
            continue
        for b in np.unique(block_of[rows]):
            cells = rows[block_of[rows] == b]
            pos = {c: t for t, c in enumerate(cells)}
            m = len(cells)
            L = np.zeros((m, m))
            rhs = np.zeros((m, nc))
            for c in cells:
                i = pos[c]
                row = A.indices[A.indptr[c]:A.indptr[c + 1]]
                val = A.data[A.indptr[c]:A.indptr[c + 1]]
                kept = 0.0  # diagonal = kept couplings + well sink
                for j, a in zip(row, val):
                    if j == c:
                        continue
                    if j in pos:
                        L[i, pos[j]] += a
                        kept += a
                    elif resolved[j] and _is_driver(strategy, med[c], cls[c],
                                                    med[j], cls[j]):
                        rhs[i] -= a * P[j]
                        kept += a
                    # any other coupling is neglected (dropped from the diagonal)
                L[i, i] = -kept
                for col, beta in beta_of.get(c, ()):
                    rhs[i, col] += beta
                    L[i, i] += beta
            P[cells] = np.linalg.solve(L, rhs)
        resolved[rows] = True

    return P
