"""Primal/dual coarse grids for matrix and fractures, wirebasket machinery.

The matrix primal grid is a uniform partition (boundary blocks absorb
remainders) with the geometric center cell of each block as coarse node.
Connecting the nodes yields the overlapping dual grid, whose cells are
classified by how many of their axis coordinates line up with a node
coordinate: all axes -> Vertex, one less -> Edge, then Face, then Interior.
In 2D (nz = 1) the z axis is always aligned, so no Interior cells exist.

Fracture networks are coarsened with a distance-based breadth-first pass over
the cell graph that plants coarse nodes pairwise at least ``d_min`` cells
apart; remaining cells are dual Edges. In 3D the pass runs on the planar
projection and the result is extruded uniformly along z, with the same
alignment-count rule giving Vertex/Edge/Face classes.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .assembly import FineSystem


class CoarsenError(ValueError):
    pass


INTERIOR, FACE, EDGE, VERTEX, WELL = 0, 1, 2, 3, 4

CLASS_NAMES = {INTERIOR: "interior", FACE: "face", EDGE: "edge", VERTEX: "vertex", WELL: "well"}

# wirebasket order: I^m, F^m, E^m, V^m, F^f, E^f, V^f, wells
_RANK = {
    (0, INTERIOR): 0, (0, FACE): 1, (0, EDGE): 2, (0, VERTEX): 3,
    (1, FACE): 4, (1, EDGE): 5, (1, VERTEX): 6,
    (2, WELL): 7,
}


@dataclass
class PrimalPartition:
    block_of: np.ndarray       # fine cell -> primal block id (0-based)
    node_of_block: np.ndarray  # block id -> fine cell of its coarse node

    @property
    def n_blocks(self) -> int:
        return len(self.node_of_block)


@dataclass
class DualPartition:
    class_of: np.ndarray       # fine cell -> INTERIOR/FACE/EDGE/VERTEX
    dual_block_of: np.ndarray  # fine cell -> id of its same-class connected block

    def cells_of_class(self, cls):
        return np.where(self.class_of == cls)[0]


@dataclass
class WirebasketPermutation:
    """Reordering of the global system into wirebasket class order."""

    order: np.ndarray  # old indices listed in new order (stable within class)
    perm: np.ndarray   # old index -> new index

    def apply(self, A):
        return A[self.order][:, self.order]

    def apply_vec(self, x):
        return np.asarray(x)[self.order]

    def invert_vec(self, y):
        x = np.empty_like(np.asarray(y))
        x[self.order] = y
        return x


@dataclass
class MergedDuals:
    """Same-class dual blocks merged across media by cross-media adjacency."""

    merged_of_cell: np.ndarray   # media DOF -> merged block id (-1 for vertices/wells)
    n_merged: int
    capped: bool = False


# ---------------------------------------------------------------------------
# Matrix coarsening
# ---------------------------------------------------------------------------

def _axis_blocks(n, ratio):
    if ratio < 1:
        raise CoarsenError(f"coarsening ratio must be >= 1, got {ratio}")
    if ratio > n:
        raise CoarsenError(f"coarsening ratio {ratio} larger than grid extent {n}")
    nb = n // ratio
    starts = [k * ratio for k in range(nb)]
    ends = [*(starts[1:]), n]  # last block absorbs the remainder
    nodes = [s + (e - s - 1) // 2 for s, e in zip(starts, ends)]
    block_of = np.empty(n, dtype=np.int64)
    for k, (s, e) in enumerate(zip(starts, ends)):
        block_of[s:e] = k
    return nodes, block_of


def coarsen_matrix(grid, ratio):
    """Uniform primal blocks plus the alignment-count dual classification."""
    rx, ry, rz = ratio if len(ratio) == 3 else (*ratio, 1)
    nodes_x, bx = _axis_blocks(grid.nx, rx)
    nodes_y, by = _axis_blocks(grid.ny, ry)
    nodes_z, bz = _axis_blocks(grid.nz, rz)
    nbx, nby, nbz = len(nodes_x), len(nodes_y), len(nodes_z)

    i = np.tile(np.arange(grid.nx), grid.ny * grid.nz)
    j = np.tile(np.repeat(np.arange(grid.ny), grid.nx), grid.nz)
    k = np.repeat(np.arange(grid.nz), grid.nx * grid.ny)

    block_of = bx[i] + nbx * (by[j] + nby * bz[k])
    node_of_block = np.empty(nbx * nby * nbz, dtype=np.int64)
    for cz in range(nbz):
        for cy in range(nby):
            for cx in range(nbx):
                node_of_block[cx + nbx * (cy + nby * cz)] = grid.cell_index(
                    nodes_x[cx], nodes_y[cy], nodes_z[cz]
                )

    ax = np.isin(i, nodes_x).astype(np.int8)
    ay = np.isin(j, nodes_y).astype(np.int8)
    az = np.isin(k, nodes_z).astype(np.int8)
    aligned = ax + ay + az
    class_of = np.select(
        [aligned == 3, aligned == 2, aligned == 1], [VERTEX, EDGE, FACE], INTERIOR
    ).astype(np.int8)

    dual_block_of = _structured_class_components(grid, class_of)
    return (
        PrimalPartition(block_of, node_of_block),
        DualPartition(class_of, dual_block_of),
        (nodes_x, nodes_y, nodes_z),
    )


def _structured_class_components(grid, class_of):
    """Connected components of same-class cells under face adjacency."""
    import scipy.sparse as sp
    from scipy.sparse.csgraph import connected_components

    n = grid.n_cells
    idx = np.arange(n).reshape(grid.nz, grid.ny, grid.nx)
    rows, cols = [], []
    for pos in (2, 1, 0):
        sl_lo = [slice(None)] * 3
        sl_hi = [slice(None)] * 3
        if idx.shape[pos] < 2:
            continue
        sl_lo[pos] = slice(None, -1)
        sl_hi[pos] = slice(1, None)
        a = idx[tuple(sl_lo)].ravel()
        b = idx[tuple(sl_hi)].ravel()
        same = class_of[a] == class_of[b]
        rows.append(a[same])
        cols.append(b[same])
    if rows:
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
    else:
        rows = cols = np.empty(0, dtype=int)
    g = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(g, directed=False)
    return labels.astype(np.int64)


# ---------------------------------------------------------------------------
# Fracture coarsening
# ---------------------------------------------------------------------------

def distance_coarsen(adj, d_min, start=None):
    """Distance-based coarse-node selection on a cell graph.

    Breadth-first passes guarantee every pair of coarse nodes is at least
    ``d_min`` cells apart and every cell lies within ``d_min`` of its block's
    node. ``d_min`` may be ``math.inf`` (single node). Returns
    ``(primal, level, vertices)`` with 0-based primal ids.
    """
    n = len(adj)
    if n == 0:
        raise CoarsenError("empty network")
    finite = math.isfinite(d_min)
    if finite and d_min < 1:
        raise CoarsenError(f"d_min must be >= 1, got {d_min}")
    d_min_i = int(d_min) if finite else None

    INF = n + 1
    level = np.full(n, INF, dtype=np.int64)
    primal = np.full(n, -1, dtype=np.int64)
    in_qv = np.zeros(n, dtype=bool)
    qv = deque()
    s = 0 if start is None else start
    qv.append(s)
    in_qv[s] = True
    vertices = []

    while qv:
        v = qv.popleft()
        if not in_qv[v]:
            continue  # claimed by an earlier node in the meantime
        in_qv[v] = False
        vid = len(vertices)
        vertices.append(v)
        level[v] = 0
        primal[v] = vid

        q1 = deque([v])
        dist = 1
        while q1 and (d_min_i is None or dist <= d_min_i):
            q2 = deque()
            while q1:
                cell = q1.popleft()
                for nb in adj[cell]:
                    if level[nb] > dist:
                        if in_qv[nb]:
                            in_qv[nb] = False
                        level[nb] = dist
                        primal[nb] = vid
                        q2.append(nb)
            q1 = q2
            dist += 1
        for cell in q1:  # frontier at exactly d_min: coarse-node candidates
            if not in_qv[cell]:
                qv.append(cell)
                in_qv[cell] = True

    return primal, level, vertices


def extrude_fracture_coarsening(planar_primal, planar_vertices, cell_planar, cell_z, nz, ratio_z):
    """Extrude a planar fracture coarsening uniformly along z.

    ``cell_planar``/``cell_z`` give each 3D fracture cell's planar entity
    (local planar index) and z level. Coarse nodes are replicated at the z
    levels of the z-axis block centers; cells aligned in both the planar and
    the z sense are Vertices, in exactly one Edges, in none Faces.
    """
    if ratio_z > nz:
        raise CoarsenError(f"ratio_z {ratio_z} larger than nz {nz}")
    z_nodes, z_block = _axis_blocks(nz, ratio_z)
    z_node_set = set(z_nodes)
    planar_vertex_set = set(planar_vertices)
    vert_index = {p: i for i, p in enumerate(planar_vertices)}

    n = len(cell_planar)
    n_planar_blocks = int(planar_primal.max()) + 1
    primal = np.empty(n, dtype=np.int64)
    class_of = np.empty(n, dtype=np.int8)
    node_cell = {}
    for c in range(n):
        p, z = cell_planar[c], cell_z[c]
        primal[c] = planar_primal[p] + n_planar_blocks * z_block[z]
        on_p = p in planar_vertex_set
        on_z = z in z_node_set
        cnt = int(on_p) + int(on_z)
        class_of[c] = (FACE, EDGE, VERTEX)[cnt]
        if cnt == 2:
            node_cell[(vert_index[p], z_block[z])] = c

    # compress primal ids to the blocks that actually contain cells
    used = np.unique(primal)
    remap = {b: i for i, b in enumerate(used)}
    primal = np.array([remap[b] for b in primal], dtype=np.int64)

    node_of_block = np.full(len(used), -1, dtype=np.int64)
    for (pv, zb), c in node_cell.items():
        node_of_block[primal[c]] = c
    if np.any(node_of_block < 0):
        raise CoarsenError("a fracture primal block ended up without a coarse node")
    return primal, class_of, node_of_block


def coarsen_fractures(net, d_min, ratio_z=1):
    """Coarsen one network: planar distance pass, then z extrusion.

    The starting cell is the lowest-index planar cell, for reproducibility.
    Returns ``(PrimalPartition, DualPartition)`` over the network's cells.
    """
    from .mesh import planar_graph

    ids, padj, index = planar_graph(net)
    p_primal, p_level, p_vertices = distance_coarsen(padj, d_min)

    nz = max(c.z_level for c in net.cells) + 1
    cell_planar = np.array([index[c.planar_id] for c in net.cells], dtype=np.int64)
    cell_z = np.array([c.z_level for c in net.cells], dtype=np.int64)
    primal, class_of, node_of_block = extrude_fracture_coarsening(
        p_primal, p_vertices, cell_planar, cell_z, nz, min(ratio_z, nz)
    )

    adj = net.adjacency()
    dual_block_of = _graph_class_components(adj, class_of)
    return (
        PrimalPartition(primal, node_of_block),
        DualPartition(class_of, dual_block_of),
        p_level,
    )


def _graph_class_components(adj, class_of):
    n = len(adj)
    labels = np.full(n, -1, dtype=np.int64)
    nxt = 0
    for s in range(n):
        if labels[s] >= 0:
            continue
        labels[s] = nxt
        stack = [s]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if labels[v] < 0 and class_of[v] == class_of[u]:
                    labels[v] = nxt
                    stack.append(v)
        nxt += 1
    return labels


# ---------------------------------------------------------------------------
# Global hierarchy
# ---------------------------------------------------------------------------

@dataclass
class CoarseHierarchy:
    """Everything the multiscale operators need, in global DOF numbering."""

    system: FineSystem
    class_of: np.ndarray        # global, incl. WELL entries
    medium_of: np.ndarray       # 0 matrix, 1 fracture, 2 well
    primal_of: np.ndarray       # global primal block id (wells own blocks)
    dual_block_of: np.ndarray   # per-medium same-class components, global ids
    coarse_dof_cell: np.ndarray  # coarse dof -> fine dof of its node / well
    coarse_medium: np.ndarray   # per coarse dof
    matrix_primal: PrimalPartition
    matrix_dual: DualPartition
    fracture_primal: list       # per network
    fracture_dual: list
    fracture_level: list        # planar BFS levels per network
    matrix_nodes_xyz: tuple = field(default=None)

    @property
    def n_coarse(self) -> int:
        return len(self.coarse_dof_cell)

    def cells_of(self, medium, cls):
        return np.where((self.medium_of == medium) & (self.class_of == cls))[0]


def build_hierarchy(system, ratio=(8, 8, 8), d_min=8, ratio_z=None) -> CoarseHierarchy:
    grid = system.grid
    ratio = tuple(ratio) if len(ratio) == 3 else (*tuple(ratio), 1)
    if grid.nz == 1:
        ratio = (ratio[0], ratio[1], 1)
    if ratio_z is None:
        ratio_z = ratio[2]

    m_primal, m_dual, nodes_xyz = coarsen_matrix(grid, ratio)

    n = system.n
    class_of = np.full(n, WELL, dtype=np.int8)
    medium_of = system.medium_of()
    primal_of = np.full(n, -1, dtype=np.int64)
    dual_block_of = np.full(n, -1, dtype=np.int64)

    class_of[: system.n_matrix] = m_dual.class_of
    primal_of[: system.n_matrix] = m_primal.block_of
    dual_block_of[: system.n_matrix] = m_dual.dual_block_of

    coarse_cells = [m_primal.node_of_block]
    coarse_medium = [np.zeros(m_primal.n_blocks, dtype=np.int8)]

    block_base = m_primal.n_blocks
    dual_base = int(m_dual.dual_block_of.max()) + 1 if system.n_matrix else 0
    f_primal, f_dual, f_level = [], [], []
    for net, off in zip(system.networks, system.frac_offset):
        fp, fd, lvl = coarsen_fractures(net, d_min, ratio_z=ratio_z)
        f_primal.append(fp)
        f_dual.append(fd)
        f_level.append(lvl)
        sl = slice(off, off + net.n_cells)
        class_of[sl] = fd.class_of
        primal_of[sl] = fp.block_of + block_base
        dual_block_of[sl] = fd.dual_block_of + dual_base
        coarse_cells.append(fp.node_of_block + off)
        coarse_medium.append(np.ones(fp.n_blocks, dtype=np.int8))
        block_base += fp.n_blocks
        dual_base += int(fd.dual_block_of.max()) + 1

    for k in range(len(system.pressure_wells)):
        dof = system.well_dof(k)
        primal_of[dof] = block_base + k
        coarse_cells.append(np.array([dof]))
        coarse_medium.append(np.array([2], dtype=np.int8))

    return CoarseHierarchy(
        system=system,
        class_of=class_of,
        medium_of=medium_of,
        primal_of=primal_of,
        dual_block_of=dual_block_of,
        coarse_dof_cell=np.concatenate(coarse_cells),
        coarse_medium=np.concatenate(coarse_medium),
        matrix_primal=m_primal,
        matrix_dual=m_dual,
        fracture_primal=f_primal,
        fracture_dual=f_dual,
        fracture_level=f_level,
        matrix_nodes_xyz=nodes_xyz,
    )


def merge_duals(hier: CoarseHierarchy, size_cap=None) -> MergedDuals:
    """Merge same-class dual blocks across media wherever a non-zero
    transmissibility connects them; optional cap on merged block size."""
    A = hier.system.A
    n_media = hier.system.well_offset
    base = hier.dual_block_of[:n_media].copy()
    n_blocks = int(base.max()) + 1 if n_media else 0

    parent = np.arange(n_blocks)
    size = np.bincount(base[base >= 0], minlength=n_blocks)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    capped = False
    coo = A[:n_media][:, :n_media].tocoo()
    cross = (hier.medium_of[coo.row] != hier.medium_of[coo.col]) & (coo.row < coo.col)
    order = np.lexsort((coo.col[cross], coo.row[cross]))
    for r, c in zip(coo.row[cross][order], coo.col[cross][order]):
        if hier.class_of[r] != hier.class_of[c] or hier.class_of[r] == VERTEX:
            continue
        ra, rb = find(base[r]), find(base[c])
        if ra == rb:
            continue
        if size_cap is not None and size[ra] + size[rb] > size_cap:
            capped = True
            continue
        ra, rb = min(ra, rb), max(ra, rb)
        parent[rb] = ra
        size[ra] += size[rb]

    roots = np.array([find(b) for b in range(n_blocks)])
    uniq, labels = np.unique(roots, return_inverse=True)
    merged = np.full(n_media, -1, dtype=np.int64)
    ok = base >= 0
    merged[ok] = labels[base[ok]]
    return MergedDuals(merged_of_cell=merged, n_merged=len(uniq), capped=capped)


def wirebasket_permutation(hier: CoarseHierarchy) -> WirebasketPermutation:
    """Stable reorder into I^m, F^m, E^m, V^m, F^f, E^f, V^f, wells."""
    n = len(hier.class_of)
    rank = np.empty(n, dtype=np.int64)
    for i in range(n):
        key = (int(hier.medium_of[i]), int(hier.class_of[i]))
        if key not in _RANK:
            raise CoarsenError(f"DOF {i} has unclassified medium/class {key}")
        rank[i] = _RANK[key]
    order = np.argsort(rank, kind="stable")
    perm = np.empty(n, dtype=np.int64)
    perm[order] = np.arange(n)
    return WirebasketPermutation(order=order, perm=perm)


def wirebasket_zero_blocks(hier: CoarseHierarchy):
    """The block pairs that must be structurally zero after reordering."""
    pairs = [
        ((0, INTERIOR), (0, EDGE)),
        ((0, INTERIOR), (0, VERTEX)),
        ((0, FACE), (0, VERTEX)),
        ((1, FACE), (1, VERTEX)),
    ]
    out = []
    for a, b in pairs:
        out.append((a, b))
        out.append((b, a))
    return out
