"""Structured matrix grid, embedded fracture networks, wells and their overlaps.

The matrix rock lives on a uniform structured grid. Fractures are
lower-dimensional objects discretized independently of the matrix: in 2D they
are line segments, in 3D vertical plates (an x-y polyline extruded over a
z-range). Each plate is cut by the matrix cell boundaries, so a fracture cell
never spans more than one matrix cell in-plane. Where plates cross, an
explicit intersection node (a zero-volume pressure DOF) ties the incident
fracture cells together. The matrix-fracture exchange of every fracture cell
is summarized by a connectivity index CI = A / <d>, the overlap area divided
by the average point-to-fracture distance over the hosting matrix cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_EPS = 1e-12


class MeshError(ValueError):
    """Raised for inconsistent grid or fracture geometry input."""


# ---------------------------------------------------------------------------
# Matrix grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StructuredGrid:
    """Uniform structured grid with per-cell diagonal permeability.

    Cells are indexed x-fastest: ``idx = i + nx * (j + ny * k)``. A grid with
    ``nz == 1`` is a 2D model of unit thickness.
    """

    nx: int
    ny: int
    nz: int
    hx: float
    hy: float
    hz: float
    perm: np.ndarray  # (n_cells, 3) kx, ky, kz

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def dim(self) -> int:
        return 2 if self.nz == 1 else 3

    @property
    def cell_volume(self) -> float:
        return self.hx * self.hy * self.hz

    def cell_index(self, i, j, k=0):
        return i + self.nx * (j + self.ny * k)

    def cell_ijk(self, idx):
        i = idx % self.nx
        j = (idx // self.nx) % self.ny
        k = idx // (self.nx * self.ny)
        return i, j, k

    def cell_center(self, idx):
        i, j, k = self.cell_ijk(idx)
        return ((i + 0.5) * self.hx, (j + 0.5) * self.hy, (k + 0.5) * self.hz)


def build_grid(nx, ny, nz=1, *, hx=1.0, hy=1.0, hz=1.0, perm=1.0) -> StructuredGrid:
    """Build a uniform grid; ``perm`` may be a scalar, an (n,) isotropic
    raster, or an (n, 3) diagonal-tensor raster."""
    if nx < 1 or ny < 1 or nz < 1:
        raise MeshError(f"grid dimensions must be >= 1, got {(nx, ny, nz)}")
    if hx <= 0 or hy <= 0 or hz <= 0:
        raise MeshError(f"cell sizes must be positive, got {(hx, hy, hz)}")
    n = nx * ny * nz
    k = np.asarray(perm, dtype=float)
    if k.ndim == 0:
        k = np.full((n, 3), float(k))
    elif k.ndim == 1:
        if k.size != n:
            raise MeshError(f"permeability raster has {k.size} entries, expected {n}")
        k = np.repeat(k[:, None], 3, axis=1)
    else:
        if k.shape != (n, 3):
            raise MeshError(f"permeability raster shape {k.shape}, expected {(n, 3)}")
        k = k.copy()
    if not np.all(k > 0):
        raise MeshError("permeability must be positive everywhere")
    return StructuredGrid(nx, ny, nz, float(hx), float(hy), float(hz), k)


# ---------------------------------------------------------------------------
# Fractures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FracturePlate:
    """One fracture plate: a 2D segment, or in 3D an x-y polyline extruded
    vertically over ``z_range``."""

    points: tuple  # ((x, y), (x, y), ...) polyline in the x-y plane
    aperture: float
    perm: float
    z_range: tuple | None = None  # (z0, z1); None means the full domain height


@dataclass
class FractureCell:
    """One fracture control volume (or intersection node if length == 0).

    Intersection nodes carry zero in-plane extent and no matrix overlap, but
    keep effective junction properties (mean incident aperture/permeability)
    so the intersection line can conduct vertically in 3D.
    """

    centroid: tuple          # (x, y, z)
    length: float            # in-plane extent; 0 for intersection nodes
    height: float            # z extent (1.0 thickness in 2D)
    aperture: float
    perm: float
    matrix_cell: int         # hosting matrix cell (-1 for intersection nodes)
    planar_id: int
    z_level: int
    is_intersection: bool = False

    @property
    def area(self) -> float:
        return self.length * self.height


@dataclass(frozen=True)
class FractureEdge:
    """Connection between two fracture cells of one network.

    ``area`` is the shared flow cross-section; ``dist_a``/``dist_b`` the
    half-cell distances from each centroid to the shared interface (zero on
    the intersection-node side).
    """

    a: int
    b: int
    area: float
    dist_a: float
    dist_b: float


@dataclass
class FractureNetwork:
    """Connected set of fracture cells, intersection nodes and their edges."""

    network_id: int
    cells: list = field(default_factory=list)      # list[FractureCell]
    edges: list = field(default_factory=list)      # list[FractureEdge]
    planar_ids: list = field(default_factory=list)  # unique planar pieces/nodes
    planar_is_intersection: dict = field(default_factory=dict)
    planar_adjacency: dict = field(default_factory=dict)  # planar graph edges

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def adjacency(self):
        """Neighbor lists over all cells (regular cells + intersection nodes)."""
        adj = [[] for _ in range(self.n_cells)]
        for e in self.edges:
            adj[e.a].append(e.b)
            adj[e.b].append(e.a)
        return adj

    def validate(self):
        if self.n_cells == 0:
            raise MeshError("empty fracture network")
        adj = self.adjacency()
        seen = _bfs_reach(adj, 0)
        if len(seen) != self.n_cells:
            raise MeshError(
                f"network {self.network_id} is disconnected "
                f"({len(seen)} of {self.n_cells} cells reachable)"
            )
        for c, cell in enumerate(self.cells):
            if cell.is_intersection and len(adj[c]) < 2:
                raise MeshError(f"intersection node {c} has degree {len(adj[c])} < 2")
            if not cell.is_intersection and (cell.aperture <= 0 or cell.perm <= 0):
                raise MeshError(f"fracture cell {c} has non-positive aperture or perm")


@dataclass(frozen=True)
class Overlap:
    """Overlap of one fracture cell with its hosting matrix cell."""

    network_id: int
    frac_cell: int
    matrix_cell: int
    area: float
    avg_dist: float

    @property
    def ci(self) -> float:
        return self.area / self.avg_dist


def _bfs_reach(adj, start):
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


# -- planar geometry helpers -------------------------------------------------

def _seg_intersection(p0, p1, q0, q1):
    """Proper intersection point of two segments, or None."""
    d1 = (p1[0] - p0[0], p1[1] - p0[1])
    d2 = (q1[0] - q0[0], q1[1] - q0[1])
    den = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(den) < _EPS:
        return None  # parallel or collinear; overlapping plates are not supported
    r = (q0[0] - p0[0], q0[1] - p0[1])
    t = (r[0] * d2[1] - r[1] * d2[0]) / den
    s = (r[0] * d1[1] - r[1] * d1[0]) / den
    if -_EPS <= t <= 1 + _EPS and -_EPS <= s <= 1 + _EPS:
        return (p0[0] + t * d1[0], p0[1] + t * d1[1])
    return None


def _point_key(p, tol=1e-9):
    return (round(p[0] / tol), round(p[1] / tol))


def _cut_segment(p0, p1, grid, extra_points, max_len=None):
    """Cut one planar segment at matrix gridlines and listed points.

    Returns a list of (a, b) sub-segments ordered along the parent segment.
    """
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    seg_len = math.hypot(dx, dy)
    ts = {0.0, 1.0}
    # gridline crossings
    for axis, (c0, d, h, ncell) in enumerate(
        (((p0[0]), dx, grid.hx, grid.nx), ((p0[1]), dy, grid.hy, grid.ny))
    ):
        if abs(d) < _EPS:
            continue
        for m in range(1, ncell):
            t = (m * h - c0) / d
            if _EPS < t < 1 - _EPS:
                ts.add(t)
    for q in extra_points:
        # project q onto the segment; points passed in are known to lie on it
        t = ((q[0] - p0[0]) * dx + (q[1] - p0[1]) * dy) / (seg_len * seg_len)
        if _EPS < t < 1 - _EPS:
            ts.add(t)
    ts = sorted(ts)
    if max_len is not None and max_len > 0:
        refined = [ts[0]]
        for t0, t1 in zip(ts, ts[1:]):
            pieces = max(1, math.ceil((t1 - t0) * seg_len / max_len))
            refined.extend(t0 + (t1 - t0) * (m + 1) / pieces for m in range(pieces))
        ts = refined
    out = []
    for t0, t1 in zip(ts, ts[1:]):
        if (t1 - t0) * seg_len > 1e-9:
            a = (p0[0] + t0 * dx, p0[1] + t0 * dy)
            b = (p0[0] + t1 * dx, p0[1] + t1 * dy)
            out.append((a, b))
    return out


def _avg_distance_to_segment(grid, cell, a, b, n_quad=41):
    """Average distance from points of a matrix cell to segment [a, b].

    Fixed-order midpoint quadrature over the cell cross-section. The fracture
    plates are vertical, so the z-coordinate never contributes for a cell the
    plate fully crosses in z and the quadrature collapses to the x-y plane.
    """
    i, j, _ = grid.cell_ijk(cell)
    xs = (i + (np.arange(n_quad) + 0.5) / n_quad) * grid.hx
    ys = (j + (np.arange(n_quad) + 0.5) / n_quad) * grid.hy
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    ax, ay = a
    dx, dy = b[0] - ax, b[1] - ay
    L2 = dx * dx + dy * dy
    t = ((X - ax) * dx + (Y - ay) * dy) / L2
    t = np.clip(t, 0.0, 1.0)
    px, py = ax + t * dx, ay + t * dy
    return float(np.mean(np.hypot(X - px, Y - py)))


class _PlanarPiece:
    __slots__ = ("a", "b", "plate", "centroid", "length", "matrix_ij")

    def __init__(self, a, b, plate, grid):
        self.a = a
        self.b = b
        self.plate = plate
        self.centroid = ((a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0)
        self.length = math.hypot(b[0] - a[0], b[1] - a[1])
        i = min(int(self.centroid[0] / grid.hx), grid.nx - 1)
        j = min(int(self.centroid[1] / grid.hy), grid.ny - 1)
        self.matrix_ij = (i, j)


def embed_fractures(grid, plates, cell_size=None):
    """Discretize fracture plates against a matrix grid.

    Returns ``(networks, overlaps)``. Plates that cross are joined into one
    network through an explicit intersection node (one per z-level in 3D).

    ``cell_size`` optionally caps the in-plane fracture cell length below the
    matrix-imposed cut; ``None`` keeps the matrix-boundary cuts only.
    """
    if cell_size is not None and cell_size <= 0:
        raise MeshError("requested fracture cell size must be positive")
    Lx, Ly, Lz = grid.nx * grid.hx, grid.ny * grid.hy, grid.nz * grid.hz

    segments = []  # (plate_idx, p0, p1)
    plates = list(plates)
    for pi, plate in enumerate(plates):
        pts = [tuple(map(float, p)) for p in plate.points]
        if len(pts) < 2:
            raise MeshError(f"plate {pi} needs at least two points")
        for p in pts:
            if not (0.0 <= p[0] <= Lx and 0.0 <= p[1] <= Ly):
                raise MeshError(f"plate {pi} point {p} lies outside the domain")
        for p0, p1 in zip(pts, pts[1:]):
            if math.hypot(p1[0] - p0[0], p1[1] - p0[1]) < 1e-12:
                raise MeshError(f"plate {pi} has a degenerate (zero-length) segment")
            segments.append((pi, p0, p1))
        if plate.aperture <= 0 or plate.perm <= 0:
            raise MeshError(f"plate {pi} needs positive aperture and permeability")

    # pairwise crossings between segments of different plates
    crossings = {}  # point key -> (point, set of plate ids)
    cuts_per_seg = [[] for _ in segments]
    for si in range(len(segments)):
        for sj in range(si + 1, len(segments)):
            pi, p0, p1 = segments[si]
            pj, q0, q1 = segments[sj]
            if pi == pj:
                continue
            pt = _seg_intersection(p0, p1, q0, q1)
            if pt is None:
                continue
            key = _point_key(pt)
            point, members = crossings.setdefault(key, (pt, set()))
            members.update((pi, pj))
            cuts_per_seg[si].append(pt)
            cuts_per_seg[sj].append(pt)

    pieces = []
    for si, (pi, p0, p1) in enumerate(segments):
        for a, b in _cut_segment(p0, p1, grid, cuts_per_seg[si], max_len=cell_size):
            pieces.append(_PlanarPiece(a, b, pi, grid))

    # planar adjacency: same-plate pieces sharing an endpoint connect directly;
    # cross-plate contact goes through an intersection node
    endpoint_map = {}
    for idx, pc in enumerate(pieces):
        for p in (pc.a, pc.b):
            endpoint_map.setdefault(_point_key(p), []).append(idx)

    planar_edges = []       # (a_planar, b_planar) over planar entity ids
    n_pieces = len(pieces)
    inode_entities = []     # (point, incident piece ids)
    for key, incident in endpoint_map.items():
        if key in crossings:
            point, _ = crossings[key]
            inode_entities.append((point, sorted(incident)))
            continue
        same_plate = {}
        for idx in incident:
            same_plate.setdefault(pieces[idx].plate, []).append(idx)
        for group in same_plate.values():
            for a, b in zip(group, group[1:]):
                planar_edges.append((a, b))
    inode_planar = {}
    for point, incident in inode_entities:
        node_id = n_pieces + len(inode_planar)
        inode_planar[node_id] = point
        for idx in incident:
            planar_edges.append((node_id, idx))

    n_planar = n_pieces + len(inode_planar)
    adj_planar = [[] for _ in range(n_planar)]
    for a, b in planar_edges:
        adj_planar[a].append(b)
        adj_planar[b].append(a)

    # z levels per planar entity
    def plate_levels(plate):
        if grid.nz == 1:
            return range(1)
        if plate.z_range is None:
            return range(grid.nz)
        z0, z1 = plate.z_range
        if not (0.0 <= z0 < z1 <= Lz + _EPS):
            raise MeshError(f"z range {plate.z_range} outside the domain")
        return [k for k in range(grid.nz) if z0 - _EPS <= (k + 0.5) * grid.hz <= z1 + _EPS]

    levels = [None] * n_planar
    for idx, pc in enumerate(pieces):
        levels[idx] = set(plate_levels(plates[pc.plate]))
    for node_id in inode_planar:
        shared = None
        for nb in adj_planar[node_id]:
            shared = set(levels[nb]) if shared is None else (shared & levels[nb])
        levels[node_id] = shared or set()

    # connected components over 3D cells (planar id, level)
    cell_ids = {}
    for p in range(n_planar):
        for z in sorted(levels[p]):
            cell_ids[(p, z)] = len(cell_ids)
    parent = list(range(len(cell_ids)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(x, y):
        rx, ry = find(x), find(y)
        if rx != ry:
            parent[max(rx, ry)] = min(rx, ry)

    edges_3d = []
    for a, b in planar_edges:
        for z in sorted(levels[a] & levels[b]):
            edges_3d.append(((a, z), (b, z)))
    for p in range(n_planar):
        zs = sorted(levels[p])
        for z0, z1 in zip(zs, zs[1:]):
            if z1 == z0 + 1:
                edges_3d.append(((p, z0), (p, z1)))

    # effective junction properties: mean of the incident pieces
    inode_props = {}
    for node_id in inode_planar:
        inc = [pieces[nb] for nb in adj_planar[node_id] if nb < n_pieces]
        ap = float(np.mean([plates[pc.plate].aperture for pc in inc]))
        kf = float(np.mean([plates[pc.plate].perm for pc in inc]))
        inode_props[node_id] = (ap, kf)
    for u, v in edges_3d:
        union(cell_ids[u], cell_ids[v])

    roots = sorted({find(c) for c in cell_ids.values()})
    comp_of_root = {r: c for c, r in enumerate(roots)}

    networks = [FractureNetwork(network_id=c) for c in range(len(roots))]
    local_of = {}
    for (p, z), cid in sorted(cell_ids.items(), key=lambda kv: kv[1]):
        net = networks[comp_of_root[find(cid)]]
        local = len(net.cells)
        local_of[(p, z)] = (net.network_id, local)
        if p < n_pieces:
            pc = pieces[p]
            plate = plates[pc.plate]
            i, j = pc.matrix_ij
            cell = FractureCell(
                centroid=(pc.centroid[0], pc.centroid[1], (z + 0.5) * grid.hz),
                length=pc.length,
                height=grid.hz if grid.nz > 1 else 1.0,
                aperture=plate.aperture,
                perm=plate.perm,
                matrix_cell=grid.cell_index(i, j, z),
                planar_id=p,
                z_level=z,
            )
        else:
            x, y = inode_planar[p]
            ap, kf = inode_props[p]
            cell = FractureCell(
                centroid=(x, y, (z + 0.5) * grid.hz),
                length=0.0,
                height=grid.hz if grid.nz > 1 else 1.0,
                aperture=ap,
                perm=kf,
                matrix_cell=-1,
                planar_id=p,
                z_level=z,
                is_intersection=True,
            )
        net.cells.append(cell)
        if p not in net.planar_ids:
            net.planar_ids.append(p)
            net.planar_is_intersection[p] = p >= n_pieces

    for u, v in edges_3d:
        nu, lu = local_of[u]
        nv, lv = local_of[v]
        assert nu == nv
        net = networks[nu]
        ca, cb = net.cells[lu], net.cells[lv]
        if u[0] == v[0]:  # vertical neighbor
            # intersection lines conduct vertically through the junction
            # cross-section (aperture squared); plates through aperture*length
            area = ca.aperture ** 2 if ca.is_intersection else ca.aperture * ca.length
            da = db = grid.hz / 2.0
        else:
            ha = ca.height
            if ca.is_intersection or cb.is_intersection:
                node, cell_ = (ca, cb) if ca.is_intersection else (cb, ca)
                area = cell_.aperture * ha
                da = 0.0 if ca.is_intersection else ca.length / 2.0
                db = 0.0 if cb.is_intersection else cb.length / 2.0
            else:
                area = 0.5 * (ca.aperture + cb.aperture) * ha
                da, db = ca.length / 2.0, cb.length / 2.0
        net.edges.append(FractureEdge(lu, lv, area, da, db))

    # planar adjacency restricted to each network (used by the coarsener)
    for net in networks:
        members = set(net.planar_ids)
        net.planar_adjacency = {p: [] for p in net.planar_ids}
        for a, b in planar_edges:
            if a in members and b in members:
                net.planar_adjacency[a].append(b)
                net.planar_adjacency[b].append(a)

    overlaps = []
    avg_dist_cache = {}
    for net in networks:
        net.validate()
        for local, cell in enumerate(net.cells):
            if cell.is_intersection:
                continue
            key = cell.planar_id
            if key not in avg_dist_cache:
                pc = pieces[key]
                avg_dist_cache[key] = _avg_distance_to_segment(
                    grid, cell.matrix_cell, pc.a, pc.b
                )
            overlaps.append(
                Overlap(
                    network_id=net.network_id,
                    frac_cell=local,
                    matrix_cell=cell.matrix_cell,
                    area=cell.area,
                    avg_dist=avg_dist_cache[key],
                )
            )
    return networks, overlaps


def network_graph(net: FractureNetwork):
    """Undirected neighbor lists over the network's cells."""
    return net.adjacency()


def planar_graph(net: FractureNetwork):
    """Planar projection of a network: (planar ids, neighbor lists, local index)."""
    ids = list(net.planar_ids)
    index = {p: i for i, p in enumerate(ids)}
    adj = [[] for _ in ids]
    seen = set()
    for a in ids:
        for b in net.planar_adjacency.get(a, ()):
            key = (min(a, b), max(a, b))
            if key in seen:
                continue
            seen.add(key)
            adj[index[a]].append(index[b])
            adj[index[b]].append(index[a])
    return ids, adj, index


# ---------------------------------------------------------------------------
# Wells
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Perforation:
    medium: str          # "matrix" or "fracture"
    cell: int            # matrix cell index, or fracture cell index in network
    pi: float            # productivity index
    network: int = 0     # fracture perforations only


@dataclass(frozen=True)
class Well:
    well_id: str
    perforations: tuple
    control: str         # "pressure" or "rate"
    value: float

    def __post_init__(self):
        if not self.perforations:
            raise MeshError(f"well {self.well_id} has no perforations")
        if self.control not in ("pressure", "rate"):
            raise MeshError(f"well {self.well_id}: unknown control {self.control!r}")
        for p in self.perforations:
            if p.pi <= 0:
                raise MeshError(f"well {self.well_id}: PI must be positive")
