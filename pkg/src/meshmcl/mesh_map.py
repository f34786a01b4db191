"""Map preparation: aggregation, ground labeling, ground simplification, tiling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy import sparse

from .geometry import is_rigid, transform_points
from .range_image import PointCloud, SensorIntrinsics, build_vertex_map, compute_normal_map

DEGENERATE_AREA = 1e-12


class DegenerateCloudError(ValueError):
    pass


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    ground: np.ndarray = None  # per-vertex flag

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=float).reshape(-1, 3))
        t = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3))
        g = self.ground
        g = np.zeros(len(v), dtype=bool) if g is None else np.asarray(g, dtype=bool).reshape(-1)
        if g.shape[0] != v.shape[0]:
            raise ValueError("ground label count does not match vertex count")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "ground", g)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def validate(self) -> None:
        """Raise ValueError on out-of-range indices or repeated corners."""
        t = self.triangles
        if t.size and (t.min() < 0 or t.max() >= self.n_vertices):
            bad = int(np.flatnonzero(((t < 0) | (t >= self.n_vertices)).any(axis=1))[0])
            raise ValueError(f"triangle {bad} references a vertex out of range")
        rep = (t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])
        if rep.any():
            raise ValueError(f"triangle {int(np.flatnonzero(rep)[0])} repeats a vertex")
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError("mesh has non-finite vertex coordinates")

    def triangle_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)

    def byte_size(self) -> int:
        """Size of the binary PLY payload: xyz float32 + rgb uint8 per vertex,
        count byte + three int32 per face."""
        return 15 * self.n_vertices + 13 * self.n_triangles

    def triangle_boxes(self) -> np.ndarray:
        """(m, 6) world AABBs: xmin, ymin, zmin, xmax, ymax, zmax."""
        p = self.vertices[self.triangles]
        return np.ascontiguousarray(np.concatenate([p.min(axis=1), p.max(axis=1)], axis=1))


@dataclass(frozen=True)
class GroundParams:
    alpha_thres: float = math.radians(30.0)
    z_thres: float = 1.73
    s_voxel: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.alpha_thres < math.pi / 2):
            raise ValueError("alpha_thres must lie in (0, pi/2)")
        if self.s_voxel <= 0:
            raise ValueError("s_voxel must be positive")


def aggregate_clouds(scans: Sequence[PointCloud], poses: Sequence[np.ndarray]) -> PointCloud:
    """Transform every scan by its pose into the map frame and concatenate."""
    if len(scans) != len(poses):
        raise ValueError(f"{len(scans)} scans but {len(poses)} poses")
    pts, inten = [], []
    keep_intensity = all(s.intensity is not None for s in scans) and len(scans) > 0
    for i, (scan, T) in enumerate(zip(scans, poses)):
        if not is_rigid(T):
            raise ValueError(f"pose {i} is not a rigid transform")
        pts.append(transform_points(T, scan.points))
        if keep_intensity:
            inten.append(scan.intensity)
    if not pts:
        return PointCloud(np.zeros((0, 3)))
    return PointCloud(np.concatenate(pts), np.concatenate(inten) if keep_intensity else None)


class PrincipalAxes(NamedTuple):
    e1: np.ndarray
    e2: np.ndarray
    e3: np.ndarray
    eigenvalues: np.ndarray  # descending


def principal_axes(points, allow_degenerate: bool = False) -> PrincipalAxes:
    """Eigen-decomposition of the empirical covariance, eigenvalues descending.

    ``e3`` points toward +z.  Clouds of rank < 2 raise
    :class:`DegenerateCloudError` unless ``allow_degenerate`` is set.
    """
    pts = points.points if isinstance(points, PointCloud) else np.asarray(points, dtype=float)
    pts = pts.reshape(-1, 3)
    if pts.shape[0] < 3:
        raise DegenerateCloudError("need at least 3 points")
    cov = np.cov(pts, rowvar=False, bias=True)
    lam, vec = np.linalg.eigh(cov)
    lam, vec = lam[::-1], vec[:, ::-1]
    scale = max(lam[0], 0.0)
    rank = int(np.sum(lam > 1e-12 * max(scale, 1e-300)))
    if scale <= 0.0:
        rank = 0
    if rank < 2 and not allow_degenerate:
        raise DegenerateCloudError(f"cloud covariance has rank {rank} < 2")
    e3 = vec[:, 2]
    if e3[2] < 0:
        vec[:, 2] = -e3
    return PrincipalAxes(vec[:, 0].copy(), vec[:, 1].copy(), vec[:, 2].copy(), np.maximum(lam, 0.0))


def label_ground(points, normals, e3, params: GroundParams) -> np.ndarray:
    """Ground iff the normal is within ``alpha_thres`` of ``e3`` and z < z_thres.

    ``points[:, 2]`` is compared directly against ``z_thres``; callers choose
    the frame (see :func:`label_scan_ground`).
    """
    pts = points.points if isinstance(points, PointCloud) else np.asarray(points, dtype=float)
    pts = pts.reshape(-1, 3)
    n = np.asarray(normals, dtype=float).reshape(-1, 3)
    if n.shape[0] != pts.shape[0]:
        raise ValueError(f"{pts.shape[0]} points but {n.shape[0]} normals")
    e3 = np.asarray(e3, dtype=float)
    aligned = np.abs(n @ e3) > math.cos(params.alpha_thres)
    return aligned & (pts[:, 2] < params.z_thres)


class LabeledScan(NamedTuple):
    points: np.ndarray  # sensor frame
    normals: np.ndarray
    ground: np.ndarray


def label_scan_ground(cloud: PointCloud, intr: SensorIntrinsics, params: GroundParams,
                      e3=(0.0, 0.0, 1.0)) -> LabeledScan:
    """Label one scan in its own sensor frame.

    Points are projected to a vertex map, normals come from the normal map,
    and heights are measured from the ground under the sensor
    (``z + sensor_height``) so ``z_thres = sensor_height`` keeps everything
    below the sensor.  Pixels without a valid normal are dropped.
    """
    vmap, _ = build_vertex_map(cloud, intr)
    nmap = compute_normal_map(vmap)
    ok = nmap.valid
    pts = vmap.vertices[ok]
    nrm = nmap.normals[ok]
    lifted = pts.copy()
    lifted[:, 2] += intr.sensor_height
    return LabeledScan(pts, nrm, label_ground(lifted, nrm, e3, params))


def contract_ground_vertices(mesh: TriangleMesh, s_voxel: float) -> TriangleMesh:
    """Merge ground vertices sharing a voxel into one vertex at their centroid."""
    g = np.flatnonzero(mesh.ground)
    if g.size == 0:
        return mesh
    keys = np.floor(mesh.vertices[g] / s_voxel).astype(np.int64)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    n_vox = int(inverse.max()) + 1
    sums = np.zeros((n_vox, 3))
    np.add.at(sums, inverse, mesh.vertices[g])
    counts = np.bincount(inverse, minlength=n_vox)
    centroids = sums / counts[:, None]

    ng = np.flatnonzero(~mesh.ground)
    remap = np.empty(mesh.n_vertices, dtype=np.int64)
    remap[ng] = np.arange(ng.size)
    remap[g] = ng.size + inverse
    verts = np.concatenate([mesh.vertices[ng], centroids])
    ground = np.concatenate([np.zeros(ng.size, bool), np.ones(n_vox, bool)])
    tris = remap[mesh.triangles]
    distinct = (tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2]) & (tris[:, 0] != tris[:, 2])
    return TriangleMesh(verts, tris[distinct], ground)


def _ground_adjacency(mesh: TriangleMesh) -> sparse.csr_matrix:
    t = mesh.triangles
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    e = e[mesh.ground[e[:, 0]] & mesh.ground[e[:, 1]]]
    e = np.concatenate([e, e[:, ::-1]])
    n = mesh.n_vertices
    A = sparse.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n)).tocsr()
    A.data[:] = 1.0  # duplicate edges collapse to one neighbor
    return A


def smooth_ground_vertices(mesh: TriangleMesh) -> TriangleMesh:
    """One Jacobi pass of the neighbor-average filter over ground vertices.

    Neighbors are ground vertices sharing a triangle edge; all reads use the
    pre-smoothing positions.
    """
    if not mesh.ground.any():
        return mesh
    A = _ground_adjacency(mesh)
    deg = np.asarray(A.sum(axis=1)).reshape(-1)
    avg = (mesh.vertices + A @ mesh.vertices) / (deg + 1.0)[:, None]
    verts = np.where(mesh.ground[:, None], avg, mesh.vertices)
    return remove_invalid_triangles(TriangleMesh(verts, mesh.triangles, mesh.ground), drop_unused=False)


def remove_invalid_triangles(mesh: TriangleMesh, drop_unused: bool = True) -> TriangleMesh:
    """Drop degenerate and duplicate triangles, then (optionally) unreferenced
    ground vertices."""
    t = mesh.triangles
    if t.size == 0:
        return mesh
    rep = (t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])
    keep = ~rep & (mesh.triangle_areas() > DEGENERATE_AREA)
    _, first = np.unique(np.sort(t, axis=1), axis=0, return_index=True)
    unique = np.zeros(len(t), dtype=bool)
    unique[first] = True
    t = t[keep & unique]
    if not drop_unused:
        return TriangleMesh(mesh.vertices, t, mesh.ground)

    used = np.zeros(mesh.n_vertices, dtype=bool)
    used[t.ravel()] = True
    retain = used | ~mesh.ground
    if retain.all():
        return TriangleMesh(mesh.vertices, t, mesh.ground)
    remap = np.cumsum(retain) - 1
    return TriangleMesh(mesh.vertices[retain], remap[t], mesh.ground[retain])


def simplify_map(mesh: TriangleMesh, params: GroundParams = GroundParams()) -> TriangleMesh:
    """Contract, smooth and clean the ground part; other geometry passes through."""
    if not mesh.ground.any():
        return mesh
    out = contract_ground_vertices(mesh, params.s_voxel)
    out = smooth_ground_vertices(out)
    return remove_invalid_triangles(out)


@dataclass(frozen=True)
class TileGrid:
    """Square tiles keyed by integer (i, j) offsets from ``origin``."""

    tile_size: float
    origin: tuple[float, float]
    tiles: dict = field(default_factory=dict)
    n_triangles: int = 0

    def tile_of(self, x, y):
        i = np.floor((np.asarray(x, dtype=float) - self.origin[0]) / self.tile_size).astype(np.int64)
        j = np.floor((np.asarray(y, dtype=float) - self.origin[1]) / self.tile_size).astype(np.int64)
        return i, j

    def square(self, key) -> tuple[float, float, float, float]:
        i, j = key
        x0 = self.origin[0] + i * self.tile_size
        y0 = self.origin[1] + j * self.tile_size
        return x0, y0, x0 + self.tile_size, y0 + self.tile_size

    def triangles_in(self, keys: Iterable) -> np.ndarray:
        parts = [self.tiles[k] for k in keys if k in self.tiles]
        if not parts:
            return np.zeros(0, dtype=np.int32)
        if len(parts) == 1:
            return parts[0]
        return np.unique(np.concatenate(parts)).astype(np.int32)

    def bounds(self) -> tuple[float, float, float, float]:
        ks = np.array(sorted(self.tiles))
        x0 = self.origin[0] + ks[:, 0].min() * self.tile_size
        y0 = self.origin[1] + ks[:, 1].min() * self.tile_size
        x1 = self.origin[0] + (ks[:, 0].max() + 1) * self.tile_size
        y1 = self.origin[1] + (ks[:, 1].max() + 1) * self.tile_size
        return x0, y0, x1, y1


def _span(lo, hi, origin, size):
    a = np.floor((lo - origin) / size).astype(np.int64)
    b = np.maximum(a, np.ceil((hi - origin) / size).astype(np.int64) - 1)
    # flat boxes on the mesh's far edge stay in the last tile
    first = int(a.min())
    last = max(first, int(math.ceil((hi.max() - origin) / size)) - 1)
    return np.clip(a, first, last), np.clip(b, first, last)


def build_tile_grid(mesh: TriangleMesh, tile_size: float = 100.0, origin=None) -> TileGrid:
    """Assign each triangle to every tile its xy bounding box overlaps."""
    if tile_size <= 0:
        raise ValueError("tile_size must be positive")
    if origin is None:
        origin = tuple(mesh.vertices[:, :2].min(axis=0)) if mesh.n_vertices else (0.0, 0.0)
    origin = (float(origin[0]), float(origin[1]))
    if mesh.n_triangles == 0:
        return TileGrid(tile_size, origin, {}, 0)
    box = mesh.triangle_boxes()
    i0, i1 = _span(box[:, 0], box[:, 3], origin[0], tile_size)
    j0, j1 = _span(box[:, 1], box[:, 4], origin[1], tile_size)
    tri_ids, ti, tj = [], [], []
    ids = np.arange(mesh.n_triangles)
    for di in range(int((i1 - i0).max()) + 1):
        for dj in range(int((j1 - j0).max()) + 1):
            m = (i0 + di <= i1) & (j0 + dj <= j1)
            tri_ids.append(ids[m])
            ti.append(i0[m] + di)
            tj.append(j0[m] + dj)
    tri_ids, ti, tj = np.concatenate(tri_ids), np.concatenate(ti), np.concatenate(tj)
    order = np.lexsort((tri_ids, tj, ti))
    tri_ids, ti, tj = tri_ids[order], ti[order], tj[order]
    cuts = np.flatnonzero((np.diff(ti) != 0) | (np.diff(tj) != 0)) + 1
    tiles = {}
    for seg_ids, a, b in zip(np.split(tri_ids, cuts), ti[np.r_[0, cuts]], tj[np.r_[0, cuts]]):
        tiles[(int(a), int(b))] = seg_ids.astype(np.int32)
    return TileGrid(tile_size, origin, tiles, mesh.n_triangles)


def tiles_near(grid: TileGrid, position, radius: float) -> set:
    """Existing tiles whose closed square intersects the disc about ``position``."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    px, py = float(position[0]), float(position[1])
    s, (ox, oy) = grid.tile_size, grid.origin
    i_lo = math.floor((px - radius - ox) / s)
    i_hi = math.floor((px + radius - ox) / s)
    j_lo = math.floor((py - radius - oy) / s)
    j_hi = math.floor((py + radius - oy) / s)
    out = set()
    r2 = radius * radius
    for i in range(i_lo, i_hi + 1):
        x0 = ox + i * s
        dx = max(x0 - px, 0.0, px - (x0 + s))
        for j in range(j_lo, j_hi + 1):
            if (i, j) not in grid.tiles:
                continue
            y0 = oy + j * s
            dy = max(y0 - py, 0.0, py - (y0 + s))
            if dx * dx + dy * dy <= r2:
                out.add((i, j))
    return out


class GroundHeightField:
    """Raster lookup of ground height from ground-labeled triangles.

    Cells not covered by any ground triangle report ``default``.
    """

    def __init__(self, mesh: TriangleMesh, resolution: float = 1.0, default: float = 0.0):
        self.resolution = float(resolution)
        self.default = float(default)
        gtri = mesh.triangles[mesh.ground[mesh.triangles].all(axis=1)] if mesh.n_triangles else \
            np.zeros((0, 3), dtype=np.int64)
        if gtri.size == 0:
            self.origin = np.zeros(2)
            self.z = np.full((1, 1), np.nan)
            return
        p = mesh.vertices[gtri]
        lo = p[:, :, :2].min(axis=(0, 1))
        hi = p[:, :, :2].max(axis=(0, 1))
        self.origin = lo
        nx, ny = (np.ceil((hi - lo) / self.resolution).astype(int) + 1)
        z = np.full((nx, ny), np.nan)
        res = self.resolution
        for a, b, c in p:
            tmin = np.floor((np.minimum(np.minimum(a, b), c)[:2] - lo) / res).astype(int)
            tmax = np.ceil((np.maximum(np.maximum(a, b), c)[:2] - lo) / res).astype(int)
            xs = np.arange(max(tmin[0], 0), min(tmax[0], nx - 1) + 1)
            ys = np.arange(max(tmin[1], 0), min(tmax[1], ny - 1) + 1)
            if xs.size == 0 or ys.size == 0:
                continue
            cx = lo[0] + (xs[:, None] + 0.5) * res
            cy = lo[1] + (ys[None, :] + 0.5) * res
            v0, v1 = b[:2] - a[:2], c[:2] - a[:2]
            den = v0[0] * v1[1] - v1[0] * v0[1]
            if abs(den) < 1e-15:
                continue
            qx, qy = cx - a[0], cy - a[1]
            l1 = (qx * v1[1] - v1[0] * qy) / den
            l2 = (v0[0] * qy - qx * v0[1]) / den
            inside = (l1 >= -1e-9) & (l2 >= -1e-9) & (l1 + l2 <= 1 + 1e-9)
            zz = a[2] + l1 * (b[2] - a[2]) + l2 * (c[2] - a[2])
            block = z[np.ix_(xs, ys)]
            take = inside & ~(block >= zz)  # keep the highest ground surface
            block[take] = zz[take]
            z[np.ix_(xs, ys)] = block
        self.z = z

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        i = np.floor((x - self.origin[0]) / self.resolution).astype(np.int64)
        j = np.floor((y - self.origin[1]) / self.resolution).astype(np.int64)
        nx, ny = self.z.shape
        inside = (i >= 0) & (i < nx) & (j >= 0) & (j < ny)
        out = np.full(np.broadcast(x, y).shape, self.default)
        zi = self.z[np.clip(i, 0, nx - 1), np.clip(j, 0, ny - 1)]
        ok = inside & np.isfinite(zi)
        out[ok] = zi[ok]
        return out if out.ndim else float(out)
