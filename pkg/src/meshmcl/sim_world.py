"""Synthetic worlds, trajectories and exact LiDAR scan simulation.

``raycast_ranges`` is deliberately brute force: every pixel ray against
every triangle, in the map frame.  It is the reference the renderer is
checked against, so it must stay simple rather than fast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .geometry import wrap_angle
from .mcl import MotionCommand, odometry_between
from .mesh_map import TriangleMesh, build_tile_grid
from .range_image import PointCloud, SensorIntrinsics

DET_EPS = 1e-12


@dataclass(frozen=True)
class WorldSpec:
    extent: tuple[float, float] = (200.0, 200.0)
    building_count: int = 60
    building_size: tuple[float, float] = (6.0, 20.0)  # footprint side range
    building_height: tuple[float, float] = (4.0, 20.0)
    ground_z: float = 0.0
    ground_resolution: float = 10.0
    corridor_radius: Optional[float] = None  # default: 0.35 * min(extent)
    corridor_half_width: float = 7.0
    perimeter_height: float = 8.0  # boundary wall; 0 disables
    seed: int = 0

    def __post_init__(self):
        if min(self.extent) <= 0:
            raise ValueError("extent must be positive")
        if self.building_count < 0:
            raise ValueError("building_count must be >= 0")
        if self.ground_resolution <= 0:
            raise ValueError("ground_resolution must be positive")

    @property
    def loop_radius(self) -> float:
        if self.corridor_radius is not None:
            return float(self.corridor_radius)
        return 0.35 * min(self.extent)


@dataclass(frozen=True)
class TrajectorySpec:
    length: float = 300.0  # meters
    speed: float = 1.0  # meters per frame
    sigma_trans: float = 0.02
    sigma_rot: float = 0.002
    seed: int = 0

    def __post_init__(self):
        if self.length <= 0 or self.speed <= 0:
            raise ValueError("length and speed must be positive")

    @property
    def n_frames(self) -> int:
        return int(round(self.length / self.speed))


class Trajectory(NamedTuple):
    poses: np.ndarray  # (n, 3) x, y, yaw
    odometry: list  # MotionCommand per frame; frame 0 is zero motion


# -- corridor ---------------------------------------------------------------

def corridor_centerline(world: WorldSpec, samples: int = 4096) -> np.ndarray:
    """Closed rounded-square loop (superellipse, exponent 4) about the origin."""
    a = world.loop_radius
    t = np.linspace(0.0, 2.0 * np.pi, samples, endpoint=False)
    c, s = np.cos(t), np.sin(t)
    x = a * np.sign(c) * np.abs(c) ** 0.5
    y = a * np.sign(s) * np.abs(s) ** 0.5
    return np.stack([x, y], axis=1)


def _rect_distance(points: np.ndarray, cx, cy, hx, hy) -> np.ndarray:
    dx = np.maximum(np.abs(points[:, 0] - cx) - hx, 0.0)
    dy = np.maximum(np.abs(points[:, 1] - cy) - hy, 0.0)
    return np.hypot(dx, dy)


# -- world ------------------------------------------------------------------

def _ground_grid(world: WorldSpec):
    ex, ey = world.extent
    nx = max(1, int(math.ceil(ex / world.ground_resolution)))
    ny = max(1, int(math.ceil(ey / world.ground_resolution)))
    xs = np.linspace(-ex / 2, ex / 2, nx + 1)
    ys = np.linspace(-ey / 2, ey / 2, ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    verts = np.stack([gx.ravel(), gy.ravel(), np.full(gx.size, world.ground_z)], axis=1)
    idx = np.arange(gx.size).reshape(nx + 1, ny + 1)
    a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    c, d = idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
    tris = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return verts, tris


def _box(cx, cy, hx, hy, z0, z1):
    corners = np.array([[cx - hx, cy - hy], [cx + hx, cy - hy], [cx + hx, cy + hy], [cx - hx, cy + hy]])
    verts = np.concatenate([np.c_[corners, np.full(4, z0)], np.c_[corners, np.full(4, z1)]])
    tris = []
    for k in range(4):
        j = (k + 1) % 4
        tris += [[k, j, 4 + j], [k, 4 + j, 4 + k]]
    tris += [[4, 5, 6], [4, 6, 7]]
    return verts, np.array(tris)


def place_buildings(world: WorldSpec) -> np.ndarray:
    """Footprints (cx, cy, hx, hy, height) clear of the corridor and of each other."""
    rng = np.random.default_rng(world.seed)
    line = corridor_centerline(world, 1024)
    ex, ey = world.extent
    lo, hi = world.building_size
    out: list = []
    attempts = 0
    while len(out) < world.building_count and attempts < 400 * max(world.building_count, 1):
        attempts += 1
        hx, hy = rng.uniform(lo, hi, 2) / 2.0
        cx = rng.uniform(-ex / 2 + hx + 1.0, ex / 2 - hx - 1.0)
        cy = rng.uniform(-ey / 2 + hy + 1.0, ey / 2 - hy - 1.0)
        if _rect_distance(line, cx, cy, hx, hy).min() < world.corridor_half_width:
            continue
        if any(abs(cx - b[0]) < hx + b[2] + 1.0 and abs(cy - b[1]) < hy + b[3] + 1.0 for b in out):
            continue
        out.append((cx, cy, hx, hy, rng.uniform(*world.building_height)))
    return np.array(out).reshape(-1, 5)


def _perimeter(world: WorldSpec):
    ex, ey = world.extent
    z0, z1 = world.ground_z, world.ground_z + world.perimeter_height
    c = np.array([[-ex / 2, -ey / 2], [ex / 2, -ey / 2], [ex / 2, ey / 2], [-ex / 2, ey / 2]])
    verts = np.concatenate([np.c_[c, np.full(4, z0)], np.c_[c, np.full(4, z1)]])
    tris = []
    for k in range(4):
        j = (k + 1) % 4
        tris += [[k, j, 4 + j], [k, 4 + j, 4 + k]]
    return verts, np.array(tris)


def build_world(spec: WorldSpec) -> TriangleMesh:
    """Ground grid (ground-labeled), boundary walls and axis-aligned box buildings."""
    verts, tris = _ground_grid(spec)
    parts_v, parts_t = [verts], [tris]
    n = len(verts)
    boxes = list(place_buildings(spec))
    if spec.perimeter_height > 0:
        pv, pt = _perimeter(spec)
        parts_v.append(pv)
        parts_t.append(pt + n)
        n += len(pv)
    for cx, cy, hx, hy, height in boxes:
        bv, bt = _box(cx, cy, hx, hy, spec.ground_z, spec.ground_z + height)
        parts_v.append(bv)
        parts_t.append(bt + n)
        n += len(bv)
    v = np.concatenate(parts_v)
    ground = np.zeros(len(v), dtype=bool)
    ground[: len(verts)] = True
    return TriangleMesh(v, np.concatenate(parts_t), ground)


# -- trajectory --------------------------------------------------------------

def generate_trajectory(world: WorldSpec, spec: TrajectorySpec) -> Trajectory:
    """Drive along the corridor loop from a seeded start and direction."""
    rng = np.random.default_rng(spec.seed)
    line = corridor_centerline(world)
    closed = np.vstack([line, line[:1]])
    seg = np.hypot(*np.diff(closed, axis=0).T)
    s_tab = np.r_[0.0, np.cumsum(seg)]
    L = s_tab[-1]
    tangent = np.diff(closed, axis=0) / seg[:, None]
    s_mid = 0.5 * (s_tab[:-1] + s_tab[1:])

    s0 = rng.uniform(0.0, L)
    direction = 1.0 if rng.uniform() < 0.5 else -1.0
    n = spec.n_frames
    s = np.mod(s0 + direction * spec.speed * np.arange(n), L)
    x = np.interp(s, s_tab, closed[:, 0])
    y = np.interp(s, s_tab, closed[:, 1])
    yaw = np.arctan2(np.interp(s, s_mid, tangent[:, 1], period=L),
                     np.interp(s, s_mid, tangent[:, 0], period=L))
    if direction < 0:
        yaw = yaw + np.pi
    poses = np.stack([x, y, wrap_angle(yaw)], axis=1)

    odom = [MotionCommand(0.0, 0.0, 0.0)]
    for k in range(1, n):
        c = odometry_between(poses[k - 1], poses[k])
        odom.append(MotionCommand(
            c.trans + rng.normal(0.0, spec.sigma_trans) if spec.sigma_trans > 0 else c.trans,
            c.rot1 + rng.normal(0.0, spec.sigma_rot) if spec.sigma_rot > 0 else c.rot1,
            c.rot2 + rng.normal(0.0, spec.sigma_rot) if spec.sigma_rot > 0 else c.rot2,
        ))
    return Trajectory(poses, odom)


# -- scan simulation ---------------------------------------------------------

def _pixel_rays(intr: SensorIntrinsics) -> np.ndarray:
    # pixel centers (c + 1/2, r + 1/2) pushed back through the projection
    h, w = intr.height, intr.width
    u = np.arange(w) + 0.5
    v = np.arange(h) + 0.5
    azimuth = np.pi * (1.0 - 2.0 * u / w)
    elevation = intr.fov * (1.0 - v / h) - intr.fov_up
    el, az = np.meshgrid(elevation, azimuth, indexing="ij")
    return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)


def raycast_ranges(mesh: TriangleMesh, pose: np.ndarray, intr: SensorIntrinsics,
                   chunk: int = 16) -> np.ndarray:
    """Nearest hit within [min_range, max_range] per pixel ray; ``inf`` on a miss."""
    h, w = intr.height, intr.width
    d_sensor = _pixel_rays(intr).reshape(-1, 3)
    D = d_sensor @ np.asarray(pose)[:3, :3].T
    origin = np.asarray(pose)[:3, 3]
    best = np.full(D.shape[0], np.inf)
    V, T = mesh.vertices, mesh.triangles
    for s in range(0, mesh.n_triangles, chunk):
        tri = T[s:s + chunk]
        p0 = V[tri[:, 0]] - origin
        e1 = V[tri[:, 1]] - V[tri[:, 0]]
        e2 = V[tri[:, 2]] - V[tri[:, 0]]
        pvec = np.cross(D[None, :, :], e2[:, None, :])
        det = np.einsum("cnk,ck->cn", pvec, e1)
        hit = np.abs(det) >= DET_EPS
        inv = np.divide(1.0, det, out=np.zeros_like(det), where=hit)
        bu = -np.einsum("cnk,ck->cn", pvec, p0) * inv
        hit &= (bu >= 0.0) & (bu <= 1.0)
        qvec = -np.cross(p0, e1)
        bv = (D @ qvec.T).T * inv
        hit &= (bv >= 0.0) & (bu + bv <= 1.0)
        t = np.einsum("ck,ck->c", e2, qvec)[:, None] * inv
        hit &= (t >= intr.min_range) & (t <= intr.max_range)
        t = np.where(hit, t, np.inf)
        np.minimum(best, t.min(axis=0), out=best)
    return best.reshape(h, w)


_FAST: dict = {}


def _whole_mesh_renderer(mesh: TriangleMesh, intr: SensorIntrinsics):
    from .renderer import MeshRenderer

    key = (id(mesh), intr)
    r = _FAST.get(key)
    if r is None or r.mesh is not mesh:
        if len(_FAST) > 4:
            _FAST.clear()
        extent = float(np.ptp(mesh.vertices[:, :2], axis=0).max()) + 1.0 if mesh.n_vertices else 1.0
        r = _FAST[key] = MeshRenderer(mesh, build_tile_grid(mesh, tile_size=extent), intr)
    return r


def simulate_scan(mesh: TriangleMesh, pose: np.ndarray, intr: SensorIntrinsics,
                  noise_sigma: float = 0.02, seed=None, method: str = "raycast") -> PointCloud:
    """Simulated scan in the sensor frame, one point per hit pixel ray.

    ``method="raycast"`` is the brute-force reference; ``"render"`` uses the
    compiled renderer over the whole mesh, which the reference certifies.
    Noise is Gaussian along each ray.
    """
    if method == "raycast":
        ranges = raycast_ranges(mesh, pose, intr)
    elif method == "render":
        if mesh.n_triangles == 0:
            ranges = np.full(intr.shape, np.inf)
        else:
            r = _whole_mesh_renderer(mesh, intr)
            ranges = r.render_buffers(pose, [frozenset(r.grid.tiles)])[0]
    else:
        raise ValueError(f"unknown method {method!r}")
    hit = np.isfinite(ranges)
    r = ranges[hit]
    if noise_sigma > 0 and r.size:
        r = r + np.random.default_rng(seed).normal(0.0, noise_sigma, r.size)
    d = _pixel_rays(intr)[hit]
    pts = d * r[:, None]
    return PointCloud(pts, np.zeros(len(pts)))
