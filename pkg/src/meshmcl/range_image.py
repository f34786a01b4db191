"""Spherical projection of LiDAR scans into vertex, range and normal maps."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

DEFAULT_MAX_RANGE = 50.0


@dataclass(frozen=True)
class SensorIntrinsics:
    """Image geometry and range window of a rotating LiDAR.

    Angles are in radians; ``fov_up``/``fov_down`` are measured from the
    horizontal.  ``sensor_height`` is the mount height above the ground.
    """

    width: int = 900
    height: int = 64
    fov_up: float = math.radians(3.0)
    fov_down: float = math.radians(25.0)
    min_range: float = 0.5
    max_range: float = DEFAULT_MAX_RANGE
    sensor_height: float = 1.73

    def __post_init__(self):
        if int(self.width) <= 0 or int(self.height) <= 0:
            raise ValueError("image dimensions must be positive")
        if not (self.fov_up > 0 and self.fov_down > 0):
            raise ValueError("fov_up and fov_down must be positive")
        if not (0 <= self.min_range < self.max_range):
            raise ValueError("need 0 <= min_range < max_range")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def fov(self) -> float:
        return self.fov_up + self.fov_down

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    intensity: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            bad = int(np.flatnonzero(~np.isfinite(pts).all(axis=1))[0])
            raise ValueError(f"point {bad} has non-finite coordinates")
        object.__setattr__(self, "points", pts)
        if self.intensity is not None:
            inten = np.asarray(self.intensity, dtype=float).reshape(-1)
            if inten.shape[0] != pts.shape[0]:
                raise ValueError("intensity length does not match point count")
            object.__setattr__(self, "intensity", inten)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class RangeImage:
    """(height, width) grid of ranges; invalid pixels hold 0.0."""

    ranges: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.ranges, dtype=float)
        v = np.asarray(self.valid, dtype=bool)
        if r.ndim != 2 or r.shape != v.shape:
            raise ValueError("ranges and valid must be equal-shape 2-D arrays")
        r = np.where(v, r, 0.0)
        object.__setattr__(self, "ranges", r)
        object.__setattr__(self, "valid", v)

    @classmethod
    def from_buffer(cls, buf: np.ndarray) -> "RangeImage":
        """Build from a kernel buffer where ``inf`` marks "no return"."""
        buf = np.asarray(buf, dtype=float)
        valid = np.isfinite(buf)
        return cls(np.where(valid, buf, 0.0), valid)

    @classmethod
    def empty(cls, intr: SensorIntrinsics) -> "RangeImage":
        return cls(np.zeros(intr.shape), np.zeros(intr.shape, dtype=bool))

    @property
    def width(self) -> int:
        return self.ranges.shape[1]

    @property
    def height(self) -> int:
        return self.ranges.shape[0]


@dataclass(frozen=True)
class VertexMap:
    vertices: np.ndarray  # (h, w, 3)
    valid: np.ndarray  # (h, w)

    @property
    def width(self) -> int:
        return self.vertices.shape[1]

    @property
    def height(self) -> int:
        return self.vertices.shape[0]


@dataclass(frozen=True)
class NormalMap:
    normals: np.ndarray  # (h, w, 3)
    valid: np.ndarray

    @property
    def width(self) -> int:
        return self.normals.shape[1]

    @property
    def height(self) -> int:
        return self.normals.shape[0]


def project_point(p, intr: SensorIntrinsics) -> Optional[tuple[int, int, float]]:
    """Pixel (u, v) and range of one point, or None outside the frustum."""
    x, y, z = (float(c) for c in p)
    r = math.sqrt(x * x + y * y + z * z)
    if r < intr.min_range or r > intr.max_range or r == 0.0:
        return None
    u = math.floor(0.5 * (1.0 - math.atan2(y, x) / math.pi) * intr.width) % intr.width
    v = math.floor((1.0 - (math.asin(z / r) + intr.fov_up) / intr.fov) * intr.height)
    if v < 0 or v >= intr.height:
        return None
    return u, v, r


def project_points(points: np.ndarray, intr: SensorIntrinsics):
    """Vectorized projection.

    Returns ``(u, v, r, keep)``; ``u``/``v`` are only meaningful where
    ``keep`` is true.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    r = np.linalg.norm(pts, axis=1)
    keep = (r >= intr.min_range) & (r <= intr.max_range) & (r > 0.0)
    safe_r = np.where(r > 0.0, r, 1.0)
    u = np.floor(0.5 * (1.0 - np.arctan2(pts[:, 1], pts[:, 0]) / np.pi) * intr.width)
    u = np.mod(u, intr.width).astype(np.int64)
    elev = np.arcsin(np.clip(pts[:, 2] / safe_r, -1.0, 1.0))
    v = np.floor((1.0 - (elev + intr.fov_up) / intr.fov) * intr.height).astype(np.int64)
    keep &= (v >= 0) & (v < intr.height)
    return u, v, r, keep


def pixel_ray_directions(intr: SensorIntrinsics) -> np.ndarray:
    """Unit ray direction through every pixel center, shape (h, w, 3)."""
    cols = np.arange(intr.width) + 0.5
    rows = np.arange(intr.height) + 0.5
    azim = np.pi * (1.0 - 2.0 * cols / intr.width)
    elev = (1.0 - rows / intr.height) * intr.fov - intr.fov_up
    ce = np.cos(elev)[:, None]
    dirs = np.empty((intr.height, intr.width, 3))
    dirs[..., 0] = ce * np.cos(azim)[None, :]
    dirs[..., 1] = ce * np.sin(azim)[None, :]
    dirs[..., 2] = np.sin(elev)[:, None]
    return dirs


def build_vertex_map(cloud: PointCloud, intr: SensorIntrinsics) -> tuple[VertexMap, RangeImage]:
    """Keep the nearest point per pixel."""
    h, w = intr.shape
    verts = np.zeros((h, w, 3))
    ranges = np.zeros((h, w))
    valid = np.zeros((h, w), dtype=bool)
    if len(cloud):
        u, v, r, keep = project_points(cloud.points, intr)
        idx = np.flatnonzero(keep)
        pix = v[idx] * w + u[idx]
        order = np.lexsort((r[idx], pix))
        pix_sorted = pix[order]
        first = np.ones(order.size, dtype=bool)
        first[1:] = pix_sorted[1:] != pix_sorted[:-1]
        chosen = idx[order[first]]
        pix_chosen = pix_sorted[first]
        verts.reshape(-1, 3)[pix_chosen] = cloud.points[chosen]
        ranges.reshape(-1)[pix_chosen] = r[chosen]
        valid.reshape(-1)[pix_chosen] = True
    return VertexMap(verts, valid), RangeImage(ranges, valid)


def compute_normal_map(vmap: VertexMap) -> NormalMap:
    """Normals from cross products of forward differences.

    The right neighbor wraps around the azimuth seam; the lower neighbor
    does not wrap.
    """
    V, ok = vmap.vertices, vmap.valid
    right = np.roll(V, -1, axis=1)
    right_ok = np.roll(ok, -1, axis=1)
    down = np.zeros_like(V)
    down[:-1] = V[1:]
    down_ok = np.zeros_like(ok)
    down_ok[:-1] = ok[1:]
    n = np.cross(right - V, down - V)
    length = np.linalg.norm(n, axis=2)
    valid = ok & right_ok & down_ok & (length > 0.0)
    normals = np.zeros_like(V)
    normals[valid] = n[valid] / length[valid][:, None]
    return NormalMap(normals, valid)


class ImageDifference(NamedTuple):
    d: float
    n_used: int
    informative: bool


def range_image_diff(
    scan: RangeImage,
    rendered: RangeImage,
    n_min: Optional[int] = None,
    d_max: float = DEFAULT_MAX_RANGE,
) -> ImageDifference:
    """Mean absolute range difference over pixels valid in both images.

    With fewer than ``n_min`` shared pixels (default 1% of the image) the
    pair is uninformative and ``d`` is reported as ``d_max``.
    """
    if scan.ranges.shape != rendered.ranges.shape:
        raise ValueError(
            f"range image shapes differ: {scan.ranges.shape} vs {rendered.ranges.shape}"
        )
    both = scan.valid & rendered.valid
    n_used = int(both.sum())
    if n_min is None:
        n_min = default_n_min(scan.width, scan.height)
    if n_used < n_min or n_used == 0:
        return ImageDifference(float(d_max), n_used, False)
    d = float(np.abs(scan.ranges[both] - rendered.ranges[both]).sum() / n_used)
    return ImageDifference(d, n_used, True)


def default_n_min(width: int, height: int) -> int:
    return int(math.ceil(0.01 * width * height))
