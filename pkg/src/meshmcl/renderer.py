"""Synthetic range images of the mesh map.

Rendering is exact ray casting through pixel centers, accelerated by
bounding each triangle in image space and testing only the pixels inside
that box.  The hot loop lives in ``_core`` (Cython) with a NumPy fallback.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _backend
from .geometry import pose_to_kernel, se3_batch
from .mesh_map import GroundHeightField, TileGrid, TriangleMesh, tiles_near
from .range_image import RangeImage, SensorIntrinsics, default_n_min, pixel_ray_directions


@dataclass(frozen=True)
class RenderRequest:
    pose: np.ndarray  # 4x4 sensor-to-map transform
    intr: SensorIntrinsics
    tiles: Optional[frozenset] = None  # None: tiles within max_range of the pose


class MeshRenderer:
    """Reusable renderer bound to one mesh, tile grid and sensor.

    ``threads`` > 1 splits batches across a thread pool; the kernels release
    the GIL, and every pose is computed independently, so results do not
    depend on the split.
    """

    def __init__(self, mesh: TriangleMesh, grid: TileGrid, intr: SensorIntrinsics,
                 backend: Optional[str] = None, threads: int = 1):
        self.mesh = mesh
        self.grid = grid
        self.intr = intr
        self.kernels = _backend.kernels if backend is None else _backend.load(backend)
        self.threads = max(1, int(threads))
        self._verts = np.ascontiguousarray(mesh.vertices, dtype=np.float64)
        self._tris = np.ascontiguousarray(mesh.triangles, dtype=np.intc)
        self._boxes = mesh.triangle_boxes() if mesh.n_triangles else np.zeros((0, 6))
        self._dirs = np.ascontiguousarray(pixel_ray_directions(intr))
        self._heights: Optional[GroundHeightField] = None
        self._cand_cache: dict = {}

    # -- particle lift ------------------------------------------------------
    @property
    def heights(self) -> GroundHeightField:
        if self._heights is None:
            self._heights = GroundHeightField(self.mesh)
        return self._heights

    def lift(self, x, y, yaw) -> np.ndarray:
        """Planar poses to (n, 4, 4) sensor poses at ``sensor_height`` above local ground."""
        z = self.heights(x, y) + self.intr.sensor_height
        return se3_batch(x, y, z, yaw)

    # -- candidate triangle sets ------------------------------------------
    def _candidates_for(self, tiles: frozenset) -> np.ndarray:
        c = self._cand_cache.get(tiles)
        if c is None:
            if len(self._cand_cache) > 4096:
                self._cand_cache.clear()
            c = np.ascontiguousarray(self.grid.triangles_in(sorted(tiles)), dtype=np.intc)
            self._cand_cache[tiles] = c
        return c

    def _groups(self, poses: np.ndarray, tiles: Optional[Sequence] = None):
        if tiles is None:
            keys = [self.tiles_for(T[0, 3], T[1, 3]) for T in poses]
        else:
            keys = [frozenset(t) for t in tiles]
        index: dict = {}
        pose_group = np.empty(len(poses), dtype=np.intc)
        parts = []
        for i, k in enumerate(keys):
            g = index.get(k)
            if g is None:
                g = index[k] = len(parts)
                parts.append(self._candidates_for(k))
            pose_group[i] = g
        offsets = np.zeros(len(parts) + 1, dtype=np.intp)
        if parts:
            offsets[1:] = np.cumsum([p.size for p in parts])
            cand = np.ascontiguousarray(np.concatenate(parts), dtype=np.intc)
        else:
            cand = np.zeros(0, dtype=np.intc)
        return cand, offsets, pose_group

    def tiles_for(self, x: float, y: float) -> frozenset:
        return frozenset(tiles_near(self.grid, (x, y), self.intr.max_range))

    # -- rendering ------------------------------------------------------------
    def _chunks(self, n: int):
        k = min(self.threads, max(n, 1))
        bounds = np.linspace(0, n, k + 1).astype(int)
        return [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]

    def render_buffers(self, poses, tiles: Optional[Sequence] = None) -> np.ndarray:
        """Raw (n, h, w) range buffers, ``inf`` where nothing was hit."""
        poses = np.asarray(poses, dtype=float).reshape(-1, 4, 4)
        n = poses.shape[0]
        h, w = self.intr.shape
        out = np.empty((n, h, w))
        if n == 0:
            return out
        cand, offsets, group = self._groups(poses, tiles)
        flat = pose_to_kernel(poses)
        i = self.intr

        def run(span):
            a, b = span
            self.kernels.render_many(self._verts, self._tris, self._boxes, cand, offsets,
                                     group[a:b], flat[a:b], self._dirs, i.min_range,
                                     i.max_range, i.fov_up, i.fov, out[a:b])

        self._dispatch(run, n)
        return out

    def render(self, pose, tiles=None) -> RangeImage:
        t = None if tiles is None else [tiles]
        return RangeImage.from_buffer(self.render_buffers(pose, t)[0])

    def render_batch(self, poses, tiles=None) -> list[RangeImage]:
        return [RangeImage.from_buffer(b) for b in self.render_buffers(poses, tiles)]

    def score(self, poses, scan: RangeImage, n_min: Optional[int] = None,
              d_max: Optional[float] = None):
        """Mean absolute difference between ``scan`` and the render at each pose.

        Returns ``(d, n_used)`` arrays; poses sharing fewer than ``n_min``
        valid pixels with the scan get ``d = d_max``.
        """
        poses = np.asarray(poses, dtype=float).reshape(-1, 4, 4)
        n = poses.shape[0]
        if scan.ranges.shape != self.intr.shape:
            raise ValueError(f"scan shape {scan.ranges.shape} != sensor shape {self.intr.shape}")
        n_min = default_n_min(self.intr.width, self.intr.height) if n_min is None else n_min
        d_max = self.intr.max_range if d_max is None else d_max
        sums = np.zeros(n)
        counts = np.zeros(n, dtype=np.longlong)
        if n == 0:
            return sums, counts.astype(np.int64)
        cand, offsets, group = self._groups(poses)
        flat = pose_to_kernel(poses)
        sr = np.ascontiguousarray(scan.ranges.reshape(-1), dtype=np.float64)
        sv = np.ascontiguousarray(scan.valid.reshape(-1), dtype=np.uint8)
        i = self.intr

        def run(span):
            a, b = span
            self.kernels.score_many(self._verts, self._tris, self._boxes, cand, offsets,
                                    group[a:b], flat[a:b], self._dirs, i.min_range,
                                    i.max_range, i.fov_up, i.fov, sr, sv, sums[a:b],
                                    counts[a:b])

        self._dispatch(run, n)
        ok = (counts >= max(n_min, 1))
        d = np.full(n, float(d_max))
        d[ok] = sums[ok] / counts[ok]
        return d, counts.astype(np.int64)

    def _dispatch(self, fn, n):
        spans = self._chunks(n)
        if len(spans) == 1:
            fn(spans[0])
            return
        with ThreadPoolExecutor(max_workers=len(spans)) as pool:
            list(pool.map(fn, spans))


_RENDERERS: dict = {}


def _renderer(mesh: TriangleMesh, grid: TileGrid, intr: SensorIntrinsics) -> MeshRenderer:
    key = (id(mesh), id(grid), intr)
    r = _RENDERERS.get(key)
    if r is None or r.mesh is not mesh or r.grid is not grid:
        if len(_RENDERERS) > 8:
            _RENDERERS.clear()
        r = _RENDERERS[key] = MeshRenderer(mesh, grid, intr)
    return r


def render_range_image(mesh: TriangleMesh, grid: TileGrid, req: RenderRequest) -> RangeImage:
    r = _renderer(mesh, grid, req.intr)
    return r.render(req.pose, req.tiles)


def render_batch(mesh: TriangleMesh, grid: TileGrid, poses, intr: SensorIntrinsics) -> list[RangeImage]:
    return _renderer(mesh, grid, intr).render_batch(poses)
