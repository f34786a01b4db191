"""File formats: KITTI scans and poses, PLY meshes, tile index, PGM dumps, trajectory logs."""

from __future__ import annotations

import json
import os
from typing import Iterable, Optional

import numpy as np
from plyfile import PlyData, PlyElement

from .mesh_map import TileGrid, TriangleMesh
from .range_image import PointCloud, RangeImage

TILE_INDEX_FORMAT = "meshmcl-tiles"
TILE_INDEX_VERSION = 1

GROUND_RGB = (255, 0, 0)
OTHER_RGB = (0, 0, 255)


class DataError(ValueError):
    """Malformed or missing input data (as opposed to a usage error)."""


def _require(path) -> None:
    if not os.path.isfile(path):
        raise DataError(f"{path}: no such file")


# -- scans ----------------------------------------------------------------

def load_scan(path) -> PointCloud:
    """KITTI velodyne ``.bin``: little-endian float32 (x, y, z, intensity) records."""
    _require(path)
    size = os.path.getsize(path)
    if size % 16:
        raise DataError(f"{path}: {size} bytes is not a whole number of 16-byte points")
    raw = np.fromfile(path, dtype="<f4").reshape(-1, 4)
    bad = ~np.isfinite(raw[:, :3]).all(axis=1)
    if bad.any():
        raise DataError(f"{path}: point {int(np.flatnonzero(bad)[0])} has non-finite coordinates")
    return PointCloud(raw[:, :3].astype(np.float64), raw[:, 3].astype(np.float64))


def save_scan(path, cloud: PointCloud) -> None:
    out = np.zeros((len(cloud), 4), dtype="<f4")
    out[:, :3] = cloud.points
    if cloud.intensity is not None:
        out[:, 3] = cloud.intensity
    out.tofile(path)


# -- poses ----------------------------------------------------------------

def parse_pose_line(line: str, lineno: int, source: str = "<poses>") -> np.ndarray:
    tokens = line.split()
    if len(tokens) != 12:
        raise DataError(f"{source}:{lineno}: expected 12 values, got {len(tokens)}")
    try:
        vals = np.array([float(t) for t in tokens])
    except ValueError as e:
        raise DataError(f"{source}:{lineno}: {e}") from None
    if not np.all(np.isfinite(vals)):
        raise DataError(f"{source}:{lineno}: non-finite value")
    T = np.eye(4)
    T[:3, :] = vals.reshape(3, 4)
    R = T[:3, :3]
    det = np.linalg.det(R)
    if abs(det - 1.0) > 1e-3 or np.abs(R.T @ R - np.eye(3)).max() > 1e-3:
        raise DataError(f"{source}:{lineno}: rotation is not orthonormal (det={det:.6f})")
    return T


def load_poses(path) -> np.ndarray:
    """KITTI poses: one row-major 3x4 transform per line; returns (n, 4, 4)."""
    _require(path)
    poses = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            poses.append(parse_pose_line(line, lineno, str(path)))
    return np.array(poses).reshape(-1, 4, 4)


def save_poses(path, poses) -> None:
    poses = np.asarray(poses, dtype=float).reshape(-1, 4, 4)
    with open(path, "w") as f:
        for T in poses:
            f.write(" ".join(repr(float(v)) for v in T[:3, :].ravel()) + "\n")


# -- meshes and clouds (PLY) ------------------------------------------------

def _colors(ground: np.ndarray) -> np.ndarray:
    rgb = np.empty((ground.size, 3), dtype=np.uint8)
    rgb[ground] = GROUND_RGB
    rgb[~ground] = OTHER_RGB
    return rgb


def save_mesh(path, mesh: TriangleMesh, binary: bool = True) -> None:
    """Vertices as float32 x, y, z plus red/blue ground labels; faces as index triples."""
    v = np.empty(mesh.n_vertices, dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                                         ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    v["x"], v["y"], v["z"] = mesh.vertices.T
    rgb = _colors(mesh.ground)
    v["red"], v["green"], v["blue"] = rgb.T
    f = np.empty(mesh.n_triangles, dtype=[("vertex_indices", "i4", (3,))])
    f["vertex_indices"] = mesh.triangles
    PlyData([PlyElement.describe(v, "vertex"), PlyElement.describe(f, "face")],
            text=not binary, byte_order="<").write(str(path))


def _read_ply(path) -> PlyData:
    _require(path)
    try:
        return PlyData.read(str(path))
    except Exception as e:  # plyfile raises several unrelated types
        raise DataError(f"{path}: unreadable PLY ({e})") from None


def _vertex_labels(vert, path) -> Optional[np.ndarray]:
    names = vert.data.dtype.names
    if not {"red", "green", "blue"} <= set(names):
        return None
    red, blue = np.asarray(vert["red"], dtype=int), np.asarray(vert["blue"], dtype=int)
    return red > blue


def load_mesh(path) -> TriangleMesh:
    """Read a PLY triangle mesh; vertices without colors are labeled non-ground."""
    ply = _read_ply(path)
    if "vertex" not in ply or "face" not in ply:
        raise DataError(f"{path}: PLY needs vertex and face elements")
    vert = ply["vertex"]
    V = np.stack([np.asarray(vert[c], dtype=np.float64) for c in "xyz"], axis=1)
    face = ply["face"]
    prop = "vertex_indices" if "vertex_indices" in face.data.dtype.names else "vertex_index"
    rows = face[prop]
    for i, row in enumerate(rows):
        if len(row) != 3:
            raise DataError(f"{path}: face {i} has {len(row)} vertices, expected 3")
    T = np.array([np.asarray(r, dtype=np.int64) for r in rows]).reshape(-1, 3)
    labels = _vertex_labels(vert, path)
    ground = labels if labels is not None else np.zeros(len(V), dtype=bool)
    mesh = TriangleMesh(V, T, ground)
    try:
        mesh.validate()
    except ValueError as e:
        raise DataError(f"{path}: {e}") from None
    return mesh


def mesh_has_labels(path) -> bool:
    return _vertex_labels(_read_ply(path)["vertex"], path) is not None


def save_cloud(path, points, normals=None, ground=None, binary: bool = True) -> None:
    """Oriented, labeled point cloud (input for an external surface reconstruction)."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if normals is not None:
        fields += [("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4")]
    if ground is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    v = np.empty(len(points), dtype=fields)
    v["x"], v["y"], v["z"] = points.T
    if normals is not None:
        v["nx"], v["ny"], v["nz"] = np.asarray(normals, dtype=float).reshape(-1, 3).T
    if ground is not None:
        rgb = _colors(np.asarray(ground, dtype=bool))
        v["red"], v["green"], v["blue"] = rgb.T
    PlyData([PlyElement.describe(v, "vertex")], text=not binary, byte_order="<").write(str(path))


def load_cloud(path):
    """Returns ``(points, normals or None, ground or None)``."""
    vert = _read_ply(path)["vertex"]
    names = vert.data.dtype.names
    P = np.stack([np.asarray(vert[c], dtype=np.float64) for c in "xyz"], axis=1)
    N = None
    if {"nx", "ny", "nz"} <= set(names):
        N = np.stack([np.asarray(vert[c], dtype=np.float64) for c in ("nx", "ny", "nz")], axis=1)
    return P, N, _vertex_labels(vert, path)


# -- tile index ---------------------------------------------------------------

def save_tile_index(path, grid: TileGrid) -> None:
    keys = sorted(grid.tiles)
    doc = {
        "format": TILE_INDEX_FORMAT,
        "version": TILE_INDEX_VERSION,
        "tile_size": grid.tile_size,
        "origin": list(grid.origin),
        "n_triangles": grid.n_triangles,
        "counts": {f"{i},{j}": int(grid.tiles[(i, j)].size) for i, j in keys},
        "tiles": {f"{i},{j}": grid.tiles[(i, j)].tolist() for i, j in keys},
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_tile_index(path) -> TileGrid:
    _require(path)
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: {e}") from None
    if doc.get("format") != TILE_INDEX_FORMAT:
        raise DataError(f"{path}: not a tile index")
    if doc.get("version") != TILE_INDEX_VERSION:
        raise DataError(f"{path}: unsupported tile index version {doc.get('version')}")
    tiles = {}
    for key, ids in doc["tiles"].items():
        i, j = (int(k) for k in key.split(","))
        arr = np.asarray(ids, dtype=np.int32)
        if arr.size != doc["counts"].get(key, -1):
            raise DataError(f"{path}: tile {key} count does not match its header")
        tiles[(i, j)] = arr
    return TileGrid(float(doc["tile_size"]), tuple(doc["origin"]), tiles, int(doc["n_triangles"]))


# -- range image dumps ---------------------------------------------------------

def save_pgm(path, image: RangeImage) -> None:
    """16-bit binary PGM in millimeters; invalid pixels are 0."""
    mm = np.clip(np.round(image.ranges * 1000.0), 0, 65535).astype(">u2")
    mm[~image.valid] = 0
    h, w = mm.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(mm.tobytes())


def load_pgm(path) -> RangeImage:
    _require(path)
    with open(path, "rb") as f:
        data = f.read()
    parts = data.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise DataError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 65535:
        raise DataError(f"{path}: expected 16-bit PGM, maxval {maxval}")
    body = parts[4]
    if len(body) != 2 * w * h:
        raise DataError(f"{path}: pixel data truncated")
    mm = np.frombuffer(body, dtype=">u2").reshape(h, w).astype(float)
    return RangeImage(mm / 1000.0, mm > 0)


# -- trajectory logs -----------------------------------------------------------

TRAJECTORY_COLUMNS = ("frame", "x", "y", "yaw", "n_eff", "converged", "tiles")


class TrajectoryWriter:
    """Comma-separated per-frame log, no header, flushed every line."""

    def __init__(self, path):
        self._f = open(path, "w")

    def write(self, frame: int, estimate, n_eff: float, converged: bool, tiles: int) -> None:
        x, y, yaw = estimate
        self._f.write(f"{frame},{x:.6f},{y:.6f},{yaw:.6f},{n_eff:.3f},{int(converged)},{tiles}\n")
        self._f.flush()

    def close(self) -> None:
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def load_trajectory(path):
    """Returns ``(frames, poses (n, 3), n_eff, converged, tiles)``."""
    _require(path)
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            cols = line.strip().split(",")
            if len(cols) != len(TRAJECTORY_COLUMNS):
                raise DataError(f"{path}:{lineno}: expected {len(TRAJECTORY_COLUMNS)} columns, got {len(cols)}")
            try:
                rows.append([float(c) for c in cols])
            except ValueError as e:
                raise DataError(f"{path}:{lineno}: {e}") from None
    a = np.array(rows).reshape(-1, len(TRAJECTORY_COLUMNS))
    return a[:, 0].astype(int), a[:, 1:4], a[:, 4], a[:, 5].astype(bool), a[:, 6].astype(int)


def save_planar_poses(path, poses: Iterable) -> None:
    """Planar (x, y, yaw) ground truth written as KITTI 3x4 rows at z = 0."""
    from .geometry import se3

    save_poses(path, np.array([se3(x, y, 0.0, yaw) for x, y, yaw in poses]).reshape(-1, 4, 4))
