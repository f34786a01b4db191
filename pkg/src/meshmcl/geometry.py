"""Rigid-transform helpers shared across the package."""

from __future__ import annotations

import numpy as np


def wrap_angle(a):
    """Wrap angles to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    out = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    out = np.where(out == -np.pi, np.pi, out)
    return out if out.ndim else float(out)


def rot_z(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def se3(x: float, y: float, z: float, yaw: float) -> np.ndarray:
    """Homogeneous 4x4 transform with zero roll and pitch."""
    T = np.eye(4)
    T[:3, :3] = rot_z(yaw)
    T[:3, 3] = (x, y, z)
    return T


def se3_batch(x, y, z, yaw) -> np.ndarray:
    """Stack of (n, 4, 4) transforms from planar poses lifted to height z."""
    x, y, z, yaw = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, y, z, yaw)))
    n = x.size
    T = np.zeros((n, 4, 4))
    c, s = np.cos(yaw.ravel()), np.sin(yaw.ravel())
    T[:, 0, 0], T[:, 0, 1] = c, -s
    T[:, 1, 0], T[:, 1, 1] = s, c
    T[:, 2, 2] = 1.0
    T[:, 0, 3], T[:, 1, 3], T[:, 2, 3] = x.ravel(), y.ravel(), z.ravel()
    T[:, 3, 3] = 1.0
    return T


def yaw_of(T: np.ndarray) -> float:
    return float(np.arctan2(T[1, 0], T[0, 0]))


def transform_points(T: np.ndarray, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    return points @ T[:3, :3].T + T[:3, 3]


def is_rigid(T: np.ndarray, tol: float = 1e-3) -> bool:
    T = np.asarray(T, dtype=float)
    if T.shape != (4, 4) or not np.all(np.isfinite(T)):
        return False
    R = T[:3, :3]
    return (
        abs(np.linalg.det(R) - 1.0) <= tol
        and np.abs(R.T @ R - np.eye(3)).max() <= tol
        and np.allclose(T[3], (0.0, 0.0, 0.0, 1.0))
    )


def pose_to_kernel(T: np.ndarray) -> np.ndarray:
    """Flatten (n, 4, 4) transforms to the kernels' (n, 12) layout: R row-major, then t."""
    T = np.asarray(T, dtype=float).reshape(-1, 4, 4)
    out = np.empty((T.shape[0], 12))
    out[:, :9] = T[:, :3, :3].reshape(-1, 9)
    out[:, 9:] = T[:, :3, 3]
    return np.ascontiguousarray(out)
