import math

import numpy as np
import pytest

from meshmcl.mesh_map import TriangleMesh, build_tile_grid
from meshmcl.range_image import SensorIntrinsics
from meshmcl.sim_world import WorldSpec, build_world


@pytest.fixture
def intr():
    return SensorIntrinsics()


@pytest.fixture(scope="session")
def small_intr():
    # coarse sensor keeps brute-force oracles cheap
    return SensorIntrinsics(width=180, height=16, fov_up=math.radians(3.0),
                            fov_down=math.radians(25.0), max_range=40.0)


@pytest.fixture(scope="session")
def small_world():
    spec = WorldSpec(extent=(80.0, 80.0), building_count=10, building_size=(4.0, 10.0),
                     corridor_half_width=5.0, ground_resolution=10.0, seed=7)
    mesh = build_world(spec)
    return spec, mesh, build_tile_grid(mesh, 40.0)


def quad(x0, y0, z0, x1, y1, z1, axis):
    """Axis-aligned rectangle as two triangles; ``axis`` is the constant coordinate."""
    if axis == "x":
        v = [[x0, y0, z0], [x0, y1, z0], [x0, y1, z1], [x0, y0, z1]]
    elif axis == "y":
        v = [[x0, y0, z0], [x1, y0, z0], [x1, y0, z1], [x0, y0, z1]]
    else:
        v = [[x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0]]
    return np.array(v, dtype=float), np.array([[0, 1, 2], [0, 2, 3]])


def merge(*parts):
    verts, tris, n = [], [], 0
    for v, t in parts:
        verts.append(v)
        tris.append(t + n)
        n += len(v)
    return TriangleMesh(np.concatenate(verts), np.concatenate(tris))
