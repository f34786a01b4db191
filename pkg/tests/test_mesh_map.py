import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshmcl.geometry import rot_z, se3
from meshmcl.mesh_map import (DegenerateCloudError, GroundParams, TriangleMesh,
                              aggregate_clouds, build_tile_grid, contract_ground_vertices,
                              label_ground, label_scan_ground, principal_axes,
                              remove_invalid_triangles, simplify_map, smooth_ground_vertices,
                              tiles_near)
from meshmcl.range_image import PointCloud

from conftest import merge, quad


def grid_plane(n, step, z_noise=0.0, seed=0, ground=True):
    xs = np.arange(n + 1) * step
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    z = np.random.default_rng(seed).normal(0.0, z_noise, gx.size) if z_noise else np.zeros(gx.size)
    v = np.stack([gx.ravel(), gy.ravel(), z], 1)
    idx = np.arange(gx.size).reshape(n + 1, n + 1)
    a, b, c, d = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel(), idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
    t = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return TriangleMesh(v, t, np.full(len(v), ground))


# -- aggregation ----------------------------------------------------------------

def test_aggregate_identity():
    pts = np.random.default_rng(0).normal(size=(50, 3))
    out = aggregate_clouds([PointCloud(pts)], [np.eye(4)])
    np.testing.assert_array_equal(out.points, pts)


def test_aggregate_yaw_rotation():
    out = aggregate_clouds([PointCloud([[1.0, 0.0, 0.0]])], [se3(0, 0, 0, math.pi / 2)])
    np.testing.assert_allclose(out.points, [[0.0, 1.0, 0.0]], atol=1e-9)


def test_aggregate_matches_per_point_transform():
    rng = np.random.default_rng(1)
    scans = [rng.normal(size=(20, 3)), rng.normal(size=(30, 3))]
    poses = [se3(*rng.normal(size=3), rng.uniform(-3, 3)) for _ in scans]
    out = aggregate_clouds([PointCloud(s) for s in scans], poses)
    ref = []
    for s, T in zip(scans, poses):
        for p in s:
            ref.append([sum(T[i][k] * p[k] for k in range(3)) + T[i][3] for i in range(3)])
    np.testing.assert_allclose(out.points, ref, atol=1e-12)


def test_aggregate_count_mismatch():
    with pytest.raises(ValueError):
        aggregate_clouds([PointCloud(np.zeros((1, 3)))], [])


def test_aggregate_rejects_non_rigid():
    with pytest.raises(ValueError, match="pose 0"):
        aggregate_clouds([PointCloud(np.zeros((1, 3)))], [np.diag([2.0, 1, 1, 1])])


# -- principal axes -------------------------------------------------------------

def test_principal_axes_plane():
    rng = np.random.default_rng(2)
    pts = np.c_[rng.uniform(-5, 5, (500, 2)), np.zeros(500)]
    ax = principal_axes(pts)
    np.testing.assert_allclose(ax.e3, [0, 0, 1], atol=1e-6)
    assert ax.eigenvalues[2] == pytest.approx(0.0, abs=1e-12)
    assert ax.eigenvalues[0] >= ax.eigenvalues[1] >= ax.eigenvalues[2]


def test_principal_axes_e3_points_up():
    rng = np.random.default_rng(3)
    pts = np.c_[rng.uniform(-5, 5, (500, 2)), np.zeros(500)] @ rot_z(0.3).T
    pts[:, 2] = 0.1 * pts[:, 0]
    assert principal_axes(pts).e3[2] > 0


def test_principal_axes_isotropic():
    pts = np.random.default_rng(4).normal(size=(100_000, 3))
    ax = principal_axes(pts)
    # direct two-pass covariance
    mean = pts.sum(0) / len(pts)
    c = pts - mean
    cov = (c.T @ c) / len(pts)
    np.testing.assert_allclose(np.sort(ax.eigenvalues), np.sort(np.linalg.eigvalsh(cov)), rtol=1e-9)
    assert ax.eigenvalues[0] / ax.eigenvalues[2] < 1.1


def test_principal_axes_line():
    pts = np.c_[np.linspace(-3, 3, 50), np.zeros(50), np.zeros(50)]
    with pytest.raises(DegenerateCloudError):
        principal_axes(pts)
    ax = principal_axes(pts, allow_degenerate=True)
    assert ax.eigenvalues[1] == pytest.approx(0, abs=1e-12)
    assert ax.eigenvalues[2] == pytest.approx(0, abs=1e-12)
    np.testing.assert_allclose(np.abs(ax.e1), [1, 0, 0], atol=1e-12)


# -- ground labels ----------------------------------------------------------------

def test_label_ground_examples():
    params = GroundParams(alpha_thres=math.radians(30), z_thres=-1.0)
    pts = [[0, 0, -1.9], [0, 0, -1.9], [0, 0, -0.5]]
    nrm = [[0, 0, 1], [1, 0, 0], [0, 0, 1]]
    np.testing.assert_array_equal(label_ground(pts, nrm, (0, 0, 1), params), [True, False, False])


def test_label_ground_sign_of_normal_ignored():
    params = GroundParams(z_thres=1.0)
    assert label_ground([[0, 0, 0]], [[0, 0, -1]], (0, 0, 1), params)[0]


@settings(max_examples=50, deadline=None)
@given(st.floats(-math.pi, math.pi), st.integers(0, 1000))
def test_label_ground_rotation_invariant(yaw, seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(40, 3))
    nrm = rng.normal(size=(40, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    R = rot_z(yaw)
    p = GroundParams(z_thres=0.3)
    np.testing.assert_array_equal(label_ground(pts, nrm, (0, 0, 1), p),
                                  label_ground(pts @ R.T, nrm @ R.T, (0, 0, 1), p))


def test_label_scan_matches_scene_labels(small_world):
    from meshmcl.range_image import SensorIntrinsics
    from meshmcl.sim_world import _rect_distance, place_buildings, simulate_scan

    spec, mesh, _ = small_world
    # the band spans -fov_up..fov_down, so swap the angles to look mostly downward
    small_intr = SensorIntrinsics(width=360, height=32, fov_up=math.radians(25.0),
                                  fov_down=math.radians(3.0), max_range=40.0)
    params = GroundParams(z_thres=small_intr.sensor_height)
    boxes = place_buildings(spec)
    agree = total = 0
    for k, (x, y, yaw) in enumerate([(0.0, -28.0, 0.0), (25.0, 5.0, 1.5), (-20.0, 20.0, -2.0)]):
        T = se3(x, y, small_intr.sensor_height, yaw)
        scan = simulate_scan(mesh, T, small_intr, noise_sigma=0.0)
        lab = label_scan_ground(scan, small_intr, params)
        world = lab.points @ T[:3, :3].T + T[:3, 3]
        truth = np.abs(world[:, 2]) < 1e-6
        # distance to the nearest ground/wall junction
        ex, ey = spec.extent
        d = np.minimum.reduce([ex / 2 - np.abs(world[:, 0]), ey / 2 - np.abs(world[:, 1])])
        for cx, cy, hx, hy, _ in boxes:
            d = np.minimum(d, _rect_distance(world[:, :2], cx, cy, hx, hy))
        far = np.hypot(np.maximum(d, 0.0), world[:, 2]) > 0.2
        assert truth[far].any() and (~truth[far]).any()
        agree += int((lab.ground[far] == truth[far]).sum())
        total += int(far.sum())
    assert agree / total >= 0.99


# -- contraction --------------------------------------------------------------------

def test_contract_two_close_vertices():
    m = TriangleMesh([[0.2, 0.2, 0], [0.3, 0.2, 0], [5.5, 0.5, 0]], [[0, 1, 2]], [True, True, True])
    out = contract_ground_vertices(m, 1.0)
    assert out.n_vertices == 2 and out.n_triangles == 0
    assert any(np.allclose(v, [0.25, 0.2, 0]) for v in out.vertices)


def test_contract_two_far_vertices():
    m = TriangleMesh([[0.5, 0.5, 0], [5.5, 0.5, 0], [0.5, 5.5, 0]], [[0, 1, 2]], [True] * 3)
    out = contract_ground_vertices(m, 1.0)
    assert out.n_vertices == 3 and out.n_triangles == 1


def test_contract_dense_plane():
    m = grid_plane(100, 0.2)  # 20 m square, 0.2 m spacing
    out = contract_ground_vertices(m, 1.0)
    # reference voxel-hash pass
    keys = {tuple(int(math.floor(c / 1.0)) for c in v) for v in m.vertices}
    assert out.n_vertices == len(keys)
    assert m.n_vertices / out.n_vertices >= 20
    lo, hi = m.vertices[:, :2].min(0), m.vertices[:, :2].max(0)
    olo, ohi = out.vertices[:, :2].min(0), out.vertices[:, :2].max(0)
    assert np.all(np.abs(olo - lo) <= 1.0) and np.all(np.abs(ohi - hi) <= 1.0)
    out.validate()


def test_contract_leaves_non_ground_alone():
    wall = quad(0.1, 0.1, 0.0, 0.1, 0.4, 0.3, "x")
    m = TriangleMesh(wall[0], wall[1], np.zeros(4, bool))
    out = contract_ground_vertices(m, 1.0)
    np.testing.assert_array_equal(out.vertices, m.vertices)
    np.testing.assert_array_equal(out.triangles, m.triangles)


# -- smoothing -----------------------------------------------------------------------

def test_smooth_tetra_example():
    v = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]
    t = [[0, 1, 2], [0, 2, 3], [0, 3, 1]]
    out = smooth_ground_vertices(TriangleMesh(v, t, [True] * 4))
    np.testing.assert_allclose(out.vertices[0], [0.25, 0.25, 0.25])
    # edges to non-ground vertices do not count as ground neighbours
    out = smooth_ground_vertices(TriangleMesh(v, t, [True, False, False, False]))
    np.testing.assert_array_equal(out.vertices, v)


def test_smooth_isolated_vertex_unchanged():
    m = TriangleMesh([[1, 2, 3], [0, 0, 0], [1, 0, 0], [0, 1, 0]], [[1, 2, 3]], [True, False, False, False])
    out = smooth_ground_vertices(m)
    np.testing.assert_array_equal(out.vertices[0], [1, 2, 3])


def test_smooth_reduces_noise():
    m = grid_plane(40, 0.5, z_noise=0.05, seed=3)
    out = smooth_ground_vertices(m)
    z0 = m.vertices[:, 2]
    z1 = out.vertices[:, 2]
    var0 = sum((z - sum(z0) / len(z0)) ** 2 for z in z0) / len(z0)
    var1 = sum((z - sum(z1) / len(z1)) ** 2 for z in z1) / len(z1)
    assert var1 < var0


def test_smooth_idempotent_on_plane_interior():
    m = grid_plane(10, 1.0)
    out = smooth_ground_vertices(m)
    x, y = m.vertices[:, 0], m.vertices[:, 1]
    interior = (x > 0) & (x < 10) & (y > 0) & (y < 10)
    np.testing.assert_allclose(out.vertices[interior], m.vertices[interior], atol=1e-12)


# -- simplification ------------------------------------------------------------------

def urban_block(seed=0):
    ground = grid_plane(150, 0.2, z_noise=0.01, seed=seed)
    walls = [quad(5, 5, 0, 5, 20, 8, "x"), quad(5, 20, 0, 25, 20, 10, "y"),
             quad(25, 3, 0, 25, 20, 6, "x")]
    w = merge(*walls)
    return TriangleMesh(np.concatenate([ground.vertices, w.vertices]),
                        np.concatenate([ground.triangles, w.triangles + ground.n_vertices]),
                        np.concatenate([ground.ground, np.zeros(w.n_vertices, bool)]))


def test_simplify_without_ground_is_identity():
    m = merge(quad(0, 0, 0, 0, 1, 1, "x"))
    out = simplify_map(m)
    np.testing.assert_array_equal(out.vertices, m.vertices)
    np.testing.assert_array_equal(out.triangles, m.triangles)


def test_simplify_urban_block():
    m = urban_block()
    out = simplify_map(m)
    out.validate()
    assert out.byte_size() <= 0.7 * m.byte_size()
    assert np.all(out.triangle_areas() > 1e-12)
    # walls pass through untouched
    np.testing.assert_array_equal(out.vertices[~out.ground], m.vertices[~m.ground])
    wall_tris = m.triangles[~m.ground[m.triangles].any(axis=1)]
    out_wall = out.triangles[~out.ground[out.triangles].any(axis=1)]
    remap = np.full(m.n_vertices, -1)
    remap[np.flatnonzero(~m.ground)] = np.flatnonzero(~out.ground)
    np.testing.assert_array_equal(np.sort(remap[wall_tris], axis=1), np.sort(out_wall, axis=1))


def test_simplify_all_ground_halves_size():
    m = grid_plane(100, 0.25)
    out = simplify_map(m)
    assert out.n_vertices <= 0.5 * m.n_vertices
    assert out.byte_size() <= 0.5 * m.byte_size()


def test_remove_invalid_drops_duplicates_and_slivers():
    v = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0]]
    t = [[0, 1, 2], [2, 1, 0], [0, 1, 3]]  # duplicate, then collinear
    out = remove_invalid_triangles(TriangleMesh(v, t))
    assert out.n_triangles == 1


def test_ground_params_validation():
    with pytest.raises(ValueError):
        GroundParams(alpha_thres=math.pi / 2)
    with pytest.raises(ValueError):
        GroundParams(s_voxel=0.0)


# -- tiles ------------------------------------------------------------------------------

def brute_tiles(mesh, size, origin):
    out = {}
    box = mesh.triangle_boxes()
    i_max = int(math.ceil((box[:, 3].max() - origin[0]) / size))
    j_max = int(math.ceil((box[:, 4].max() - origin[1]) / size))
    for t, b in enumerate(box):
        for i in range(-1, i_max + 1):
            for j in range(-1, j_max + 1):
                x0, y0 = origin[0] + i * size, origin[1] + j * size
                # half-open squares; a box touching only the far edge of the map stays in
                ox = b[0] < x0 + size and b[3] >= x0 and not (b[3] == x0 and b[0] < x0)
                oy = b[1] < y0 + size and b[4] >= y0 and not (b[4] == y0 and b[1] < y0)
                if ox and oy and 0 <= i < max(i_max, 1) and 0 <= j < max(j_max, 1):
                    out.setdefault((i, j), set()).add(t)
    return out


def test_tile_single_triangle():
    m = TriangleMesh([[0, 0, 0], [300, 0, 0], [0, 300, 0], [110, 110, 0], [120, 110, 0], [110, 120, 0]],
                     [[0, 1, 2], [3, 4, 5]])
    g = build_tile_grid(m, 100.0, origin=(0, 0))
    assert [k for k, v in g.tiles.items() if 1 in v] == [(1, 1)]


def test_tile_straddling_triangle():
    m = TriangleMesh([[90, 10, 0], [110, 10, 0], [95, 20, 0]], [[0, 1, 2]])
    g = build_tile_grid(m, 100.0, origin=(0, 0))
    assert set(g.tiles) == {(0, 0), (1, 0)}


def test_tile_random_mesh_matches_brute_force():
    rng = np.random.default_rng(5)
    centers = rng.uniform(0, 400, (300, 2))
    v = np.concatenate([np.c_[centers + rng.uniform(-15, 15, (300, 2)), np.zeros(300)] for _ in range(3)])
    t = np.stack([np.arange(300), np.arange(300) + 300, np.arange(300) + 600], 1)
    m = TriangleMesh(v, t)
    origin = tuple(v[:, :2].min(0))
    g = build_tile_grid(m, 50.0)
    ref = brute_tiles(m, 50.0, origin)
    assert set(g.tiles) == set(ref)
    for k in ref:
        assert set(g.tiles[k].tolist()) == ref[k]
    covered = set().union(*[set(a.tolist()) for a in g.tiles.values()])
    assert covered == set(range(m.n_triangles))


def test_flat_far_edge_stays_in_last_tile():
    # a wall on the far boundary has a zero-width box exactly on the tile edge
    m = merge(quad(0, 0, 0, 200, 200, 0, "z"), quad(200, 0, 0, 200, 200, 5, "x"))
    g = build_tile_grid(m, 100.0)
    assert set(g.tiles) == {(0, 0), (0, 1), (1, 0), (1, 1)}


def _full_grid(size, n):
    m = merge(quad(0, 0, 0, size * n, size * n, 0, "z"))
    return build_tile_grid(m, size, origin=(0, 0))


def test_tiles_near_center_and_corner():
    g = _full_grid(100.0, 3)
    # every tile exists because the single ground quad spans them all
    assert tiles_near(g, (150, 150), 1.0) == {(1, 1)}
    assert tiles_near(g, (100, 100), 1.0) == {(0, 0), (0, 1), (1, 0), (1, 1)}


def test_tiles_near_random_matches_brute_force():
    g = _full_grid(20.0, 10)
    rng = np.random.default_rng(6)
    for _ in range(300):
        p = rng.uniform(-20, 220, 2)
        r = rng.uniform(0, 60)
        ref = set()
        for key in g.tiles:
            x0, y0, x1, y1 = g.square(key)
            cx, cy = min(max(p[0], x0), x1), min(max(p[1], y0), y1)
            if (cx - p[0]) ** 2 + (cy - p[1]) ** 2 <= r * r:
                ref.add(key)
        assert tiles_near(g, p, r) == ref


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_tiles_near_covers_triangles_in_range(seed):
    rng = np.random.default_rng(seed)
    v = rng.uniform(0, 300, (60, 3))
    t = rng.permuted(np.tile(np.arange(60), (3, 1)), axis=1).T[:40]
    t = t[(t[:, 0] != t[:, 1]) & (t[:, 1] != t[:, 2]) & (t[:, 0] != t[:, 2])]
    m = TriangleMesh(v, t)
    g = build_tile_grid(m, rng.uniform(20, 120))
    k = rng.integers(len(t))
    a, b, c = v[t[k]]
    w = rng.dirichlet([1, 1, 1])
    on_tri = w[0] * a + w[1] * b + w[2] * c
    radius = 50.0
    ang = rng.uniform(0, 2 * np.pi)
    p = on_tri[:2] + rng.uniform(0, radius) * np.array([np.cos(ang), np.sin(ang)])
    assert k in set(g.triangles_in(tiles_near(g, p, radius)).tolist())


def test_mesh_validation_errors():
    with pytest.raises(ValueError, match="out of range"):
        TriangleMesh([[0, 0, 0]], [[0, 1, 2]]).validate()
    with pytest.raises(ValueError, match="repeats"):
        TriangleMesh([[0, 0, 0], [1, 0, 0]], [[0, 1, 1]]).validate()
    with pytest.raises(ValueError):
        TriangleMesh([[0, 0, 0]], [], [True, False])
