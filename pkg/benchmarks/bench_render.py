"""Compare the compiled and NumPy rendering kernels on the synthetic world.

    python3 benchmarks/bench_render.py [--poses 100] [--height 64] [--width 900]

Prints frames/s for single-pose renders and for batched particle scoring,
per backend, plus the largest range difference between backends.
"""

import argparse
import time

import numpy as np

from meshmcl import _backend
from meshmcl.mesh_map import build_tile_grid
from meshmcl.range_image import SensorIntrinsics
from meshmcl.renderer import MeshRenderer
from meshmcl.sim_world import TrajectorySpec, WorldSpec, build_world, generate_trajectory


def timed(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--poses", type=int, default=100)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=900)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    world = WorldSpec(seed=args.seed)
    mesh = build_world(world)
    grid = build_tile_grid(mesh, 100.0)
    intr = SensorIntrinsics(width=args.width, height=args.height)
    traj = generate_trajectory(world, TrajectorySpec(length=300.0, seed=args.seed))
    pick = np.linspace(0, len(traj.poses) - 1, args.poses).astype(int)
    planar = traj.poses[pick]

    backends = ["python"] + (["cython"] if _backend.BACKEND == "cython" else [])
    print(f"mesh: {mesh.n_triangles} triangles, image {args.height}x{args.width}, {args.poses} poses")
    if len(backends) == 1:
        print("compiled extension not built; timing the NumPy kernels only")

    buffers = {}
    for name in backends:
        r = MeshRenderer(mesh, grid, intr, backend=name)
        T = r.lift(planar[:, 0], planar[:, 1], planar[:, 2])
        scan = r.render(T[0])
        r.render(T[0])  # warm the candidate cache
        t_single, _ = timed(lambda: [r.render(t) for t in T[:10]], args.repeat)
        t_batch, buf = timed(lambda: r.render_buffers(T), args.repeat)
        t_score, _ = timed(lambda: r.score(T, scan), args.repeat)
        buffers[name] = buf
        print(f"{name:>7}: single {10 / t_single:8.2f} frames/s | batch {len(T) / t_batch:8.2f} frames/s"
              f" | score {len(T) / t_score:8.2f} particles/s")

    if len(buffers) == 2:
        a, b = buffers["python"], buffers["cython"]
        both = np.isfinite(a) & np.isfinite(b)
        same_mask = np.array_equal(np.isfinite(a), np.isfinite(b))
        print(f"max |python - cython| = {np.abs(a[both] - b[both]).max():.2e} m, masks equal: {same_mask}")


if __name__ == "__main__":
    main()
