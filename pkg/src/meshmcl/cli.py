"""Command-line entry point: ``meshmcl <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import glob
import logging
import os
import sys
import time
from typing import Optional

import numpy as np

from . import io
from .config import Config, ConfigError, load_config
from .evaluation import evaluate, format_report
from .geometry import is_rigid, se3, transform_points, yaw_of
from .mcl import MonteCarloLocalizer, MotionCommand, odometry_between
from .mesh_map import TriangleMesh, build_tile_grid, label_scan_ground, simplify_map
from .range_image import build_vertex_map
from .renderer import MeshRenderer

log = logging.getLogger("meshmcl")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _planar(T: np.ndarray) -> tuple:
    return float(T[0, 3]), float(T[1, 3]), yaw_of(T)


def _tiles_path(map_path: str) -> str:
    root, _ = os.path.splitext(map_path)
    return root + ".tiles.json"


def _load_map(args, cfg: Config):
    map_path = args.map or cfg.paths.map
    if not map_path:
        raise UsageError("no map given (use --map or paths.map)")
    mesh = io.load_mesh(map_path)
    tiles = getattr(args, "tiles", None) or cfg.paths.tiles
    if tiles is None and os.path.isfile(_tiles_path(map_path)):
        tiles = _tiles_path(map_path)
    if tiles:
        grid = io.load_tile_index(tiles)
        if grid.n_triangles != mesh.n_triangles:
            raise io.DataError(f"{tiles}: indexes {grid.n_triangles} triangles, map has {mesh.n_triangles}")
    else:
        grid = build_tile_grid(mesh, cfg.map.tile_size)
    return mesh, grid


def _scan_files(directory: str) -> list:
    if not os.path.isdir(directory):
        raise io.DataError(f"{directory}: no such directory")
    files = sorted(glob.glob(os.path.join(directory, "*.bin")))
    if not files:
        raise io.DataError(f"{directory}: no .bin scans")
    return files


def _write_map(mesh: TriangleMesh, out: str, tile_size: float, tiles: Optional[str], ascii: bool):
    io.save_mesh(out, mesh, binary=not ascii)
    grid = build_tile_grid(mesh, tile_size)
    tiles = tiles or _tiles_path(out)
    io.save_tile_index(tiles, grid)
    log.info("wrote %s (%d vertices, %d triangles) and %s (%d tiles)",
             out, mesh.n_vertices, mesh.n_triangles, tiles, len(grid.tiles))
    return grid


# -- subcommands ---------------------------------------------------------------

def cmd_build_map(args, cfg: Config) -> int:
    if args.synthetic:
        from .sim_world import WorldSpec, build_world

        spec = WorldSpec(extent=(args.extent, args.extent), building_count=args.buildings,
                         seed=args.seed)
        mesh = build_world(spec)
        _write_map(mesh, args.out, cfg.map.tile_size, args.tiles, args.ascii)
        return EXIT_OK

    scans_dir = args.scans or cfg.paths.scans
    poses_path = args.poses or cfg.paths.poses
    if not scans_dir or not poses_path:
        raise UsageError("build-map needs --synthetic, or --scans and --poses")
    files = _scan_files(scans_dir)
    poses = io.load_poses(poses_path)
    if len(poses) != len(files):
        raise io.DataError(f"{poses_path}: {len(poses)} poses for {len(files)} scans")

    pts, nrm, lab = [], [], []
    for f, T in zip(files, poses):
        ls = label_scan_ground(io.load_scan(f), cfg.sensor, cfg.ground)
        if not is_rigid(T):
            raise io.DataError(f"{poses_path}: pose for {f} is not rigid")
        pts.append(transform_points(T, ls.points))
        nrm.append(ls.normals @ T[:3, :3].T)
        lab.append(ls.ground)
    P, N, G = np.concatenate(pts), np.concatenate(nrm), np.concatenate(lab)
    cloud_out = os.path.splitext(args.out)[0] + ".cloud.ply"
    io.save_cloud(cloud_out, P, N, G, binary=not args.ascii)
    log.info("wrote labeled oriented cloud %s (%d points, %d ground)", cloud_out, len(P), int(G.sum()))

    if not args.mesh:
        print(f"{cloud_out}: reconstruct a surface from this cloud, then rerun with --mesh")
        return EXIT_OK
    mesh = io.load_mesh(args.mesh)
    if not io.mesh_has_labels(args.mesh):
        from scipy.spatial import cKDTree

        _, nearest = cKDTree(P).query(mesh.vertices)
        mesh = TriangleMesh(mesh.vertices, mesh.triangles, G[nearest])
    simplified = simplify_map(mesh, cfg.ground)
    log.info("simplified %d -> %d bytes", mesh.byte_size(), simplified.byte_size())
    _write_map(simplified, args.out, cfg.map.tile_size, args.tiles, args.ascii)
    return EXIT_OK


def cmd_simulate(args, cfg: Config) -> int:
    from .sim_world import TrajectorySpec, WorldSpec, build_world, generate_trajectory, simulate_scan

    out = args.out
    os.makedirs(os.path.join(out, "scans"), exist_ok=True)
    world = WorldSpec(extent=(args.extent, args.extent), building_count=args.buildings, seed=args.seed)
    mesh = build_world(world)
    grid = _write_map(mesh, os.path.join(out, "map.ply"), cfg.map.tile_size, None, False)
    spec = TrajectorySpec(length=args.frames * args.speed, speed=args.speed, seed=args.seed)
    traj = generate_trajectory(world, spec)
    renderer = MeshRenderer(mesh, grid, cfg.sensor)
    truth = renderer.lift(traj.poses[:, 0], traj.poses[:, 1], traj.poses[:, 2])
    for k, T in enumerate(truth):
        cloud = simulate_scan(mesh, T, cfg.sensor, noise_sigma=args.noise,
                              seed=args.seed * 100003 + k, method=args.method)
        io.save_scan(os.path.join(out, "scans", f"{k:06d}.bin"), cloud)
    io.save_poses(os.path.join(out, "poses.txt"), truth)

    # odometry as integrated noisy increments, KITTI layout
    x, y, yaw = traj.poses[0]
    odo = []
    for cmd in traj.odometry:
        h = yaw + cmd.rot1
        x, y, yaw = x + cmd.trans * np.cos(h), y + cmd.trans * np.sin(h), h + cmd.rot2
        odo.append(se3(x, y, 0.0, yaw))
    io.save_poses(os.path.join(out, "odometry.txt"), odo)
    log.info("simulated %d frames into %s", len(truth), out)
    return EXIT_OK


def cmd_localize(args, cfg: Config) -> int:
    mesh, grid = _load_map(args, cfg)
    scans_dir = args.scans or cfg.paths.scans
    odo_path = args.odometry or cfg.paths.odometry
    out = args.out or cfg.paths.output
    if not scans_dir or not odo_path or not out:
        raise UsageError("localize needs --scans, --odometry and --out (or the paths.* keys)")
    files = _scan_files(scans_dir)
    odo = io.load_poses(odo_path)
    if len(odo) != len(files):
        raise io.DataError(f"{odo_path}: {len(odo)} odometry poses for {len(files)} scans")
    planar = [_planar(T) for T in odo]
    cmds = [MotionCommand(0.0, 0.0, 0.0)] + [odometry_between(a, b) for a, b in zip(planar, planar[1:])]

    mcl_cfg = cfg.mcl
    if args.particles is not None:
        from dataclasses import replace

        mcl_cfg = replace(mcl_cfg, n_init=args.particles, n_track=min(mcl_cfg.n_track, args.particles))
    renderer = MeshRenderer(mesh, grid, cfg.sensor, threads=args.threads)
    mcl = MonteCarloLocalizer(renderer, mcl_cfg, seed=args.seed)
    t0 = time.perf_counter()
    with io.TrajectoryWriter(out) as w:
        for k, (f, cmd) in enumerate(zip(files, cmds)):
            _, scan = build_vertex_map(io.load_scan(f), cfg.sensor)
            r = mcl.step(scan, cmd)
            w.write(k, r.estimate, r.n_eff, r.converged, r.occupied_tiles)
            log.info("frame %d: %d particles, %d tiles, n_eff %.1f%s", k, len(mcl.particles),
                     r.occupied_tiles, r.n_eff, " (converged)" if r.reduced else "")
    dt = time.perf_counter() - t0
    conv = mcl.convergence_frame
    print(f"frames: {len(files)}\nconvergence_frame: {'none' if conv is None else conv}\n"
          f"rate_hz: {len(files) / dt:.2f}")
    return EXIT_OK


def cmd_evaluate(args, cfg: Config) -> int:
    frames, est, _, converged, _ = io.load_trajectory(args.trajectory)
    gt = io.load_poses(args.poses)
    if len(gt) != len(est):
        raise io.DataError(f"{args.poses}: {len(gt)} poses for {len(est)} trajectory frames")
    truth = np.array([_planar(T) for T in gt]).reshape(-1, 3)
    conv = int(frames[np.argmax(converged)]) if converged.any() else None
    text = format_report(evaluate(est, truth, conv))
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_render_debug(args, cfg: Config) -> int:
    mesh, grid = _load_map(args, cfg)
    renderer = MeshRenderer(mesh, grid, cfg.sensor)
    if args.pose is not None:
        x, y, yaw = args.pose
        T = renderer.lift(x, y, yaw)[0]
    elif args.poses:
        poses = io.load_poses(args.poses)
        if not 0 <= args.index < len(poses):
            raise io.DataError(f"{args.poses}: no pose {args.index} (file has {len(poses)})")
        T = poses[args.index]
    else:
        raise UsageError("render-debug needs --pose X Y YAW or --poses FILE")
    image = renderer.render(T)
    io.save_pgm(args.out, image)
    print(f"{args.out}: {int(image.valid.sum())} valid pixels")
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="meshmcl", description="Range-image Monte Carlo localization in mesh maps.")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1, help="renderer worker threads")
    p.add_argument("--verbose", "-v", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")

    b = sub.add_parser("build-map", help="scans + poses (or a synthetic world) to a labeled map")
    b.add_argument("--synthetic", action="store_true", help="generate the synthetic test world")
    b.add_argument("--extent", type=float, default=200.0)
    b.add_argument("--buildings", type=int, default=60)
    b.add_argument("--scans", help="directory of .bin scans")
    b.add_argument("--poses", help="KITTI pose file, one per scan")
    b.add_argument("--mesh", help="surface reconstructed from the labeled cloud")
    b.add_argument("--out", required=True, help="output PLY")
    b.add_argument("--tiles", help="tile index path (default: <out>.tiles.json)")
    b.add_argument("--ascii", action="store_true", help="write ASCII PLY")
    b.set_defaults(func=cmd_build_map)

    s = sub.add_parser("simulate", help="synthetic world, trajectory, scans and odometry")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--frames", type=int, default=300)
    s.add_argument("--speed", type=float, default=1.0, help="meters per frame")
    s.add_argument("--noise", type=float, default=0.02, help="range noise sigma")
    s.add_argument("--extent", type=float, default=200.0)
    s.add_argument("--buildings", type=int, default=60)
    s.add_argument("--method", choices=("render", "raycast"), default="render")
    s.set_defaults(func=cmd_simulate)

    lo = sub.add_parser("localize", help="run MCL over a scan sequence")
    lo.add_argument("--map")
    lo.add_argument("--tiles")
    lo.add_argument("--scans")
    lo.add_argument("--odometry", help="KITTI-format odometry poses")
    lo.add_argument("--out", help="trajectory CSV")
    lo.add_argument("--particles", type=int, help="override mcl.n_init")
    lo.set_defaults(func=cmd_localize)

    e = sub.add_parser("evaluate", help="score a trajectory log against ground truth")
    e.add_argument("--trajectory", required=True)
    e.add_argument("--poses", required=True, help="ground-truth KITTI poses")
    e.add_argument("--out", help="also write the report here")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("render-debug", help="dump a rendered range image as 16-bit PGM")
    r.add_argument("--map")
    r.add_argument("--tiles")
    r.add_argument("--pose", type=float, nargs=3, metavar=("X", "Y", "YAW"))
    r.add_argument("--poses", help="KITTI pose file")
    r.add_argument("--index", type=int, default=0)
    r.add_argument("--out", required=True, help="output PGM")
    r.set_defaults(func=cmd_render_debug)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("meshmcl: error: a subcommand is required")
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return EXIT_OK if not e.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else Config()
        return args.func(args, cfg)
    except UsageError as e:
        print(f"meshmcl: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as e:
        print(f"meshmcl: {e.filename}: no such file", file=sys.stderr)
        return EXIT_DATA
    except (io.DataError, ConfigError, ValueError) as e:
        print(f"meshmcl: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
