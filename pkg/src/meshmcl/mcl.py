"""Monte Carlo localization with the range-image observation model."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .geometry import wrap_angle
from .mesh_map import TileGrid
from .range_image import RangeImage

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MotionCommand:
    """Odometry increment: rotate by ``rot1``, drive ``trans``, rotate by ``rot2``."""

    trans: float
    rot1: float
    rot2: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.trans, self.rot1, self.rot2)):
            raise ValueError("motion command must be finite")


def odometry_between(p0, p1) -> MotionCommand:
    """Decompose the planar motion from pose ``p0`` to ``p1`` (x, y, yaw)."""
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    trans = math.hypot(dx, dy)
    rot1 = wrap_angle(math.atan2(dy, dx) - p0[2]) if trans > 1e-12 else 0.0
    rot2 = wrap_angle(p1[2] - p0[2] - rot1)
    return MotionCommand(trans, float(rot1), float(rot2))


def apply_motion(poses: np.ndarray, trans, rot1, rot2) -> np.ndarray:
    poses = np.asarray(poses, dtype=float).reshape(-1, 3)
    heading = poses[:, 2] + rot1
    out = np.empty_like(poses)
    out[:, 0] = poses[:, 0] + trans * np.cos(heading)
    out[:, 1] = poses[:, 1] + trans * np.sin(heading)
    out[:, 2] = wrap_angle(heading + rot2)
    return out


@dataclass(frozen=True)
class MclConfig:
    n_init: int = 10_000
    n_track: int = 100
    n_conv: int = 1
    sigma_d: float = 5.0
    ess_ratio: float = 0.5
    alpha: tuple[float, float, float, float] = (0.02, 0.02, 0.05, 0.05)
    move_eps: float = 0.05
    n_min: Optional[int] = None  # default: 1% of the image
    d_max: Optional[float] = None  # default: sensor max_range

    def __post_init__(self):
        if self.n_track > self.n_init:
            raise ValueError("n_track must not exceed n_init")
        if not (0.0 < self.ess_ratio <= 1.0):
            raise ValueError("ess_ratio must lie in (0, 1]")
        if self.sigma_d <= 0:
            raise ValueError("sigma_d must be positive")
        if len(self.alpha) != 4 or min(self.alpha) < 0:
            raise ValueError("alpha needs four non-negative values")


@dataclass(frozen=True)
class ParticleSet:
    poses: np.ndarray  # (n, 3): x, y, yaw
    weights: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.poses, dtype=float).reshape(-1, 3)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.shape[0] != p.shape[0]:
            raise ValueError("one weight per particle required")
        object.__setattr__(self, "poses", p)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.poses.shape[0]

    @property
    def x(self):
        return self.poses[:, 0]

    @property
    def y(self):
        return self.poses[:, 1]

    @property
    def yaw(self):
        return self.poses[:, 2]


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def initialize_uniform(grid: TileGrid, n: int, seed=None) -> ParticleSet:
    """Uniform over the occupied tiles' union, uniform heading, equal weights."""
    if not grid.tiles:
        raise ValueError("tile grid is empty")
    rng = _rng(seed)
    keys = np.array(sorted(grid.tiles), dtype=float)
    pick = keys[rng.integers(0, len(keys), n)]
    s = grid.tile_size
    x = grid.origin[0] + (pick[:, 0] + rng.uniform(0.0, 1.0, n)) * s
    y = grid.origin[1] + (pick[:, 1] + rng.uniform(0.0, 1.0, n)) * s
    yaw = wrap_angle(rng.uniform(-np.pi, np.pi, n))
    return ParticleSet(np.stack([x, y, np.atleast_1d(yaw)], axis=1), np.full(n, 1.0 / n))


def motion_update(ps: ParticleSet, cmd: MotionCommand, cfg: MclConfig, seed=None) -> ParticleSet:
    """Sample the odometry motion model.

    Each increment is perturbed by zero-mean Gaussian noise whose variance
    mixes the squared increments: rot1 ~ a1 rot1^2 + a2 trans^2,
    trans ~ a3 trans^2 + a4 (rot1^2 + rot2^2), rot2 ~ a1 rot2^2 + a2 trans^2.
    """
    rng = _rng(seed)
    a1, a2, a3, a4 = cfg.alpha
    n = len(ps)
    t, r1, r2 = cmd.trans, cmd.rot1, cmd.rot2
    s_r1 = math.sqrt(a1 * r1 * r1 + a2 * t * t)
    s_t = math.sqrt(a3 * t * t + a4 * (r1 * r1 + r2 * r2))
    s_r2 = math.sqrt(a1 * r2 * r2 + a2 * t * t)
    rot1 = r1 + (rng.normal(0.0, s_r1, n) if s_r1 > 0 else 0.0)
    trans = t + (rng.normal(0.0, s_t, n) if s_t > 0 else 0.0)
    rot2 = r2 + (rng.normal(0.0, s_r2, n) if s_r2 > 0 else 0.0)
    return ParticleSet(apply_motion(ps.poses, trans, rot1, rot2), ps.weights.copy())


def likelihood(d, sigma_d: float):
    d = np.asarray(d, dtype=float)
    return np.exp(-0.5 * (d / sigma_d) ** 2)


def reweight(weights, d, sigma_d: float) -> tuple[np.ndarray, bool]:
    """Multiply by the Gaussian likelihood of ``d`` and normalize.

    Returns ``(weights, underflow)``; on total collapse the weights reset to
    uniform and ``underflow`` is True.
    """
    w = np.asarray(weights, dtype=float) * likelihood(d, sigma_d)
    total = w.sum()
    if not np.isfinite(total) or total <= 0.0:
        return np.full(w.size, 1.0 / w.size), True
    return w / total, False


def in_map(grid: TileGrid, x, y) -> np.ndarray:
    """True where (x, y) falls in a tile of the map."""
    i, j = grid.tile_of(x, y)
    if not grid.tiles:
        return np.zeros(np.shape(i), dtype=bool)
    keys = np.array(list(grid.tiles))
    lo = keys.min(axis=0)
    table = np.zeros(tuple(keys.max(axis=0) - lo + 1), dtype=bool)
    table[tuple((keys - lo).T)] = True
    a, b = i - lo[0], j - lo[1]
    ok = (a >= 0) & (a < table.shape[0]) & (b >= 0) & (b < table.shape[1])
    out = np.zeros(np.shape(i), dtype=bool)
    out[ok] = table[a[ok], b[ok]]
    return out


def _distances(ps: ParticleSet, scan: RangeImage, renderer, cfg: MclConfig) -> np.ndarray:
    # the tiled map is the state space: particles that left it get zero likelihood
    T = renderer.lift(ps.x, ps.y, ps.yaw)
    d, _ = renderer.score(T, scan, cfg.n_min, cfg.d_max)
    d[~in_map(renderer.grid, ps.x, ps.y)] = np.inf
    return d


def observation_update(ps: ParticleSet, scan: RangeImage, renderer, cfg: MclConfig,
                       moving: bool = True) -> ParticleSet:
    """Weight each particle by how well its rendered view matches ``scan``.

    ``renderer`` is a :class:`~meshmcl.renderer.MeshRenderer` bound to the map,
    tile grid and sensor.  Without motion the weights are left untouched.
    """
    if not moving or len(ps) == 0:
        return ps
    w, underflow = reweight(ps.weights, _distances(ps, scan, renderer, cfg), cfg.sigma_d)
    if underflow:
        log.warning("all particle likelihoods underflowed; weights reset to uniform")
    return ParticleSet(ps.poses, w)


def effective_particle_count(ps: ParticleSet) -> float:
    w = ps.weights
    return float(1.0 / np.dot(w, w))


def systematic_indices(weights, n: int, u: float) -> np.ndarray:
    """Low-variance resampling: one offset ``u`` in [0, 1), ``n`` evenly spaced pointers."""
    c = np.cumsum(weights)
    c[-1] = 1.0
    positions = (u + np.arange(n)) / n
    return np.minimum(np.searchsorted(c, positions, side="right"), len(c) - 1)


def resample(ps: ParticleSet, seed=None, n: Optional[int] = None) -> ParticleSet:
    """Systematic resampling to ``n`` particles (default: same count), uniform weights."""
    rng = _rng(seed)
    n = len(ps) if n is None else int(n)
    idx = systematic_indices(ps.weights, n, rng.uniform())
    return ParticleSet(ps.poses[idx].copy(), np.full(n, 1.0 / n))


class PoseEstimate(NamedTuple):
    x: float
    y: float
    yaw: float


def pose_estimate(ps: ParticleSet) -> PoseEstimate:
    w = ps.weights
    return PoseEstimate(
        float(w @ ps.x),
        float(w @ ps.y),
        float(math.atan2(w @ np.sin(ps.yaw), w @ np.cos(ps.yaw))),
    )


def occupied_tiles(ps: ParticleSet, grid: TileGrid) -> int:
    """Number of distinct tiles holding particles with non-zero weight."""
    live = ps.weights > 0
    if not live.any():
        return 0
    i, j = grid.tile_of(ps.x[live], ps.y[live])
    return int(np.unique(np.stack([i, j], axis=1), axis=0).shape[0])


class StepResult(NamedTuple):
    estimate: PoseEstimate
    converged: bool
    n_eff: float
    occupied_tiles: int
    moved: bool
    resampled: bool
    reduced: bool
    underflow: bool


@dataclass
class MonteCarloLocalizer:
    """Filter state; ``step`` consumes one scan and its odometry increment."""

    renderer: object
    config: MclConfig = field(default_factory=MclConfig)
    seed: Optional[int] = None
    particles: Optional[ParticleSet] = None
    converged: bool = False
    convergence_frame: Optional[int] = None
    frame: int = 0

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)
        if self.particles is None:
            self.particles = initialize_uniform(self.renderer.grid, self.config.n_init, self.rng)

    @property
    def grid(self) -> TileGrid:
        return self.renderer.grid

    def step(self, scan: RangeImage, cmd: MotionCommand) -> StepResult:
        cfg = self.config
        ps = motion_update(self.particles, cmd, cfg, self.rng)
        moving = cmd.trans > cfg.move_eps
        underflow = False
        if moving:
            w, underflow = reweight(ps.weights, _distances(ps, scan, self.renderer, cfg), cfg.sigma_d)
            if underflow:
                log.warning("frame %d: likelihoods underflowed, weights reset", self.frame)
            ps = ParticleSet(ps.poses, w)
        resampled = False
        if effective_particle_count(ps) < cfg.ess_ratio * len(ps):
            ps = resample(ps, self.rng)
            resampled = True
        tiles = occupied_tiles(ps, self.grid)
        reduced = False
        if not self.converged and 0 < tiles <= cfg.n_conv:
            ps = resample(ps, self.rng, cfg.n_track)
            self.converged = True
            self.convergence_frame = self.frame
            reduced = True
            log.info("frame %d: converged, tracking with %d particles", self.frame, len(ps))
        self.particles = ps
        result = StepResult(pose_estimate(ps), self.converged, effective_particle_count(ps),
                            tiles, moving, resampled, reduced, underflow)
        self.frame += 1
        return result


def step(filter_state: MonteCarloLocalizer, scan: RangeImage, cmd: MotionCommand):
    """Functional form: returns ``(filter_state, estimate, converged)``."""
    r = filter_state.step(scan, cmd)
    return filter_state, r.estimate, r.converged


def likelihood_grid(renderer, scan: RangeImage, center, half_extent: float = 5.0,
                    n_xy: int = 21, n_yaw: int = 16, sigma_d: float = 5.0) -> np.ndarray:
    """Observation likelihood on an (n_xy, n_xy, n_yaw) pose grid about ``center``.

    x and y span ``center ± half_extent``; headings cover the full circle
    starting at ``center[2]``.
    """
    cx, cy, cyaw = center
    xs = cx + np.linspace(-half_extent, half_extent, n_xy)
    ys = cy + np.linspace(-half_extent, half_extent, n_xy)
    yaws = cyaw + 2.0 * np.pi * np.arange(n_yaw) / n_yaw
    X, Y, A = np.meshgrid(xs, ys, yaws, indexing="ij")
    T = renderer.lift(X.ravel(), Y.ravel(), A.ravel())
    d, _ = renderer.score(T, scan)
    return likelihood(d, sigma_d).reshape(n_xy, n_xy, n_yaw)
