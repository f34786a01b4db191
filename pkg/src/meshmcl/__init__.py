"""Range-image Monte Carlo localization in triangle-mesh maps."""

from ._backend import BACKEND
from .mcl import MclConfig, MonteCarloLocalizer, MotionCommand, ParticleSet
from .mesh_map import TileGrid, TriangleMesh, build_tile_grid
from .range_image import PointCloud, RangeImage, SensorIntrinsics, range_image_diff
from .renderer import MeshRenderer, RenderRequest, render_batch, render_range_image

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "MclConfig",
    "MeshRenderer",
    "MonteCarloLocalizer",
    "MotionCommand",
    "ParticleSet",
    "PointCloud",
    "RangeImage",
    "RenderRequest",
    "SensorIntrinsics",
    "TileGrid",
    "TriangleMesh",
    "build_tile_grid",
    "range_image_diff",
    "render_batch",
    "render_range_image",
]
