"""Flat, typed ``section.key = value`` configuration files.

Every key has a default taken from the dataclass it configures, and the
value is parsed with the type of that default.  Angles are stored in
radians; any angle key may instead be given in degrees with a ``_deg``
suffix (``sensor.fov_up_deg = 3``).  Lines starting with ``#`` are
comments.

Sections and keys::

    sensor.width  sensor.height  sensor.fov_up  sensor.fov_down
    sensor.min_range  sensor.max_range  sensor.sensor_height
    ground.alpha_thres  ground.z_thres  ground.s_voxel
    map.tile_size
    mcl.n_init  mcl.n_track  mcl.n_conv  mcl.sigma_d  mcl.ess_ratio
    mcl.alpha (four comma-separated values)  mcl.move_eps  mcl.n_min  mcl.d_max
    paths.map  paths.tiles  paths.scans  paths.poses  paths.odometry  paths.output
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional

from .mcl import MclConfig
from .mesh_map import GroundParams
from .range_image import SensorIntrinsics

ANGLE_KEYS = {("sensor", "fov_up"), ("sensor", "fov_down"), ("ground", "alpha_thres")}
OPTIONAL_INT = {("mcl", "n_min")}
OPTIONAL_FLOAT = {("mcl", "d_max")}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MapConfig:
    tile_size: float = 100.0

    def __post_init__(self):
        if self.tile_size <= 0:
            raise ValueError("tile_size must be positive")


@dataclass(frozen=True)
class PathsConfig:
    map: Optional[str] = None
    tiles: Optional[str] = None
    scans: Optional[str] = None
    poses: Optional[str] = None
    odometry: Optional[str] = None
    output: Optional[str] = None


@dataclass(frozen=True)
class Config:
    sensor: SensorIntrinsics = field(default_factory=SensorIntrinsics)
    ground: GroundParams = field(default_factory=GroundParams)
    map: MapConfig = field(default_factory=MapConfig)
    mcl: MclConfig = field(default_factory=MclConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)


SECTIONS = {f.name: f for f in dataclasses.fields(Config)}


def _parse_value(section: str, key: str, text: str, default, where: str):
    text = text.strip()
    try:
        if section == "paths":
            return text or None
        if (section, key) in OPTIONAL_INT:
            return None if text.lower() in ("", "none") else int(text)
        if (section, key) in OPTIONAL_FLOAT:
            return None if text.lower() in ("", "none") else float(text)
        if isinstance(default, bool):
            if text.lower() not in ("true", "false", "1", "0"):
                raise ValueError(f"expected a boolean, got {text!r}")
            return text.lower() in ("true", "1")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(float(t) for t in text.split(","))
    except ValueError as e:
        raise ConfigError(f"{where}: {section}.{key}: {e}") from None
    raise ConfigError(f"{where}: {section}.{key}: unsupported type")


def parse_config(text: str, source: str = "<config>", base: Optional[Config] = None) -> Config:
    base = Config() if base is None else base
    updates: dict = {name: {} for name in SECTIONS}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'section.key = value'")
        name, value = (s.strip() for s in line.split("=", 1))
        if "." not in name:
            raise ConfigError(f"{where}: key {name!r} has no section")
        section, key = name.split(".", 1)
        if section not in SECTIONS:
            raise ConfigError(f"{where}: unknown section {section!r}")
        in_degrees = key.endswith("_deg") and (section, key[:-4]) in ANGLE_KEYS
        if in_degrees:
            key = key[:-4]
        current = getattr(base, section)
        if key not in {f.name for f in dataclasses.fields(current)}:
            raise ConfigError(f"{where}: unknown key {section}.{key}")
        v = _parse_value(section, key, value, getattr(current, key), where)
        updates[section][key] = math.radians(v) if in_degrees else v
    parts = {}
    for section, changes in updates.items():
        try:
            parts[section] = dataclasses.replace(getattr(base, section), **changes)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{source}: [{section}] {e}") from None
    return Config(**parts)


def load_config(path, base: Optional[Config] = None) -> Config:
    with open(path) as f:
        return parse_config(f.read(), str(path), base)


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: Config) -> str:
    lines = []
    for section in SECTIONS:
        part = getattr(cfg, section)
        for f in dataclasses.fields(part):
            v = getattr(part, f.name)
            text = (v or "") if section == "paths" else _format(v)
            lines.append(f"{section}.{f.name} = {text}".rstrip())
    return "\n".join(lines) + "\n"
