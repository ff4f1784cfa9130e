"""Pipeline configuration: class taxonomy, densities, wind scale, parameters.

The on-disk format is TOML::

    [paths]
    cameras = "cameras.txt"
    cloud = "cloud.ply"
    masks = "masks"
    outdir = "out"

    [classes]
    names = ["background", "metal_girder", "portable_toilet",
             "pvc_piping", "plywood", "metal_piping"]

    [densities]          # kg/m^3, keyed by class name
    plywood = 600.0

    [wind]
    speeds = [33.0, 43.0, 50.0, 58.0, 70.0]   # m/s, category 1..n

    [projection]
    downsample = 4
    eps = 0.03           # metres; omit for the spacing-based default

    [volumetry]
    grid_size = 0.05
    min_cells = 4
    min_height = 0.01
    inlier_threshold = 0.05
    max_iters = 1000
    seed = 0

    [risk]
    threshold = 5000.0   # joules; omit to flag nothing

Relative paths resolve against the directory holding the config file.
Unknown sections or keys are rejected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, Optional, Sequence

import tomli

from .errors import InvalidConfig, MalformedFile

DEFAULT_CLASSES = (
    "background",
    "metal_girder",
    "portable_toilet",
    "pvc_piping",
    "plywood",
    "metal_piping",
)

# Editable engineering placeholders, not measured values.
DEFAULT_DENSITIES = {
    "metal_girder": 7850.0,
    "portable_toilet": 150.0,
    "pvc_piping": 1400.0,
    "plywood": 600.0,
    "metal_piping": 7850.0,
}

# Saffir-Simpson lower bounds: 74, 96, 111, 130, 157 mph.
DEFAULT_WIND_SPEEDS = (33.0, 43.0, 50.0, 58.0, 70.0)


@dataclass(frozen=True)
class MaterialTable:
    """Density (kg/m^3) per class index. Background never has an entry."""

    densities: Mapping[int, float]

    def __post_init__(self):
        clean = {}
        for k, v in dict(self.densities).items():
            k = int(k)
            v = float(v)
            if k == 0:
                raise InvalidConfig("background class cannot carry a density")
            if k < 0:
                raise InvalidConfig(f"negative class index {k}")
            if not (v > 0 and math.isfinite(v)):
                raise InvalidConfig(f"density for class {k} must be > 0, got {v}")
            clean[k] = v
        object.__setattr__(self, "densities", MappingProxyType(clean))

    def __getitem__(self, class_index: int) -> float:
        return self.densities[class_index]

    def __contains__(self, class_index) -> bool:
        return class_index in self.densities

    @classmethod
    def from_names(cls, names: Mapping[str, float], class_table: Sequence[str]):
        index = {n: i for i, n in enumerate(class_table)}
        out = {}
        for name, rho in names.items():
            if name not in index:
                raise InvalidConfig(f"density given for unknown class {name!r}")
            out[index[name]] = rho
        return cls(out)


@dataclass(frozen=True)
class WindScale:
    """Ordered (category id, representative speed in m/s) pairs."""

    categories: tuple

    def __post_init__(self):
        cats = tuple((int(c), float(u)) for c, u in self.categories)
        if not cats:
            raise InvalidConfig("wind scale needs at least one category")
        for c, u in cats:
            if not (math.isfinite(u) and u >= 0):
                raise InvalidConfig(f"wind speed for category {c} must be >= 0")
        ids = [c for c, _ in cats]
        if ids != sorted(ids) or len(set(ids)) != len(ids):
            raise InvalidConfig("category ids must be strictly increasing")
        speeds = [u for _, u in cats]
        if any(b <= a for a, b in zip(speeds, speeds[1:])):
            raise InvalidConfig("wind speeds must be strictly increasing")
        object.__setattr__(self, "categories", cats)

    @classmethod
    def from_speeds(cls, speeds: Sequence[float]):
        return cls(tuple((i + 1, u) for i, u in enumerate(speeds)))

    def __iter__(self):
        return iter(self.categories)

    def __len__(self):
        return len(self.categories)


def default_wind_scale() -> WindScale:
    return WindScale.from_speeds(DEFAULT_WIND_SPEEDS)


@dataclass(frozen=True)
class PipelineConfig:
    cameras: Optional[Path] = None
    cloud: Optional[Path] = None
    masks: Optional[Path] = None
    outdir: Path = Path("out")
    class_table: tuple = DEFAULT_CLASSES
    densities: Optional[Mapping[str, float]] = None  # None: defaults for known classes
    wind_speeds: tuple = DEFAULT_WIND_SPEEDS
    downsample: int = 4
    eps: Optional[float] = None
    grid_size: float = 0.05
    min_cells: int = 4
    min_height: float = 0.01
    inlier_threshold: float = 0.05
    max_iters: int = 1000
    seed: int = 0
    risk_threshold: Optional[float] = None

    def __post_init__(self):
        if self.densities is None:
            object.__setattr__(self, "densities", MappingProxyType(
                {k: v for k, v in DEFAULT_DENSITIES.items() if k in self.class_table}))
        _check(len(self.class_table) >= 1, "class table is empty")
        _check(len(set(self.class_table)) == len(self.class_table),
               "class names must be unique")
        _check(len(self.class_table) <= 256, "at most 256 classes (8-bit masks)")
        _check(isinstance(self.downsample, int) and 1 <= self.downsample <= 4096,
               "projection.downsample must be an integer in [1, 4096]")
        _check(self.eps is None or (math.isfinite(self.eps) and self.eps > 0),
               "projection.eps must be > 0")
        _check(math.isfinite(self.grid_size) and self.grid_size > 0,
               "volumetry.grid_size must be > 0")
        _check(isinstance(self.min_cells, int) and self.min_cells >= 1,
               "volumetry.min_cells must be an integer >= 1")
        _check(math.isfinite(self.min_height) and self.min_height >= 0,
               "volumetry.min_height must be >= 0")
        _check(math.isfinite(self.inlier_threshold) and self.inlier_threshold > 0,
               "volumetry.inlier_threshold must be > 0")
        _check(isinstance(self.max_iters, int) and self.max_iters >= 1,
               "volumetry.max_iters must be an integer >= 1")
        _check(isinstance(self.seed, int) and self.seed >= 0,
               "volumetry.seed must be a non-negative integer")
        _check(self.risk_threshold is None
               or (math.isfinite(self.risk_threshold) and self.risk_threshold >= 0),
               "risk.threshold must be >= 0")
        # validates names and values
        self.materials()
        self.wind_scale()

    def materials(self) -> MaterialTable:
        return MaterialTable.from_names(
            {k: v for k, v in self.densities.items()}, self.class_table)

    def wind_scale(self) -> WindScale:
        return WindScale.from_speeds(self.wind_speeds)

    def with_outdir(self, outdir) -> "PipelineConfig":
        return replace(self, outdir=Path(outdir))


def _check(cond, message):
    if not cond:
        raise InvalidConfig(message)


_SCHEMA = {
    "paths": {"cameras": str, "cloud": str, "masks": str, "outdir": str},
    "classes": {"names": list},
    "densities": None,  # free-form: class name -> float
    "wind": {"speeds": list},
    "projection": {"downsample": int, "eps": float},
    "volumetry": {"grid_size": float, "min_cells": int, "min_height": float,
                  "inlier_threshold": float, "max_iters": int, "seed": int},
    "risk": {"threshold": float},
}


def _typed(value, kind, key):
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidConfig(f"{key} must be a number")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvalidConfig(f"{key} must be an integer")
        return value
    if not isinstance(value, kind):
        raise InvalidConfig(f"{key} must be of type {kind.__name__}")
    return value


def parse_config_text(text: str, base_dir: Path = Path(".")) -> PipelineConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise InvalidConfig(f"config is not valid TOML: {exc}") from None

    kwargs = {}
    for section, body in raw.items():
        if section not in _SCHEMA:
            raise InvalidConfig(f"unknown config section [{section}]")
        if not isinstance(body, dict):
            raise InvalidConfig(f"[{section}] must be a table")
        keys = _SCHEMA[section]
        if keys is None:
            kwargs["densities"] = {
                name: _typed(rho, float, f"densities.{name}")
                for name, rho in body.items()}
            continue
        for key, value in body.items():
            if key not in keys:
                raise InvalidConfig(f"unknown config key {section}.{key}")
            value = _typed(value, keys[key], f"{section}.{key}")
            if section == "paths":
                kwargs[key] = (base_dir / value)
            elif section == "classes":
                if not all(isinstance(n, str) and n for n in value):
                    raise InvalidConfig("classes.names must be non-empty strings")
                kwargs["class_table"] = tuple(value)
            elif section == "wind":
                kwargs["wind_speeds"] = tuple(
                    _typed(u, float, "wind.speeds[]") for u in value)
            elif section == "risk":
                kwargs["risk_threshold"] = value
            else:
                kwargs[key] = value

    # defaults only apply to classes that exist in the table; user values win
    table = kwargs.get("class_table", DEFAULT_CLASSES)
    dens = {k: v for k, v in DEFAULT_DENSITIES.items() if k in table}
    dens.update(kwargs.get("densities", {}))
    kwargs["densities"] = MappingProxyType(dens)
    return PipelineConfig(**kwargs)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise MalformedFile(f"cannot read config: {exc.strerror}", path=path) from None
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedFile("config is not UTF-8", path=path, offset=exc.start) from None
    return parse_config_text(text, base_dir=path.parent)


def format_config(cfg: PipelineConfig, base_dir: Optional[Path] = None) -> str:
    """Serialize back to TOML (paths written relative to ``base_dir``)."""

    def rel(p):
        p = Path(p)
        if base_dir is not None:
            try:
                return p.relative_to(base_dir).as_posix()
            except ValueError:
                pass
        return p.as_posix()

    lines = ["[paths]"]
    for key in ("cameras", "cloud", "masks", "outdir"):
        value = getattr(cfg, key)
        if value is not None:
            lines.append(f'{key} = "{rel(value)}"')
    names = ", ".join(f'"{n}"' for n in cfg.class_table)
    lines += ["", "[classes]", f"names = [{names}]", "", "[densities]"]
    for name, rho in cfg.densities.items():
        lines.append(f"{name} = {float(rho)!r}")
    speeds = ", ".join(repr(float(u)) for u in cfg.wind_speeds)
    lines += ["", "[wind]", f"speeds = [{speeds}]", "", "[projection]",
              f"downsample = {cfg.downsample}"]
    if cfg.eps is not None:
        lines.append(f"eps = {cfg.eps!r}")
    lines += ["", "[volumetry]",
              f"grid_size = {cfg.grid_size!r}",
              f"min_cells = {cfg.min_cells}",
              f"min_height = {cfg.min_height!r}",
              f"inlier_threshold = {cfg.inlier_threshold!r}",
              f"max_iters = {cfg.max_iters}",
              f"seed = {cfg.seed}"]
    if cfg.risk_threshold is not None:
        lines += ["", "[risk]", f"threshold = {cfg.risk_threshold!r}"]
    return "\n".join(lines) + "\n"
