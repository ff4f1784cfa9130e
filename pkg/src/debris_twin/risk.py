"""Kinetic-energy risk per grid cell and per debris instance.

``KE = 0.5 * rho * V * U^2`` with ``rho`` the material density of the
debris class, ``V`` its volume and ``U`` the wind speed of a hurricane
category.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from matplotlib import colormaps
from PIL import Image

from .config import MaterialTable, WindScale
from .errors import DomainError, IoError, MissingDensity
from .volumetry import DebrisInstance, HeightGrid

HEATMAP_CMAP = "viridis"
CELL_PIXELS = 4
FLAG_COLUMNS = ("row", "col", "x", "y", "class", "class_name", "ke_j")


def kinetic_energy(rho: float, volume: float, speed: float) -> float:
    """Translational kinetic energy in joules of ``volume`` m^3 of material
    with density ``rho`` kg/m^3 moving at ``speed`` m/s."""
    for name, value in (("rho", rho), ("volume", volume), ("speed", speed)):
        if not math.isfinite(value) or value < 0:
            raise DomainError(f"{name} must be finite and non-negative, got {value}")
    if rho == 0:
        raise DomainError("rho must be > 0")
    return 0.5 * rho * volume * (speed * speed)


@dataclass(frozen=True, eq=False)
class RiskMap:
    category: int
    speed: float
    grid: HeightGrid
    ke: np.ndarray
    instance_ke: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        ke = np.array(self.ke, dtype=np.float64)
        if ke.shape != self.grid.shape:
            raise ValueError("KE raster must match the grid shape")
        ke.flags.writeable = False
        object.__setattr__(self, "ke", ke)
        object.__setattr__(self, "instance_ke", dict(self.instance_ke))

    def flagged(self, threshold: Optional[float]) -> np.ndarray:
        """Cells whose KE strictly exceeds ``threshold`` (none when None)."""
        if threshold is None:
            return np.zeros(self.ke.shape, dtype=bool)
        return self.ke > threshold


def _density_raster(grid: HeightGrid, materials: MaterialTable,
                    class_table: Sequence[str] = ()) -> np.ndarray:
    rho = np.zeros(grid.shape)
    active = grid.occupied
    for cls in np.unique(grid.classes[active]):
        cls = int(cls)
        if cls not in materials:
            name = class_table[cls] if cls < len(class_table) else None
            raise MissingDensity(cls, name)
        rho[active & (grid.classes == cls)] = materials[cls]
    return rho


def cell_kinetic_energy(grid: HeightGrid, materials: MaterialTable, speed: float,
                        class_table: Sequence[str] = ()) -> np.ndarray:
    rho = _density_raster(grid, materials, class_table)
    cell_volume = grid.cell_size ** 2 * grid.z
    return 0.5 * rho * cell_volume * (speed * speed)


def build_risk_maps(grid: HeightGrid, instances: Sequence[DebrisInstance],
                    materials: MaterialTable, scale: WindScale,
                    class_table: Sequence[str] = ()) -> list[RiskMap]:
    """One RiskMap per wind category: per-cell KE and per-instance KE."""
    rho = _density_raster(grid, materials, class_table)
    cell_volume = grid.cell_size ** 2 * grid.z
    base = 0.5 * rho * cell_volume
    maps = []
    for category, speed in scale:
        inst = {i.instance_id: kinetic_energy(materials[i.class_index], i.volume,
                                              speed)
                for i in instances}
        maps.append(RiskMap(category, speed, grid, base * (speed * speed), inst))
    return maps


def global_log_range(maps: Sequence[RiskMap]):
    """(lo, hi) of log10 KE over every positive cell of every map, or None."""
    lo, hi = math.inf, -math.inf
    for m in maps:
        pos = m.ke[m.ke > 0]
        if pos.size:
            lo = min(lo, float(np.log10(pos.min())))
            hi = max(hi, float(np.log10(pos.max())))
    return None if lo > hi else (lo, hi)


def heatmap_rgba(rmap: RiskMap, log_range=None, cell_pixels: int = CELL_PIXELS):
    """North-up RGBA raster; zero-KE cells are fully transparent."""
    ke = rmap.ke
    if log_range is None:
        log_range = global_log_range([rmap])
    rgba = np.zeros(ke.shape + (4,), dtype=np.uint8)
    hot = ke > 0
    if hot.any():
        lo, hi = log_range
        t = np.log10(ke[hot])
        t = np.full(t.shape, 0.5) if hi <= lo else np.clip((t - lo) / (hi - lo), 0, 1)
        lut = (colormaps[HEATMAP_CMAP](np.linspace(0, 1, 256)) * 255).round()
        rgba[hot] = lut.astype(np.uint8)[np.round(t * 255).astype(np.int64)]
    rgba = rgba[::-1]
    return np.repeat(np.repeat(rgba, cell_pixels, axis=0), cell_pixels, axis=1)


def flag_rows(rmap: RiskMap, threshold: Optional[float],
              class_table: Sequence[str] = ()):
    flagged = rmap.flagged(threshold)
    rows, cols = np.nonzero(flagged)
    xs, ys = rmap.grid.cell_centers(rows, cols)
    out = []
    for r, c, x, y in zip(rows, cols, xs, ys):
        cls = int(rmap.grid.classes[r, c])
        name = class_table[cls] if cls < len(class_table) else ""
        out.append((int(r), int(c), float(x), float(y), cls, name,
                    float(rmap.ke[r, c])))
    return out


def flags_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + "_flags.csv")


def render_heatmap(rmap: RiskMap, threshold: Optional[float], path, *,
                   log_range=None, class_table: Sequence[str] = (),
                   cell_pixels: int = CELL_PIXELS) -> Path:
    """Write the PNG heatmap and its ``*_flags.csv`` sidecar; returns the CSV path.

    Pass the same ``log_range`` to every category so colours are comparable.
    """
    rgba = heatmap_rgba(rmap, log_range, cell_pixels)
    buf = io.BytesIO()
    Image.fromarray(rgba, mode="RGBA").save(buf, format="PNG")
    lines = [",".join(FLAG_COLUMNS)]
    for r, c, x, y, cls, name, ke in flag_rows(rmap, threshold, class_table):
        lines.append(f"{r},{c},{x!r},{y!r},{cls},{name},{ke!r}")
    csv_path = flags_path(path)
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(buf.getvalue())
        csv_path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write heatmap: {exc.strerror}", path=path) from None
    return csv_path
