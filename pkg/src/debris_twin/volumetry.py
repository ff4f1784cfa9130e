"""Ground registration, height-grid resampling and debris volumes.

Volumes follow ``V = GS^2 * sum(Z)`` over a set of grid cells, where ``Z``
is the height of the resampled debris surface above the registered ground
and ``GS`` the cell size.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import DegenerateGeometry

DEFAULT_GRID_SIZE = 0.05
DEFAULT_MIN_CELLS = 4
DEFAULT_INLIER_THRESHOLD = 0.05
DEFAULT_MAX_ITERS = 1000
RANSAC_SCORE_SAMPLES = 200_000


@dataclass(frozen=True)
class GroundPlane:
    normal: tuple
    offset: float
    inlier_fraction: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        if n.shape != (3,) or not math.isclose(np.linalg.norm(n), 1.0, abs_tol=1e-9):
            raise ValueError("plane normal must be a unit 3-vector")
        object.__setattr__(self, "normal", tuple(float(x) for x in n))
        object.__setattr__(self, "offset", float(self.offset))

    def signed_height(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64).reshape(-1, 3) @ \
            np.asarray(self.normal) + self.offset

    def basis(self):
        """Deterministic in-plane axes (u, v) such that (u, v, n) is right-handed.

        Seeds u from the world axis along which the normal has the smallest
        magnitude (first such axis on ties).
        """
        n = np.asarray(self.normal)
        a = np.zeros(3)
        a[int(np.argmin(np.abs(n)))] = 1.0
        u = a - (a @ n) * n
        u /= np.linalg.norm(u)
        v = np.cross(n, u)
        return u, v

    def to_plane_frame(self, points) -> np.ndarray:
        """(s, t, h): in-plane coordinates and signed height."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        u, v = self.basis()
        return np.column_stack([pts @ u, pts @ v, self.signed_height(pts)])


@dataclass(frozen=True, eq=False)
class HeightGrid:
    """Resampled debris heights. Arrays are (rows, cols); row 0 holds the
    smallest in-plane ``t`` coordinate, column 0 the smallest ``s``."""

    origin: tuple
    cell_size: float
    z: np.ndarray
    classes: np.ndarray
    counts: np.ndarray
    plane: Optional[GroundPlane] = None

    def __post_init__(self):
        z = np.array(self.z, dtype=np.float64)
        classes = np.array(self.classes, dtype=np.int64)
        counts = np.array(self.counts, dtype=np.int64)
        if z.ndim != 2 or classes.shape != z.shape or counts.shape != z.shape:
            raise ValueError("z, classes and counts must share one 2-D shape")
        if not self.cell_size > 0:
            raise ValueError("cell size must be > 0")
        for a in (z, classes, counts):
            a.flags.writeable = False
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "origin", (float(self.origin[0]),
                                            float(self.origin[1])))
        object.__setattr__(self, "cell_size", float(self.cell_size))

    @property
    def shape(self):
        return self.z.shape

    @property
    def occupied(self) -> np.ndarray:
        return (self.counts > 0) & (self.classes > 0)

    def cell_centers(self, rows, cols):
        gs = self.cell_size
        return (self.origin[0] + (np.asarray(cols) + 0.5) * gs,
                self.origin[1] + (np.asarray(rows) + 0.5) * gs)


@dataclass(frozen=True, eq=False)
class DebrisInstance:
    instance_id: int
    class_index: int
    cells: np.ndarray  # (k, 2) of (row, col)
    volume: float
    centroid: tuple
    area: float


# ---------------------------------------------------------------------------
# ground registration
# ---------------------------------------------------------------------------

def _fit_plane_lsq(points):
    centroid = points.mean(axis=0)
    _, s, vt = np.linalg.svd(points - centroid, full_matrices=False)
    n = vt[-1]
    return n / np.linalg.norm(n), centroid, s


def _is_degenerate(points, tol=1e-9) -> bool:
    if len(points) < 3:
        return True
    centered = points - points.mean(axis=0)
    scale = max(np.abs(centered).max(), 1e-300)
    s = np.linalg.svd(centered / scale, compute_uv=False)
    return s[1] <= tol * max(s[0], 1e-300)


def register_ground(points, labels=None, inlier_threshold: float =
                    DEFAULT_INLIER_THRESHOLD, max_iters: int = DEFAULT_MAX_ITERS,
                    seed: int = 0) -> GroundPlane:
    """Fit the ground plane by random-sample consensus on background points.

    ``points`` may be a SemanticCloud (labels taken from its fused classes)
    or an (N, 3) array with ``labels`` alongside. Falls back to all points
    when fewer than three are labeled background. The winning plane is refined
    by least squares on its inliers and oriented so the majority of debris
    points sit on the positive side (+z-ish when there is no debris).
    """
    if hasattr(points, "fused"):
        labels = points.fused
        points = points.points
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    labels = np.zeros(len(pts), dtype=np.int64) if labels is None \
        else np.asarray(labels)
    background = labels == 0
    cand = pts[background] if background.sum() >= 3 else pts
    if _is_degenerate(cand):
        raise DegenerateGeometry("ground candidates are collinear or coincident",
                                 points=len(cand))

    rng = np.random.default_rng(seed)
    if len(cand) > RANSAC_SCORE_SAMPLES:
        score_pts = cand[rng.choice(len(cand), RANSAC_SCORE_SAMPLES, replace=False)]
    else:
        score_pts = cand
    samples = np.stack([rng.choice(len(cand), 3, replace=False)
                        for _ in range(max_iters)])
    p0, p1, p2 = cand[samples[:, 0]], cand[samples[:, 1]], cand[samples[:, 2]]
    normals = np.cross(p1 - p0, p2 - p0)
    norms = np.linalg.norm(normals, axis=1)
    scale = np.maximum(np.linalg.norm(p1 - p0, axis=1)
                       * np.linalg.norm(p2 - p0, axis=1), 1e-300)
    good = norms > 1e-12 * scale

    best, best_count = None, -1
    for i in np.flatnonzero(good):
        n = normals[i] / norms[i]
        d = -n @ p0[i]
        count = int(np.count_nonzero(np.abs(score_pts @ n + d) <= inlier_threshold))
        if count > best_count:
            best, best_count = (n, d), count
    if best is None:
        raise DegenerateGeometry("no non-degenerate sample found", points=len(cand))

    n, d = best
    inliers = cand[np.abs(cand @ n + d) <= inlier_threshold]
    if len(inliers) >= 3 and not _is_degenerate(inliers):
        n, centroid, _ = _fit_plane_lsq(inliers)
        d = -n @ centroid
    # share of the whole cloud lying on the ground, debris included
    fraction = float(np.count_nonzero(np.abs(pts @ n + d) <= inlier_threshold)
                     / len(pts))

    debris = pts[~background]
    side = np.sign(debris @ n + d).sum() if len(debris) else 0.0
    if side < 0 or (side == 0 and _prefer_flip(n)):
        n, d = -n, -d
    return GroundPlane(tuple(n), float(d), fraction)


def _prefer_flip(n) -> bool:
    # largest-magnitude component positive; for near-level ground that is +z
    k = int(np.argmax(np.abs(n)))
    return n[k] < 0


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def _grid_extent(lo, hi, gs):
    # points within 1e-6 cells of the far edge belong to the last cell
    return max(1, math.ceil((hi - lo) / gs - 1e-6))


def _reduce_chunk(rows, cols, h, cls, ncols, ncells, n_classes):
    flat = rows * ncols + cols
    zmax = np.full(ncells, -np.inf)
    np.maximum.at(zmax, flat, h)
    votes = np.bincount(flat * n_classes + cls,
                        minlength=ncells * n_classes).reshape(ncells, n_classes)
    return zmax, votes


def resample(cloud, plane: GroundPlane, grid_size: float = DEFAULT_GRID_SIZE, *,
             min_height: float = 0.0, threads: int = 1) -> HeightGrid:
    """Project debris points into the plane frame and keep the max height per cell.

    Only non-background points with signed height >= ``min_height`` take
    part; negative heights clamp to zero. Each cell's class is the majority
    class of its points (ties to the smaller index). The grid spans the
    bounding rectangle of the participating points, or of the whole cloud
    when there are none.
    """
    if not grid_size > 0:
        raise ValueError("grid_size must be > 0")
    pts, labels = cloud.points, cloud.fused
    n_classes = max(int(cloud.n_classes), int(labels.max(initial=0)) + 1)
    stz = plane.to_plane_frame(pts)
    keep = labels > 0
    if min_height > 0:
        keep &= stz[:, 2] >= min_height
    sel = stz[keep]
    ref = sel if len(sel) else stz
    if len(ref) == 0:
        return HeightGrid((0.0, 0.0), grid_size, np.zeros((1, 1)),
                          np.zeros((1, 1)), np.zeros((1, 1)), plane)
    x0, y0 = ref[:, 0].min(), ref[:, 1].min()
    ncols = _grid_extent(x0, ref[:, 0].max(), grid_size)
    nrows = _grid_extent(y0, ref[:, 1].max(), grid_size)
    ncells = nrows * ncols
    z = np.zeros(ncells)
    classes = np.zeros(ncells, dtype=np.int64)
    counts = np.zeros(ncells, dtype=np.int64)
    if len(sel):
        cols = np.minimum(np.floor((sel[:, 0] - x0) / grid_size).astype(np.int64),
                          ncols - 1)
        rows = np.minimum(np.floor((sel[:, 1] - y0) / grid_size).astype(np.int64),
                          nrows - 1)
        h = np.maximum(sel[:, 2], 0.0)
        cls = labels[keep].astype(np.int64)
        chunks = np.array_split(np.arange(len(sel)), max(1, threads))
        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            parts = list(pool.map(
                lambda ix: _reduce_chunk(rows[ix], cols[ix], h[ix], cls[ix],
                                         ncols, ncells, n_classes), chunks))
        zmax = np.full(ncells, -np.inf)
        votes = np.zeros((ncells, n_classes), dtype=np.int64)
        for part_z, part_v in parts:
            np.maximum(zmax, part_z, out=zmax)
            votes += part_v
        counts = votes.sum(axis=1)
        filled = counts > 0
        z[filled] = zmax[filled]
        classes[filled] = votes[filled].argmax(axis=1)
    return HeightGrid((x0, y0), grid_size, z.reshape(nrows, ncols),
                      classes.reshape(nrows, ncols), counts.reshape(nrows, ncols),
                      plane)


# ---------------------------------------------------------------------------
# volumes and instances
# ---------------------------------------------------------------------------

def compute_volume(grid: HeightGrid, cells=None) -> float:
    """``GS^2 * sum(Z)`` over ``cells`` (a boolean mask or (k, 2) row/col array).

    ``cells=None`` sums over every cell of the grid.
    """
    if cells is None:
        total = grid.z.sum()
    else:
        cells = np.asarray(cells)
        if cells.dtype == bool:
            total = grid.z[cells].sum()
        else:
            cells = cells.reshape(-1, 2)
            total = grid.z[cells[:, 0], cells[:, 1]].sum()
    return float(grid.cell_size ** 2 * total)


_EIGHT = np.ones((3, 3), dtype=bool)


def cluster_instances(grid: HeightGrid,
                      min_cells: int = DEFAULT_MIN_CELLS) -> list[DebrisInstance]:
    """8-connected components of occupied cells, one class at a time.

    Components smaller than ``min_cells`` are dropped. Instances are sorted
    by descending volume (then class, then first cell) and numbered from 1.
    """
    occupied = grid.occupied
    found = []
    for cls in np.unique(grid.classes[occupied]):
        labeled, count = ndimage.label(occupied & (grid.classes == cls),
                                       structure=_EIGHT)
        for comp in range(1, count + 1):
            cells = np.argwhere(labeled == comp)
            if len(cells) < min_cells:
                continue
            found.append((int(cls), cells))

    out = []
    gs = grid.cell_size
    for cls, cells in found:
        volume = compute_volume(grid, cells)
        cx, cy = grid.cell_centers(cells[:, 0], cells[:, 1])
        out.append((volume, cls, cells, (float(cx.mean()), float(cy.mean())),
                    len(cells) * gs * gs))
    out.sort(key=lambda t: (-t[0], t[1], tuple(t[2][0])))
    return [DebrisInstance(i + 1, cls, cells, vol, centroid, area)
            for i, (vol, cls, cells, centroid, area) in enumerate(out)]


def site_volume(grid: HeightGrid) -> float:
    """Volume over every occupied cell, whether or not it made an instance."""
    return compute_volume(grid, grid.occupied)


def instance_map(grid: HeightGrid, instances: Sequence[DebrisInstance]) -> np.ndarray:
    """Raster of instance ids (0 = none)."""
    out = np.zeros(grid.shape, dtype=np.int64)
    for inst in instances:
        out[inst.cells[:, 0], inst.cells[:, 1]] = inst.instance_id
    return out
