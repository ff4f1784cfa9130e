"""Pinhole projection, per-view z-buffers and occlusion-aware label fusion.

A world point ``p`` maps to the camera frame as ``x = R @ p + T`` and to
pixel coordinates ``u = fx * x/z + cx``, ``v = fy * y/z + cy``. Pixel
centres sit on integer coordinates, so a continuous ``(u, v)`` belongs to
pixel ``(floor(u + 0.5), floor(v + 0.5))``. The depth map groups pixels
into ``D x D`` patches and keeps the nearest camera-frame depth per patch.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .scene_io import CameraPose, LabelMask, Scene

DEFAULT_DOWNSAMPLE = 4
EPS_SPACING_FACTOR = 3.0
EPS_MAX_SAMPLES = 50_000
EPS_FALLBACK = 0.01


class PixelCoord(NamedTuple):
    u: float
    v: float
    depth: float


@dataclass(frozen=True, eq=False)
class DepthMap:
    camera_id: str
    width: int
    height: int
    downsample: int
    values: np.ndarray  # (grid_h, grid_w), +inf where no point landed

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.shape != (self.grid_h, self.grid_w):
            raise ValueError(f"depth grid must be {self.grid_h}x{self.grid_w}")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def grid_w(self) -> int:
        return -(-self.width // self.downsample)

    @property
    def grid_h(self) -> int:
        return -(-self.height // self.downsample)

    def patch_of(self, u: float, v: float):
        """(row, col) of the patch holding continuous pixel (u, v)."""
        col, row = math.floor(u + 0.5), math.floor(v + 0.5)
        return row // self.downsample, col // self.downsample


@dataclass(frozen=True, eq=False)
class SemanticCloud:
    """Points with per-class vote counts and the fused class per point."""

    points: np.ndarray
    votes: np.ndarray
    fused: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        votes = np.array(self.votes, dtype=np.int64)
        fused = np.array(self.fused, dtype=np.int64).reshape(-1)
        if votes.ndim != 2 or len(votes) != len(pts) or len(fused) != len(pts):
            raise ValueError("points, votes and fused must have matching lengths")
        for a in (pts, votes, fused):
            a.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "votes", votes)
        object.__setattr__(self, "fused", fused)

    @classmethod
    def from_votes(cls, points, votes) -> "SemanticCloud":
        return cls(points, votes, fuse_votes(votes))

    @property
    def support(self) -> np.ndarray:
        return self.votes.sum(axis=1)

    @property
    def n_classes(self) -> int:
        return self.votes.shape[1]

    def __len__(self):
        return len(self.points)


def fuse_votes(votes: np.ndarray) -> np.ndarray:
    """Majority class per row.

    Ties go to the smallest index, except that background (0) never wins a
    tie against a debris class. Rows without votes are background.
    """
    votes = np.asarray(votes)
    if votes.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    top = votes.max(axis=1, keepdims=True)
    is_top = (votes == top) & (top > 0)
    debris_top = is_top[:, 1:]
    fused = np.where(debris_top.any(axis=1), debris_top.argmax(axis=1) + 1, 0)
    return fused.astype(np.int64)


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

def project_point(point, cam: CameraPose) -> Optional[PixelCoord]:
    """Project one world point. Returns ``None`` when it is behind the camera."""
    u, v, z = project_points(np.asarray(point, dtype=np.float64).reshape(1, 3), cam)
    if not z[0] > 0:
        return None
    return PixelCoord(float(u[0]), float(v[0]), float(z[0]))


def _to_camera(pts: np.ndarray, cam: CameraPose) -> np.ndarray:
    # elementwise rather than BLAS so every point gets the same bits whatever
    # the batch size
    R, T = cam.R, cam.T
    return (pts[:, 0:1] * R[:, 0] + pts[:, 1:2] * R[:, 1]
            + pts[:, 2:3] * R[:, 2] + T)


def project_points(points: np.ndarray, cam: CameraPose):
    """Vectorised projection: returns (u, v, depth); u, v are NaN behind the camera."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    xc = _to_camera(pts, cam)
    z = xc[:, 2]
    front = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(front, cam.fx * xc[:, 0] / z + cam.cx, np.nan)
        v = np.where(front, cam.fy * xc[:, 1] / z + cam.cy, np.nan)
    return u, v, z


def _pixels(points, cam: CameraPose):
    """Return (inside mask, row, col, depth) with row/col valid where inside."""
    u, v, z = project_points(points, cam)
    fu, fv = np.floor(u + 0.5), np.floor(v + 0.5)
    with np.errstate(invalid="ignore"):
        inside = (fu >= 0) & (fu < cam.width) & (fv >= 0) & (fv < cam.height)
    col = np.zeros(len(z), dtype=np.int64)
    row = np.zeros(len(z), dtype=np.int64)
    col[inside] = fu[inside]
    row[inside] = fv[inside]
    return inside, row, col, z


def build_depth_map(points: np.ndarray, cam: CameraPose,
                    downsample: int = DEFAULT_DOWNSAMPLE) -> DepthMap:
    """Minimum camera-frame depth per ``downsample``-pixel patch."""
    if downsample < 1:
        raise ValueError("downsample must be >= 1")
    gw = -(-cam.width // downsample)
    gh = -(-cam.height // downsample)
    values = np.full(gh * gw, np.inf)
    inside, row, col, z = _pixels(points, cam)
    if inside.any():
        flat = (row[inside] // downsample) * gw + col[inside] // downsample
        np.minimum.at(values, flat, z[inside])
    return DepthMap(cam.camera_id, cam.width, cam.height, downsample,
                    values.reshape(gh, gw))


def build_depth_maps(points, cameras: Sequence[CameraPose],
                     downsample: int = DEFAULT_DOWNSAMPLE,
                     threads: int = 1) -> dict:
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        maps = list(pool.map(lambda c: build_depth_map(points, c, downsample),
                             cameras))
    return {m.camera_id: m for m in maps}


def visible_mask(points, cam: CameraPose, dmap: DepthMap, eps: float) -> np.ndarray:
    inside, row, col, z = _pixels(points, cam)
    d = dmap.downsample
    ref = dmap.values[row // d, col // d]
    return inside & (z <= ref + eps)


def is_visible(point, cam: CameraPose, dmap: DepthMap, eps: float) -> bool:
    """True when the point is in front, inside the image and not occluded.

    Patches with no depth sample hold +inf, so any point landing there counts
    as visible.
    """
    if not eps > 0:
        raise ValueError("eps must be > 0")
    return bool(visible_mask(np.asarray(point).reshape(1, 3), cam, dmap, eps)[0])


def camera_votes(points, cam: CameraPose, mask: LabelMask,
                 dmap: Optional[DepthMap], eps: float):
    """Indices of points that receive a vote from this view, and the voted class.

    With ``dmap=None`` the occlusion test is skipped (naive projection).
    """
    inside, row, col, z = _pixels(points, cam)
    ok = inside
    if dmap is not None:
        d = dmap.downsample
        ok = inside & (z <= dmap.values[row // d, col // d] + eps)
    idx = np.flatnonzero(ok)
    return idx, mask.labels[row[idx], col[idx]].astype(np.int64)


def default_eps(points: np.ndarray, max_samples: int = EPS_MAX_SAMPLES) -> float:
    """3x the median nearest-neighbour spacing, estimated on a strided subsample."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 2:
        return EPS_FALLBACK
    stride = max(1, -(-len(pts) // max_samples))
    sample = pts[::stride]
    dist, _ = cKDTree(pts).query(sample, k=2)
    nn = dist[:, 1]
    nn = nn[nn > 0]
    if nn.size == 0:
        return EPS_FALLBACK
    return float(EPS_SPACING_FACTOR * np.median(nn))


def project_labels(scene: Scene, masks: Optional[Mapping[str, LabelMask]] = None,
                   dmaps: Optional[Mapping[str, DepthMap]] = None,
                   eps: Optional[float] = None, *, threads: int = 1,
                   cameras: Optional[Sequence[CameraPose]] = None) -> SemanticCloud:
    """Accumulate one vote per (visible point, camera) and fuse.

    ``dmaps=None`` disables the occlusion test. ``cameras`` restricts the
    views used (default: all scene cameras).
    """
    masks = scene.masks if masks is None else masks
    cameras = scene.cameras if cameras is None else tuple(cameras)
    points = scene.points
    n, c = len(points), scene.n_classes
    if dmaps is not None and eps is None:
        eps = default_eps(points)
    if eps is not None and not eps > 0:
        raise ValueError("eps must be > 0")

    def one(cam):
        dm = None if dmaps is None else dmaps[cam.camera_id]
        idx, cls = camera_votes(points, cam, masks[cam.camera_id], dm, eps)
        return idx * c + cls

    votes = np.zeros(n * c, dtype=np.int64)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        pending = []
        for flat in pool.map(one, cameras):
            pending.append(flat)
            if sum(len(p) for p in pending) > 4 * n:
                votes += np.bincount(np.concatenate(pending), minlength=n * c)
                pending = []
        if pending:
            votes += np.bincount(np.concatenate(pending), minlength=n * c)
    return SemanticCloud.from_votes(points, votes.reshape(n, c))
