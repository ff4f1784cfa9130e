"""Deterministic synthetic jobsites with known debris volumes.

A scene is a flat ground at z = 0 plus parametric primitives (axis-aligned
boxes, thin sheets, vertical cylinders, hemispherical domes). Surfaces are
sampled with stratified jitter; label masks are rendered by casting one ray
per pixel centre against the analytic primitives, which shares no code with
the point-projection path it is used to check.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import tomli

from .config import DEFAULT_CLASSES, PipelineConfig, format_config
from .errors import InvalidSpec, MalformedFile
from .scene_io import (CameraPose, LabelMask, Scene, ensure_dir, write_cameras,
                       write_json, write_mask, write_point_cloud)

_INF = np.inf


def _stratified_rect(rng, origin, a, b, density):
    """Jittered samples on the parallelogram origin + s*a + t*b, s,t in [0,1)."""
    la, lb = np.linalg.norm(a), np.linalg.norm(b)
    step = 1.0 / math.sqrt(density)
    na = max(1, int(round(la / step)))
    nb = max(1, int(round(lb / step)))
    i, j = np.meshgrid(np.arange(na), np.arange(nb), indexing="ij")
    s = (i.ravel() + rng.random(na * nb)) / na
    t = (j.ravel() + rng.random(na * nb)) / nb
    return np.asarray(origin) + s[:, None] * np.asarray(a) + t[:, None] * np.asarray(b)


def _stratified_disk(rng, center, radius, z, density):
    sq = _stratified_rect(rng, (center[0] - radius, center[1] - radius, z),
                          (2 * radius, 0, 0), (0, 2 * radius, 0), density)
    inside = np.hypot(sq[:, 0] - center[0], sq[:, 1] - center[1]) < radius
    return sq[inside]


@dataclass(frozen=True)
class Box:
    class_index: int
    min_corner: tuple
    size: tuple

    def validate(self):
        if len(self.min_corner) != 3 or len(self.size) != 3:
            raise InvalidSpec("box needs a 3-D min corner and size")
        if any(not s > 0 for s in self.size):
            raise InvalidSpec("box dimensions must be > 0")
        if self.min_corner[2] < 0:
            raise InvalidSpec("primitives must not extend below the ground")

    @property
    def lo(self):
        return np.asarray(self.min_corner, dtype=np.float64)

    @property
    def hi(self):
        return self.lo + np.asarray(self.size, dtype=np.float64)

    def volume(self) -> float:
        sx, sy, sz = self.size
        return float(sx * sy * sz)

    def sample(self, rng, density):
        lo, hi = self.lo, self.hi
        sx, sy, sz = hi - lo
        ex, ey, ez = np.array([sx, 0, 0]), np.array([0, sy, 0]), np.array([0, 0, sz])
        faces = [
            ((lo[0], lo[1], hi[2]), ex, ey),  # top
            (lo, ex, ez), ((lo[0], hi[1], lo[2]), ex, ez),  # -y, +y
            (lo, ey, ez), ((hi[0], lo[1], lo[2]), ey, ez),  # -x, +x
        ]
        if lo[2] > 0:
            faces.append((lo, ex, ey))
        return np.vstack([_stratified_rect(rng, o, a, b, density) for o, a, b in faces])

    def contains(self, pts):
        return np.all((pts > self.lo) & (pts < self.hi), axis=1)

    def bounds(self):
        return self.lo, self.hi

    def footprint(self, xy):
        lo, hi = self.lo, self.hi
        return ((xy[:, 0] >= lo[0]) & (xy[:, 0] <= hi[0])
                & (xy[:, 1] >= lo[1]) & (xy[:, 1] <= hi[1]))

    def intersect(self, origin, dirs):
        lo, hi = self.lo, self.hi
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t1 = (lo - origin) * inv
            t2 = (hi - origin) * inv
        tmin = np.nanmax(np.minimum(t1, t2), axis=1)
        tmax = np.nanmin(np.maximum(t1, t2), axis=1)
        hit = (tmax >= tmin) & (tmax > 0)
        t = np.where(tmin > 0, tmin, tmax)
        return np.where(hit, t, _INF)


def Sheet(class_index, min_corner, size, thickness=0.02):
    """A flat panel lying on or above the ground (plywood, metal plate)."""
    x, y, z = min_corner
    return Box(class_index, (x, y, z), (size[0], size[1], thickness))


@dataclass(frozen=True)
class Cylinder:
    class_index: int
    center: tuple
    radius: float
    height: float
    z0: float = 0.0

    def validate(self):
        if not (self.radius > 0 and self.height > 0):
            raise InvalidSpec("cylinder radius and height must be > 0")
        if self.z0 < 0:
            raise InvalidSpec("primitives must not extend below the ground")

    def volume(self) -> float:
        return float(math.pi * self.radius ** 2 * self.height)

    def sample(self, rng, density):
        r, h, z0 = self.radius, self.height, self.z0
        side = _stratified_rect(rng, (0, z0, 0), (2 * math.pi * r, 0, 0),
                                (0, h, 0), density)
        theta = side[:, 0] / r
        lateral = np.column_stack([self.center[0] + r * np.cos(theta),
                                   self.center[1] + r * np.sin(theta), side[:, 1]])
        parts = [lateral, _stratified_disk(rng, self.center, r, z0 + h, density)]
        if z0 > 0:
            parts.append(_stratified_disk(rng, self.center, r, z0, density))
        return np.vstack(parts)

    def contains(self, pts):
        rr = np.hypot(pts[:, 0] - self.center[0], pts[:, 1] - self.center[1])
        return (rr < self.radius) & (pts[:, 2] > self.z0) \
            & (pts[:, 2] < self.z0 + self.height)

    def footprint(self, xy):
        return np.hypot(xy[:, 0] - self.center[0], xy[:, 1] - self.center[1]) \
            <= self.radius

    def bounds(self):
        cx, cy = self.center
        r = self.radius
        return (np.array([cx - r, cy - r, self.z0]),
                np.array([cx + r, cy + r, self.z0 + self.height]))

    def intersect(self, origin, dirs):
        ox, oy = origin[0] - self.center[0], origin[1] - self.center[1]
        dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
        a = dx * dx + dy * dy
        b = 2 * (ox * dx + oy * dy)
        c = ox * ox + oy * oy - self.radius ** 2
        disc = b * b - 4 * a * c
        best = np.full(len(dirs), _INF)
        with np.errstate(divide="ignore", invalid="ignore"):
            sq = np.sqrt(np.maximum(disc, 0))
            for t in ((-b - sq) / (2 * a), (-b + sq) / (2 * a)):
                z = origin[2] + t * dz
                ok = (disc >= 0) & (a > 0) & (t > 0) & (z >= self.z0) \
                    & (z <= self.z0 + self.height)
                best = np.where(ok & (t < best), t, best)
            for zc in (self.z0, self.z0 + self.height):
                t = (zc - origin[2]) / dz
                px, py = ox + t * dx, oy + t * dy
                ok = (t > 0) & (px * px + py * py <= self.radius ** 2)
                best = np.where(ok & (t < best), t, best)
        return best


@dataclass(frozen=True)
class Dome:
    """Upper hemisphere of ``radius`` resting on z = z0."""

    class_index: int
    center: tuple
    radius: float
    z0: float = 0.0

    def validate(self):
        if not self.radius > 0:
            raise InvalidSpec("dome radius must be > 0")
        if self.z0 < 0:
            raise InvalidSpec("primitives must not extend below the ground")

    def volume(self) -> float:
        return float(2.0 / 3.0 * math.pi * self.radius ** 3)

    def sample(self, rng, density):
        r = self.radius
        # equal-area: height is uniform on a sphere's zone
        rect = _stratified_rect(rng, (0, 0, 0), (2 * math.pi * r, 0, 0),
                                (0, r, 0), density)
        theta = rect[:, 0] / r
        z = rect[:, 1]
        rho = np.sqrt(np.maximum(r * r - z * z, 0))
        return np.column_stack([self.center[0] + rho * np.cos(theta),
                                self.center[1] + rho * np.sin(theta),
                                self.z0 + z])

    def contains(self, pts):
        d = pts - np.array([self.center[0], self.center[1], self.z0])
        return (np.einsum("ij,ij->i", d, d) < self.radius ** 2) & (d[:, 2] > 0)

    def footprint(self, xy):
        return np.hypot(xy[:, 0] - self.center[0], xy[:, 1] - self.center[1]) \
            <= self.radius

    def bounds(self):
        cx, cy = self.center
        r = self.radius
        return (np.array([cx - r, cy - r, self.z0]),
                np.array([cx + r, cy + r, self.z0 + r]))

    def intersect(self, origin, dirs):
        oc = origin - np.array([self.center[0], self.center[1], self.z0])
        a = np.einsum("ij,ij->i", dirs, dirs)
        b = 2 * dirs @ oc
        c = oc @ oc - self.radius ** 2
        disc = b * b - 4 * a * c
        best = np.full(len(dirs), _INF)
        with np.errstate(divide="ignore", invalid="ignore"):
            sq = np.sqrt(np.maximum(disc, 0))
            for t in ((-b - sq) / (2 * a), (-b + sq) / (2 * a)):
                z = oc[2] + t * dirs[:, 2]
                ok = (disc >= 0) & (t > 0) & (z >= 0)
                best = np.where(ok & (t < best), t, best)
            t = -oc[2] / dirs[:, 2]
            px, py = oc[0] + t * dirs[:, 0], oc[1] + t * dirs[:, 1]
            ok = (t > 0) & (px * px + py * py <= self.radius ** 2)
            best = np.where(ok & (t < best), t, best)
        return best


@dataclass(frozen=True)
class CameraRing:
    count: int
    radius: float
    height: float
    look_at: tuple = (0.0, 0.0, 0.0)
    start_deg: float = 0.0
    step_deg: Optional[float] = None
    width: int = 640
    height_px: int = 480
    focal: float = 500.0

    def validate(self):
        if self.count < 1:
            raise InvalidSpec("camera ring needs count >= 1")
        if self.radius < 0 or self.width < 1 or self.height_px < 1 \
                or not self.focal > 0:
            raise InvalidSpec("bad camera ring geometry")

    def centers(self):
        step = 360.0 / self.count if self.step_deg is None else self.step_deg
        ang = np.radians(self.start_deg + step * np.arange(self.count))
        lx, ly, _ = self.look_at
        return np.column_stack([lx + self.radius * np.cos(ang),
                                ly + self.radius * np.sin(ang),
                                np.full(self.count, float(self.height))])


def look_at_rotation(center, target):
    """World-to-camera rotation for a camera at ``center`` facing ``target``
    (camera +z forward, +y pointing down the image)."""
    f = np.asarray(target, dtype=np.float64) - np.asarray(center, dtype=np.float64)
    norm = np.linalg.norm(f)
    if norm == 0:
        raise InvalidSpec("camera centre coincides with its look-at point")
    f /= norm
    up = np.array([0.0, 0.0, 1.0])
    if abs(f @ up) > 1 - 1e-9:
        up = np.array([0.0, 1.0, 0.0])
    x = np.cross(f, up)
    x /= np.linalg.norm(x)
    y = np.cross(f, x)
    return np.vstack([x, y, f])


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    ground_extent: tuple  # (xmin, xmax, ymin, ymax)
    primitives: tuple = ()
    density: float = 4000.0
    rings: tuple = ()
    ground_density: Optional[float] = None
    jitter_sigma: float = 0.0
    class_table: tuple = DEFAULT_CLASSES

    def validate(self):
        if len(self.ground_extent) != 4:
            raise InvalidSpec("ground_extent is (xmin, xmax, ymin, ymax)")
        x0, x1, y0, y1 = self.ground_extent
        if not (x1 > x0 and y1 > y0):
            raise InvalidSpec("ground extent is empty")
        if not self.density > 0 or (self.ground_density is not None
                                    and not self.ground_density > 0):
            raise InvalidSpec("sampling density must be > 0")
        if self.jitter_sigma < 0:
            raise InvalidSpec("jitter_sigma must be >= 0")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise InvalidSpec("seed must be a non-negative integer")
        for p in self.primitives:
            p.validate()
            if not 0 < p.class_index < len(self.class_table):
                raise InvalidSpec(f"primitive class {p.class_index} is not a "
                                  "debris class")
        for ring in self.rings:
            ring.validate()


@dataclass(frozen=True, eq=False)
class GroundTruth:
    point_class: np.ndarray
    point_primitive: np.ndarray  # -1 for ground
    volumes: tuple
    classes: tuple


@dataclass(frozen=True, eq=False)
class SynthScene:
    scene: Scene
    truth: GroundTruth
    spec: SceneSpec

    @property
    def masks(self):
        return self.scene.masks


def make_cameras(rings: Sequence[CameraRing]):
    cams = []
    for ring in rings:
        for c in ring.centers():
            R = look_at_rotation(c, ring.look_at)
            T = -R @ c
            cid = f"cam{len(cams):03d}"
            cams.append(CameraPose.from_intrinsics(
                cid, ring.width, ring.height_px, ring.focal, ring.focal,
                (ring.width - 1) / 2.0, (ring.height_px - 1) / 2.0, R, T,
                f"{cid}.png"))
    return cams


def render_mask(cam: CameraPose, primitives, ground_extent=None,
                rows_per_chunk: int = 64) -> np.ndarray:
    """Class of the first surface hit by each pixel-centre ray (0 = ground/sky)."""
    origin = cam.center
    out = np.zeros((cam.height, cam.width), dtype=np.uint8)
    if not primitives:
        return out
    spheres = []
    for p in primitives:
        lo, hi = p.bounds()
        spheres.append(((lo + hi) / 2, float(np.linalg.norm(hi - lo)) / 2))
    us = (np.arange(cam.width) - cam.cx) / cam.fx
    for r0 in range(0, cam.height, rows_per_chunk):
        rows = np.arange(r0, min(r0 + rows_per_chunk, cam.height))
        vs = (rows - cam.cy) / cam.fy
        dc = np.stack(np.broadcast_arrays(us[None, :], vs[:, None], 1.0), axis=-1)
        dirs = dc.reshape(-1, 3) @ cam.R  # == R.T @ d for each row
        with np.errstate(divide="ignore", invalid="ignore"):
            t_ground = np.where(dirs[:, 2] < 0, -origin[2] / dirs[:, 2], _INF)
        best_t = t_ground
        best_c = np.zeros(len(dirs), dtype=np.uint8)
        unit = dirs / np.linalg.norm(dirs, axis=1)[:, None]
        for p, (centre, radius) in zip(primitives, spheres):
            # only rays passing within the bounding sphere can hit p
            v = centre - origin
            dist = float(np.linalg.norm(v))
            if dist <= radius:
                cand = np.ones(len(dirs), dtype=bool)
            else:
                cos_lim = math.sqrt(1.0 - (radius / dist) ** 2) - 1e-9
                cand = unit @ (v / dist) >= cos_lim
            if not cand.any():
                continue
            t = np.full(len(dirs), _INF)
            t[cand] = p.intersect(origin, dirs[cand])
            closer = t < best_t
            best_t = np.where(closer, t, best_t)
            best_c = np.where(closer, p.class_index, best_c)
        out[rows[0]:rows[-1] + 1] = best_c.reshape(len(rows), cam.width)
    return out


def generate(spec: SceneSpec, render_masks: bool = True) -> SynthScene:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    prims = tuple(spec.primitives)

    chunks, owners = [], []
    for k, p in enumerate(prims):
        pts = p.sample(rng, spec.density)
        others = np.zeros(len(pts), dtype=bool)
        for j, q in enumerate(prims):
            if j != k:
                others |= q.contains(pts)
        pts = pts[~others]
        chunks.append(pts)
        owners.append(np.full(len(pts), k))

    x0, x1, y0, y1 = spec.ground_extent
    gd = spec.ground_density or spec.density
    ground = _stratified_rect(rng, (x0, y0, 0.0), (x1 - x0, 0, 0), (0, y1 - y0, 0), gd)
    covered = np.zeros(len(ground), dtype=bool)
    for p in prims:
        if getattr(p, "z0", None) == 0 or (isinstance(p, Box) and p.min_corner[2] == 0):
            covered |= p.footprint(ground[:, :2])
    ground = ground[~covered]

    points = np.vstack([ground] + chunks) if chunks else ground
    primitive = np.concatenate([np.full(len(ground), -1)] + owners) \
        if owners else np.full(len(ground), -1)
    if spec.jitter_sigma > 0:
        points = points + rng.normal(0.0, spec.jitter_sigma, points.shape)
    classes = np.array([p.class_index for p in prims] + [0], dtype=np.int64)
    point_class = classes[primitive]  # -1 indexes the trailing ground entry

    cameras = make_cameras(spec.rings)
    masks = {}
    if render_masks:
        masks = {c.camera_id: LabelMask(render_mask(c, prims)) for c in cameras}
    scene = Scene(cameras, points, spec.class_table, None, masks)
    truth = GroundTruth(point_class, primitive,
                        tuple(p.volume() for p in prims),
                        tuple(p.class_index for p in prims))
    return SynthScene(scene, truth, spec)


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def write_fixture(synth: SynthScene, outdir, config: Optional[PipelineConfig] = None):
    """Write cameras.txt, cloud.ply, masks/, config.toml and truth.json."""
    outdir = ensure_dir(outdir)
    scene = synth.scene
    write_cameras(scene.cameras, outdir / "cameras.txt")
    write_point_cloud(outdir / "cloud.ply", scene.points)
    ensure_dir(outdir / "masks")
    for cam in scene.cameras:
        write_mask(scene.masks[cam.camera_id], outdir / "masks" / cam.mask_path)
    cfg = config or PipelineConfig(class_table=scene.class_table)
    cfg = replace(cfg, cameras=outdir / "cameras.txt", cloud=outdir / "cloud.ply",
                  masks=outdir / "masks", outdir=outdir / "out",
                  class_table=scene.class_table)
    (outdir / "config.toml").write_text(format_config(cfg, base_dir=outdir))
    truth = synth.truth
    write_json({"seed": synth.spec.seed,
                "primitives": [{"index": i, "class": c, "volume_m3": v}
                               for i, (c, v) in enumerate(zip(truth.classes,
                                                              truth.volumes))],
                "n_points": int(len(scene.points))}, outdir / "truth.json")
    np.save(outdir / "truth_labels.npy", truth.point_class)
    return outdir / "config.toml"


_PRIMITIVE_KEYS = {
    "box": {"class", "min", "size"},
    "sheet": {"class", "min", "size", "thickness"},
    "cylinder": {"class", "center", "radius", "height", "z0"},
    "dome": {"class", "center", "radius", "z0"},
}
_RING_KEYS = {"count", "radius", "height", "look_at", "start_deg", "step_deg",
              "width", "height_px", "focal"}
_TOP_KEYS = {"seed", "density", "ground_density", "ground_extent", "jitter_sigma",
             "classes", "ring"} | set(_PRIMITIVE_KEYS)


def parse_scene_spec(text: str) -> SceneSpec:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise InvalidSpec(f"scene spec is not valid TOML: {exc}") from None
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise InvalidSpec(f"unknown scene spec keys: {sorted(unknown)}")
    table = tuple(raw.get("classes", DEFAULT_CLASSES))

    def cls_index(v):
        if isinstance(v, str):
            if v not in table:
                raise InvalidSpec(f"unknown class {v!r}")
            return table.index(v)
        return int(v)

    prims = []
    try:
        for kind, keys in _PRIMITIVE_KEYS.items():
            for item in raw.get(kind, []):
                extra = set(item) - keys
                if extra:
                    raise InvalidSpec(f"unknown {kind} keys: {sorted(extra)}")
                c = cls_index(item["class"])
                if kind == "box":
                    prims.append(Box(c, tuple(item["min"]), tuple(item["size"])))
                elif kind == "sheet":
                    prims.append(Sheet(c, tuple(item["min"]), tuple(item["size"]),
                                       item.get("thickness", 0.02)))
                elif kind == "cylinder":
                    prims.append(Cylinder(c, tuple(item["center"]), item["radius"],
                                          item["height"], item.get("z0", 0.0)))
                else:
                    prims.append(Dome(c, tuple(item["center"]), item["radius"],
                                      item.get("z0", 0.0)))
        rings = []
        for item in raw.get("ring", []):
            extra = set(item) - _RING_KEYS
            if extra:
                raise InvalidSpec(f"unknown ring keys: {sorted(extra)}")
            item = dict(item)
            if "look_at" in item:
                item["look_at"] = tuple(item["look_at"])
            rings.append(CameraRing(**item))
        spec = SceneSpec(seed=raw.get("seed", 0),
                         ground_extent=tuple(raw["ground_extent"]),
                         primitives=tuple(prims),
                         density=float(raw.get("density", 4000.0)),
                         rings=tuple(rings),
                         ground_density=raw.get("ground_density"),
                         jitter_sigma=float(raw.get("jitter_sigma", 0.0)),
                         class_table=table)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidSpec(f"bad scene spec: {exc!r}") from None
    spec.validate()
    return spec


def load_scene_spec(path) -> SceneSpec:
    try:
        text = Path(path).read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise MalformedFile(f"cannot read scene spec: {exc}", path=path) from None
    return parse_scene_spec(text)


# ---------------------------------------------------------------------------
# stock fixtures
# ---------------------------------------------------------------------------

PLYWOOD = DEFAULT_CLASSES.index("plywood")
METAL_GIRDER = DEFAULT_CLASSES.index("metal_girder")
METAL_PIPING = DEFAULT_CLASSES.index("metal_piping")
PVC = DEFAULT_CLASSES.index("pvc_piping")
TOILET = DEFAULT_CLASSES.index("portable_toilet")


def orbit(count=8, radius=6.0, height=5.0, look_at=(0.0, 0.0, 0.5), **kw):
    return CameraRing(count, radius, height, tuple(look_at), **kw)


def unit_box_spec(seed=0, density=4000.0, offset=(0.0, 0.0), cls=PLYWOOD):
    """One 1 m^3 box on a 6 x 6 m floor, eight orbit views plus a nadir view."""
    ox, oy = offset
    return SceneSpec(
        seed=seed, ground_extent=(ox - 3, ox + 3, oy - 3, oy + 3),
        primitives=(Box(cls, (ox - 0.5, oy - 0.5, 0.0), (1.0, 1.0, 1.0)),),
        density=density, ground_density=1000.0,
        rings=(orbit(8, 5.0, 4.0, (ox, oy, 0.5), width=800, height_px=600,
                     focal=700.0),
               orbit(1, 0.0, 5.0, (ox, oy, 0.0), width=800, height_px=600,
                     focal=700.0)))


def hemisphere_spec(seed=0, density=150_000.0, radius=0.5, cls=TOILET):
    return SceneSpec(
        seed=seed, ground_extent=(-1.0, 1.0, -1.0, 1.0),
        primitives=(Dome(cls, (0.0, 0.0), radius),),
        density=density, ground_density=5000.0,
        rings=(orbit(8, 2.5, 2.0, (0.0, 0.0, 0.2), width=1280, height_px=960,
                     focal=1100.0),
               orbit(1, 0.0, 2.5, (0.0, 0.0, 0.0), width=1280, height_px=960,
                     focal=1100.0)))


def occlusion_spec(seed=0, density=4000.0):
    """Box A (a tall wall) hides box B from the low cameras 0-3; the high
    cameras 4-6 look down on B past the wall.

    A carries the smaller class index, so a naive tie would favour A.
    """
    wall = Box(METAL_GIRDER, (1.5, -3.0, 0.0), (0.6, 6.0, 2.5))
    target = Box(METAL_PIPING, (-0.5, -0.5, 0.0), (1.0, 1.0, 1.0))
    low = orbit(4, 8.0, 1.5, (0.0, 0.0, 0.5), start_deg=-30.0, step_deg=20.0)
    high = orbit(3, 4.0, 12.0, (0.0, 0.0, 0.5), start_deg=120.0, step_deg=60.0)
    return SceneSpec(seed=seed, ground_extent=(-4.0, 4.0, -4.0, 4.0),
                     primitives=(wall, target), density=density,
                     ground_density=1000.0, rings=(low, high))


def random_spec(seed, n_primitives=4, density=1500.0):
    """Random non-overlapping boxes, cylinders and sheets of mixed classes."""
    rng = np.random.default_rng(10_000 + seed)
    prims = []
    slots = rng.permutation(16)[:n_primitives]
    for slot in slots:
        gx, gy = divmod(int(slot), 4)
        # random offset within the slot so faces do not sit on a lattice
        x = -4.0 + 2.0 * gx + rng.uniform(0.2, 0.4)
        y = -4.0 + 2.0 * gy + rng.uniform(0.2, 0.4)
        cls = int(rng.integers(1, len(DEFAULT_CLASSES)))
        kind = int(rng.integers(0, 3))
        if kind == 0:
            size = tuple(float(v) for v in rng.uniform(0.3, 1.3, 3))
            prims.append(Box(cls, (x, y, 0.0), size))
        elif kind == 1:
            r = float(rng.uniform(0.15, 0.6))
            prims.append(Cylinder(cls, (x + r, y + r), r, float(rng.uniform(0.3, 1.5))))
        else:
            prims.append(Sheet(cls, (x, y, 0.0),
                               tuple(float(v) for v in rng.uniform(0.5, 1.3, 2)),
                               float(rng.uniform(0.02, 0.08))))
    return SceneSpec(seed=seed, ground_extent=(-4.5, 4.5, -4.5, 4.5),
                     primitives=tuple(prims), density=density,
                     ground_density=300.0,
                     rings=(orbit(6, 9.0, 7.0, (0.0, 0.0, 0.0)),
                            orbit(1, 0.0, 10.0, (0.0, 0.0, 0.0))))


def performance_spec(seed=0, density=8600.0, n_cameras=180, width=1280,
                     height=960):
    """Site-scale fixture of just over 800k points seen by three camera rings."""
    base = random_spec(seed, n_primitives=10, density=density)
    per_ring = n_cameras // 3
    rings = []
    for k, (radius, z) in enumerate(((14.0, 8.0), (11.0, 14.0), (7.0, 22.0))):
        count = per_ring + (1 if k < n_cameras % 3 else 0)
        rings.append(CameraRing(count, radius, z, start_deg=2.0 * k,
                                width=width, height_px=height, focal=1100.0))
    return replace(base, ground_density=density, rings=tuple(rings))
