"""Reading and writing everything the pipeline touches on disk.

Inputs: the camera file, PLY point clouds, 8-bit label masks (PNG or PGM)
and the TOML config. Outputs: labeled PLY clouds, binary and 16-bit PNG
depth maps, ESRI ASCII height/class grids, instance CSVs, risk grids.

Every parser either returns a validated object or raises one of the
structured errors in :mod:`debris_twin.errors` with a line number or byte
offset. Arbitrary bytes must never escape as a bare Python exception.
"""

from __future__ import annotations

import io
import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, Optional, Sequence

import numpy as np
from PIL import Image

from .config import PipelineConfig, load_config
from .errors import (DimensionMismatch, IoError, MalformedFile,
                     NonOrthonormalRotation, UnknownClassIndex)

ROTATION_TOL = 1e-6
MAX_IMAGE_PIXELS = 1 << 28
MAX_HEADER_BYTES = 1 << 16

# Class colormap for labeled clouds: background grey, then tab10.
CLASS_COLORS = np.array([
    (128, 128, 128), (31, 119, 180), (255, 127, 14), (44, 160, 44),
    (214, 39, 40), (148, 103, 189), (140, 86, 75), (227, 119, 194),
    (127, 127, 127), (188, 189, 34), (23, 190, 207),
], dtype=np.uint8)


def class_colors(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    palette = CLASS_COLORS
    idx = np.where(labels == 0, 0, (labels - 1) % (len(palette) - 1) + 1)
    return palette[idx]


def _frozen(a, dtype=None):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CameraPose:
    """One calibrated view. ``R``/``T`` map world to camera: x_cam = R @ p + T.

    Camera frame: +z looks forward, +x right, +y down (pixel v grows down).
    """

    camera_id: str
    width: int
    height: int
    K: np.ndarray
    R: np.ndarray
    T: np.ndarray
    mask_path: str = ""

    def __post_init__(self):
        if not self.camera_id or any(c.isspace() for c in self.camera_id):
            raise ValueError("camera id must be a non-empty token")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image width and height must be positive")
        if self.width * self.height > MAX_IMAGE_PIXELS:
            raise ValueError("image is too large")
        K = np.asarray(self.K, dtype=np.float64)
        R = np.asarray(self.R, dtype=np.float64)
        T = np.asarray(self.T, dtype=np.float64).reshape(-1)
        if K.shape != (3, 3) or R.shape != (3, 3) or T.shape != (3,):
            raise ValueError("K and R must be 3x3, T a 3-vector")
        if not (np.all(np.isfinite(K)) and np.all(np.isfinite(R))
                and np.all(np.isfinite(T))):
            raise ValueError("camera parameters must be finite")
        if K[0, 1] != 0 or K[1, 0] != 0 or K[2, 0] != 0 or K[2, 1] != 0 \
                or K[2, 2] != 1:
            raise ValueError("K must be a zero-skew pinhole matrix")
        fx, fy, cx, cy = K[0, 0], K[1, 1], K[0, 2], K[1, 2]
        if not (fx > 0 and fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= cx < self.width and 0 <= cy < self.height):
            raise ValueError("principal point must lie inside the image")
        with np.errstate(over="ignore", invalid="ignore"):  # huge entries fail below
            drift = np.max(np.abs(R.T @ R - np.eye(3)))
            det = np.linalg.det(R)
        if not (drift <= ROTATION_TOL and abs(det - 1.0) <= ROTATION_TOL):
            raise NonOrthonormalRotation(
                f"camera {self.camera_id}: R is not a proper rotation "
                f"(det={det:.6g})")
        object.__setattr__(self, "K", _frozen(K))
        object.__setattr__(self, "R", _frozen(R))
        object.__setattr__(self, "T", _frozen(T))

    @classmethod
    def from_intrinsics(cls, camera_id, width, height, fx, fy, cx, cy, R, T,
                        mask_path=""):
        K = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
        return cls(camera_id, int(width), int(height), K, R, T, mask_path)

    @property
    def fx(self):
        return float(self.K[0, 0])

    @property
    def fy(self):
        return float(self.K[1, 1])

    @property
    def cx(self):
        return float(self.K[0, 2])

    @property
    def cy(self):
        return float(self.K[1, 2])

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return -self.R.T @ self.T


@dataclass(frozen=True, eq=False)
class LabelMask:
    """Per-pixel class indices, shape (height, width), row-major."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ValueError("label mask must be 2-D")
        object.__setattr__(self, "labels", _frozen(labels, np.uint8))

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True, eq=False)
class Scene:
    cameras: tuple
    points: np.ndarray
    class_table: tuple
    colors: Optional[np.ndarray] = None
    masks: Mapping[str, LabelMask] = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "points", _frozen(pts))
        if self.colors is not None:
            object.__setattr__(self, "colors",
                               _frozen(np.asarray(self.colors).reshape(-1, 3),
                                       np.uint8))
        object.__setattr__(self, "cameras", tuple(self.cameras))
        object.__setattr__(self, "class_table", tuple(self.class_table))
        ids = [c.camera_id for c in self.cameras]
        if len(set(ids)) != len(ids):
            raise ValueError("camera ids must be unique")
        by_id = {c.camera_id: c for c in self.cameras}
        n_classes = len(self.class_table)
        for cid, mask in self.masks.items():
            if cid not in by_id:
                raise ValueError(f"mask for unknown camera {cid!r}")
            cam = by_id[cid]
            if (mask.width, mask.height) != (cam.width, cam.height):
                raise DimensionMismatch(
                    f"mask is {mask.width}x{mask.height} but camera {cid} "
                    f"is {cam.width}x{cam.height}", camera=cid)
            top = int(mask.labels.max(initial=0))
            if top >= n_classes:
                raise UnknownClassIndex(
                    f"mask for camera {cid} contains class {top} but only "
                    f"{n_classes} classes are configured", camera=cid, value=top)
        object.__setattr__(self, "masks", MappingProxyType(dict(self.masks)))

    @property
    def n_classes(self) -> int:
        return len(self.class_table)

    def camera(self, camera_id: str) -> CameraPose:
        for cam in self.cameras:
            if cam.camera_id == camera_id:
                return cam
        raise KeyError(camera_id)


# ---------------------------------------------------------------------------
# camera file
# ---------------------------------------------------------------------------

CAMERA_FIELDS = 20


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except FileNotFoundError:
        raise MalformedFile("file not found", path=path) from None
    except OSError as exc:
        raise MalformedFile(f"cannot read file: {exc.strerror}", path=path) from None


def parse_cameras_text(text: str, path=None) -> list[CameraPose]:
    cameras = []
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split("#", 1)[0].split()
        if not tokens:
            continue
        if len(tokens) != CAMERA_FIELDS:
            raise MalformedFile(
                f"expected {CAMERA_FIELDS} fields, found {len(tokens)}",
                path=path, line=lineno)
        cid, mask_name = tokens[0], tokens[-1]
        try:
            width, height = int(tokens[1]), int(tokens[2])
            nums = [float(t) for t in tokens[3:19]]
        except ValueError as exc:
            raise MalformedFile(f"bad number: {exc}", path=path, line=lineno) from None
        if not all(math.isfinite(v) for v in nums):
            raise MalformedFile("non-finite camera parameter", path=path, line=lineno)
        fx, fy, cx, cy = nums[:4]
        R = np.array(nums[4:13]).reshape(3, 3)
        T = np.array(nums[13:16])
        if cid in seen:
            raise MalformedFile(f"duplicate camera id {cid!r}", path=path, line=lineno)
        try:
            cam = CameraPose.from_intrinsics(cid, width, height, fx, fy, cx, cy,
                                             R, T, mask_name)
        except NonOrthonormalRotation as exc:
            exc.context.update({"path": path, "line": lineno})
            raise
        except ValueError as exc:
            raise MalformedFile(str(exc), path=path, line=lineno) from None
        seen.add(cid)
        cameras.append(cam)
    if not cameras:
        raise MalformedFile("no camera records", path=path)
    return cameras


def parse_cameras(path) -> list[CameraPose]:
    data = _read_bytes(path)
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedFile("camera file is not UTF-8 text", path=path,
                            offset=exc.start) from None
    return parse_cameras_text(text, path=path)


def format_cameras(cameras: Sequence[CameraPose]) -> str:
    lines = ["# id width height fx fy cx cy r11 r12 r13 r21 r22 r23 "
             "r31 r32 r33 tx ty tz mask_filename"]
    for c in cameras:
        nums = [c.fx, c.fy, c.cx, c.cy, *c.R.ravel(), *c.T]
        body = " ".join(repr(float(v)) for v in nums)
        lines.append(f"{c.camera_id} {c.width} {c.height} {body} {c.mask_path}")
    return "\n".join(lines) + "\n"


def write_cameras(cameras: Sequence[CameraPose], path) -> None:
    _write_bytes(path, format_cameras(cameras).encode())


def _write_bytes(path, data: bytes) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(data)
    except OSError as exc:
        raise IoError(f"cannot write: {exc.strerror}", path=path) from None


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}
_PLY_NAMES = {"i1": "char", "u1": "uchar", "i2": "short", "u2": "ushort",
              "i4": "int", "u4": "uint", "f4": "float", "f8": "double"}


@dataclass
class _PlyElement:
    name: str
    count: int
    props: list  # (name, dtype-code) or (name, ("list", count_code, item_code))

    @property
    def has_list(self):
        return any(isinstance(t, tuple) for _, t in self.props)


def _parse_ply_header(data: bytes, path):
    if not (data.startswith(b"ply\n") or data.startswith(b"ply\r\n")):
        raise MalformedFile("missing 'ply' magic", path=path, offset=0)
    end = data.find(b"end_header", 0, MAX_HEADER_BYTES)
    if end < 0:
        raise MalformedFile("no end_header within header limit", path=path)
    body = end + len(b"end_header")
    if data[body:body + 2] == b"\r\n":
        body += 2
    elif data[body:body + 1] == b"\n":
        body += 1
    else:
        raise MalformedFile("end_header not followed by newline", path=path,
                            offset=body)
    try:
        header = data[:end].decode("ascii")
    except UnicodeDecodeError as exc:
        raise MalformedFile("non-ASCII byte in PLY header", path=path,
                            offset=exc.start) from None

    fmt = None
    elements: list[_PlyElement] = []
    comments = []
    for lineno, line in enumerate(header.splitlines(), start=1):
        tok = line.split()
        if lineno == 1 or not tok:
            continue
        key = tok[0]
        if key == "format":
            if len(tok) != 3 or tok[2] != "1.0" or tok[1] not in (
                    "ascii", "binary_little_endian", "binary_big_endian"):
                raise MalformedFile("unsupported PLY format line", path=path,
                                    line=lineno)
            fmt = tok[1]
        elif key in ("comment", "obj_info"):
            comments.append(line.split(None, 1)[1] if len(tok) > 1 else "")
        elif key == "element":
            if len(tok) != 3:
                raise MalformedFile("bad element line", path=path, line=lineno)
            try:
                count = int(tok[2])
            except ValueError:
                raise MalformedFile("bad element count", path=path, line=lineno) from None
            if count < 0:
                raise MalformedFile("negative element count", path=path, line=lineno)
            elements.append(_PlyElement(tok[1], count, []))
        elif key == "property":
            if not elements:
                raise MalformedFile("property before any element", path=path,
                                    line=lineno)
            props = elements[-1].props
            if len(tok) == 5 and tok[1] == "list":
                if tok[2] not in _PLY_TYPES or tok[3] not in _PLY_TYPES \
                        or _PLY_TYPES[tok[2]][0] == "f":
                    raise MalformedFile("bad list property types", path=path,
                                        line=lineno)
                props.append((tok[4], ("list", _PLY_TYPES[tok[2]],
                                       _PLY_TYPES[tok[3]])))
            elif len(tok) == 3 and tok[1] in _PLY_TYPES:
                props.append((tok[2], _PLY_TYPES[tok[1]]))
            else:
                raise MalformedFile("bad property line", path=path, line=lineno)
            names = [n for n, _ in props]
            if len(set(names)) != len(names):
                raise MalformedFile(f"duplicate property {tok[-1]!r}", path=path,
                                    line=lineno)
        else:
            raise MalformedFile(f"unknown header keyword {key!r}", path=path,
                                line=lineno)
    if fmt is None:
        raise MalformedFile("PLY header has no format line", path=path)
    first_body_line = header.count("\n") + 2
    return fmt, elements, comments, body, first_body_line


def _ascii_element(records, start, elem: _PlyElement, path, base_line):
    """Parse ``elem.count`` records; ``records`` holds (body line index, text)."""
    n = elem.count
    if start + n > len(records):
        raise MalformedFile(f"element {elem.name!r} truncated", path=path,
                            line=base_line + (records[-1][0] + 1 if records else 0))

    def lineno(k):
        return base_line + records[start + k][0]

    names = [p for p, _ in elem.props]
    dtype = np.dtype([(p, t) for p, t in elem.props])
    cols = [[] for _ in names]
    nprops = len(names)
    for i in range(n):
        tok = records[start + i][1].split()
        if len(tok) != nprops:
            raise MalformedFile(f"expected {nprops} values, found {len(tok)}",
                                path=path, line=lineno(i))
        for c, t in zip(cols, tok):
            c.append(t)
    out = np.empty(n, dtype=dtype)
    for (pname, code), col in zip(elem.props, cols):
        try:
            values = np.array(col, dtype=np.float64) if col else np.empty(0)
        except ValueError:
            bad = next(i for i, t in enumerate(col) if not _is_number(t))
            raise MalformedFile(f"bad value for {pname!r}", path=path,
                                line=lineno(bad)) from None
        if code[0] in "iu":
            info = np.iinfo(code)
            bad = np.flatnonzero((values != np.round(values)) | (values < info.min)
                                 | (values > info.max) | ~np.isfinite(values))
            if bad.size:
                raise MalformedFile(f"value out of range for {pname!r}", path=path,
                                    line=lineno(int(bad[0])))
        out[pname] = values
    return out


def _is_number(tok):
    try:
        float(tok)
        return True
    except ValueError:
        return False


def read_ply(path, element: str = "vertex"):
    """Return (structured array of ``element``, header comments)."""
    data = _read_bytes(path)
    fmt, elements, comments, body, base_line = _parse_ply_header(data, path)
    if element not in [e.name for e in elements]:
        raise MalformedFile(f"PLY has no {element!r} element", path=path)

    if fmt == "ascii":
        try:
            text = data[body:].decode("ascii")
        except UnicodeDecodeError as exc:
            raise MalformedFile("non-ASCII byte in PLY body", path=path,
                                offset=body + exc.start) from None
        # blank lines carry no records
        records = [(i, ln) for i, ln in enumerate(text.splitlines()) if ln.strip()]
        start = 0
        for elem in elements:
            if elem.name == element:
                if elem.has_list:
                    raise MalformedFile("list properties are not supported on "
                                        f"{element!r}", path=path)
                return _ascii_element(records, start, elem, path, base_line), comments
            start += elem.count
            if start > len(records):
                raise MalformedFile(f"element {elem.name!r} truncated", path=path)

    order = "<" if fmt == "binary_little_endian" else ">"
    offset = body
    for elem in elements:
        if elem.has_list:
            raise MalformedFile(f"binary list element {elem.name!r} before "
                                f"{element!r} is not supported", path=path,
                                offset=offset)
        dtype = np.dtype([(p, order + t) for p, t in elem.props])
        nbytes = dtype.itemsize * elem.count
        if offset + nbytes > len(data):
            raise MalformedFile(f"element {elem.name!r} truncated", path=path,
                                offset=len(data))
        if elem.name == element:
            arr = np.frombuffer(data, dtype=dtype, count=elem.count, offset=offset)
            return arr.astype(dtype.newbyteorder("=")), comments
        offset += nbytes
    raise AssertionError("unreachable")


def write_ply(path, vertices: np.ndarray, comments: Sequence[str] = ()) -> None:
    """Write a structured vertex array as binary little-endian PLY."""
    lines = ["ply", "format binary_little_endian 1.0"]
    lines += [f"comment {c}" for c in comments]
    lines.append(f"element vertex {len(vertices)}")
    for name in vertices.dtype.names:
        code = vertices.dtype[name].str[1:]
        lines.append(f"property {_PLY_NAMES[code]} {name}")
    lines.append("end_header")
    header = ("\n".join(lines) + "\n").encode("ascii")
    le = vertices.astype(vertices.dtype.newbyteorder("<"))
    _write_bytes(path, header + le.tobytes())


def _xyz(vertices, path):
    names = vertices.dtype.names
    if not all(k in names for k in ("x", "y", "z")):
        raise MalformedFile("vertex element lacks x/y/z", path=path)
    with np.errstate(invalid="ignore"):  # non-finite values are reported below
        pts = np.column_stack([vertices[k].astype(np.float64) for k in "xyz"])
    bad = np.flatnonzero(~np.all(np.isfinite(pts), axis=1))
    if bad.size:
        raise MalformedFile(f"non-finite coordinate at vertex {int(bad[0])}",
                            path=path)
    return pts


def read_point_cloud(path):
    """Return (points (N,3) float64, colors (N,3) uint8 or None)."""
    vertices, _ = read_ply(path)
    pts = _xyz(vertices, path)
    names = vertices.dtype.names
    colors = None
    for keys in (("red", "green", "blue"), ("r", "g", "b")):
        if all(k in names for k in keys):
            colors = np.column_stack([vertices[k] for k in keys])
            if colors.dtype != np.uint8:
                if np.any((colors < 0) | (colors > 255)):
                    raise MalformedFile("colour out of 0..255", path=path)
                colors = colors.astype(np.uint8)
            break
    return pts, colors


def write_point_cloud(path, points, colors=None) -> None:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if colors is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    v = np.empty(len(points), dtype=fields)
    for i, k in enumerate("xyz"):
        v[k] = points[:, i]
    if colors is not None:
        colors = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
        v["red"], v["green"], v["blue"] = colors.T
    write_ply(path, v)


def write_labeled_cloud(cloud, path, class_table: Sequence[str] = ()) -> None:
    """Serialize a fused SemanticCloud: xyz, class, class colour, per-class votes.

    Coordinates are stored as float32.
    """
    n, c = cloud.votes.shape
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("class", "u1"),
              ("red", "u1"), ("green", "u1"), ("blue", "u1")]
    fields += [(f"vote_{k}", "<i4") for k in range(c)]
    v = np.empty(n, dtype=fields)
    for i, k in enumerate("xyz"):
        v[k] = cloud.points[:, i]
    v["class"] = cloud.fused
    rgb = class_colors(cloud.fused)
    v["red"], v["green"], v["blue"] = rgb.T
    for k in range(c):
        v[f"vote_{k}"] = cloud.votes[:, k]
    comments = ["debris-twin labeled cloud"]
    if class_table:
        comments.append("classes " + " ".join(class_table))
    write_ply(path, v, comments)


def read_labeled_cloud(path):
    """Inverse of :func:`write_labeled_cloud`. Returns (SemanticCloud, class names)."""
    from .projection import SemanticCloud

    vertices, comments = read_ply(path)
    pts = _xyz(vertices, path)
    names = vertices.dtype.names
    if "class" not in names:
        raise MalformedFile("labeled cloud lacks a 'class' property", path=path)
    k = 0
    while f"vote_{k}" in names:
        k += 1
    if k == 0:
        raise MalformedFile("labeled cloud lacks vote_* properties", path=path)
    votes = np.column_stack([vertices[f"vote_{i}"] for i in range(k)]).astype(np.int64)
    fused = vertices["class"].astype(np.int64)
    if np.any(votes < 0):
        raise MalformedFile("negative vote count", path=path)
    if np.any((fused < 0) | (fused >= k)):
        raise UnknownClassIndex("fused class outside the vote table", path=path)
    table = ()
    for c in comments:
        if c.startswith("classes "):
            table = tuple(c.split()[1:])
    cloud = SemanticCloud(pts.astype(np.float32).astype(np.float64), votes, fused)
    return cloud, table


# ---------------------------------------------------------------------------
# label masks
# ---------------------------------------------------------------------------

def _pgm_tokens(data: bytes, count: int, path):
    """Read ``count`` whitespace/comment separated header tokens."""
    tokens = []
    i, n = 0, len(data)
    while len(tokens) < count:
        while i < n and (data[i:i + 1].isspace() or data[i:i + 1] == b"#"):
            if data[i:i + 1] == b"#":
                j = data.find(b"\n", i)
                i = n if j < 0 else j + 1
            else:
                i += 1
        start = i
        while i < n and not data[i:i + 1].isspace() and data[i:i + 1] != b"#":
            i += 1
        if start == i:
            raise MalformedFile("truncated PGM header", path=path, offset=i)
        tokens.append((data[start:i], start))
    return tokens, i


def _read_pgm(data: bytes, path) -> np.ndarray:
    tokens, end = _pgm_tokens(data, 4, path)
    magic = tokens[0][0]
    vals = []
    for tok, off in tokens[1:]:
        if not tok.isdigit() or len(tok) > 9:
            raise MalformedFile("bad PGM header number", path=path, offset=off)
        vals.append(int(tok))
    w, h, maxval = vals
    if w <= 0 or h <= 0 or w * h > MAX_IMAGE_PIXELS:
        raise MalformedFile("bad PGM dimensions", path=path, offset=tokens[1][1])
    if not 0 < maxval <= 255:
        raise MalformedFile("only 8-bit PGM masks are supported", path=path,
                            offset=tokens[3][1])
    if magic == b"P5":
        if end >= len(data) or not data[end:end + 1].isspace():
            raise MalformedFile("missing whitespace after PGM header", path=path,
                                offset=end)
        start = end + 1
        if len(data) - start < w * h:
            raise MalformedFile("PGM raster truncated", path=path, offset=len(data))
        arr = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=start)
    else:
        body = data[end:].split()
        if len(body) < w * h:
            raise MalformedFile("PGM raster truncated", path=path, offset=len(data))
        if not all(t.isdigit() and len(t) <= 3 for t in body[:w * h]):
            raise MalformedFile("bad PGM raster value", path=path, offset=end)
        arr = np.array([int(t) for t in body[:w * h]], dtype=np.int64)
    if arr.size and int(arr.max()) > maxval:
        raise MalformedFile("PGM value exceeds maxval", path=path)
    return arr.astype(np.uint8).reshape(h, w)


def _read_png(data: bytes, path) -> np.ndarray:
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", Image.DecompressionBombWarning)
            im = Image.open(io.BytesIO(data), formats=["PNG"])
            w, h = im.size
            if w <= 0 or h <= 0 or w * h > MAX_IMAGE_PIXELS:
                raise MalformedFile("bad PNG dimensions", path=path)
            if im.mode not in ("L", "P"):
                raise MalformedFile(
                    f"mask must be 8-bit single channel, got mode {im.mode}",
                    path=path)
            im.load()
            arr = np.array(im, dtype=np.uint8)
    except MalformedFile:
        raise
    except Exception as exc:  # PIL raises many unrelated types on bad input
        raise MalformedFile(f"unreadable PNG: {type(exc).__name__}: {exc}",
                            path=path) from None
    if arr.shape != (h, w):
        raise MalformedFile("PNG decoded to unexpected shape", path=path)
    return arr


def read_mask(path, width: Optional[int] = None, height: Optional[int] = None,
              n_classes: Optional[int] = None) -> LabelMask:
    data = _read_bytes(path)
    if data[:2] in (b"P5", b"P2"):
        labels = _read_pgm(data, path)
    elif data[:8] == b"\x89PNG\r\n\x1a\n":
        labels = _read_png(data, path)
    else:
        raise MalformedFile("mask is neither PNG nor PGM", path=path, offset=0)
    if width is not None and (labels.shape[1], labels.shape[0]) != (width, height):
        raise DimensionMismatch(
            f"mask is {labels.shape[1]}x{labels.shape[0]}, camera expects "
            f"{width}x{height}", path=path)
    if n_classes is not None and labels.size and int(labels.max()) >= n_classes:
        raise UnknownClassIndex(
            f"mask contains class {int(labels.max())}, only {n_classes} classes",
            path=path, value=int(labels.max()))
    return LabelMask(labels)


def write_mask(mask, path) -> None:
    labels = mask.labels if isinstance(mask, LabelMask) else np.asarray(mask)
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    if str(path).lower().endswith(".pgm"):
        h, w = labels.shape
        _write_bytes(path, f"P5\n{w} {h}\n255\n".encode() + labels.tobytes())
        return
    buf = io.BytesIO()
    Image.fromarray(labels, mode="L").save(buf, format="PNG")
    _write_bytes(path, buf.getvalue())


# ---------------------------------------------------------------------------
# scene assembly
# ---------------------------------------------------------------------------

def parse_scene(camera_file, cloud_file, mask_dir, config, *,
                load_masks: bool = True, threads: int = 1) -> Scene:
    """Read and cross-validate cameras, cloud, masks and class taxonomy.

    ``config`` may be a path or an already-loaded :class:`PipelineConfig`.
    """
    if not isinstance(config, PipelineConfig):
        config = load_config(config)
    cameras = parse_cameras(camera_file)
    points, colors = read_point_cloud(cloud_file)
    n_classes = len(config.class_table)

    masks = {}
    if load_masks:
        mask_dir = Path(mask_dir)
        if not mask_dir.is_dir():
            raise MalformedFile("mask directory not found", path=mask_dir)

        def load(cam):
            return read_mask(mask_dir / cam.mask_path, cam.width, cam.height,
                             n_classes)

        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            loaded = list(pool.map(load, cameras))
        masks = {cam.camera_id: m for cam, m in zip(cameras, loaded)}
    return Scene(cameras, points, config.class_table, colors, masks)


# ---------------------------------------------------------------------------
# depth maps
# ---------------------------------------------------------------------------

_DEPTH_MAGIC = b"DTDEPTH1\n"


def write_depth_map(dmap, path) -> None:
    """Binary depth file: magic, one JSON header line, raw little-endian f8."""
    header = {"camera_id": dmap.camera_id, "width": dmap.width,
              "height": dmap.height, "downsample": dmap.downsample,
              "grid_w": dmap.grid_w, "grid_h": dmap.grid_h}
    blob = (_DEPTH_MAGIC + json.dumps(header, sort_keys=True).encode() + b"\n"
            + np.ascontiguousarray(dmap.values, dtype="<f8").tobytes())
    _write_bytes(path, blob)


def read_depth_map(path):
    from .projection import DepthMap

    data = _read_bytes(path)
    if not data.startswith(_DEPTH_MAGIC):
        raise MalformedFile("not a depth map file", path=path, offset=0)
    nl = data.find(b"\n", len(_DEPTH_MAGIC))
    if nl < 0:
        raise MalformedFile("depth header truncated", path=path)
    try:
        h = json.loads(data[len(_DEPTH_MAGIC):nl])
        gw, gh = int(h["grid_w"]), int(h["grid_h"])
        cid, w, ht, d = str(h["camera_id"]), int(h["width"]), int(h["height"]), \
            int(h["downsample"])
    except (ValueError, KeyError, TypeError):
        raise MalformedFile("bad depth header", path=path,
                            offset=len(_DEPTH_MAGIC)) from None
    if len(data) - nl - 1 != 8 * gw * gh:
        raise MalformedFile("depth raster size mismatch", path=path, offset=nl + 1)
    values = np.frombuffer(data, dtype="<f8", offset=nl + 1).reshape(gh, gw)
    return DepthMap(cid, w, ht, d, values.astype(np.float64))


def write_depth_png(dmap, path) -> None:
    """16-bit preview: depth scaled linearly over [0, max finite], empty -> 0."""
    v = dmap.values
    finite = np.isfinite(v)
    out = np.zeros(v.shape, dtype=np.uint16)
    if finite.any():
        top = v[finite].max()
        out[finite] = np.round(v[finite] / top * 65535.0).astype(np.uint16)
    buf = io.BytesIO()
    Image.fromarray(out).save(buf, format="PNG")
    _write_bytes(path, buf.getvalue())


# ---------------------------------------------------------------------------
# grids, instances, risk maps
# ---------------------------------------------------------------------------

NODATA = -9999


def write_ascii_grid(path, values: np.ndarray, xll: float, yll: float,
                     cellsize: float, integer: bool = False) -> None:
    """ESRI ASCII grid. ``values[0]`` is the southern row; files list north first."""
    nrows, ncols = values.shape
    lines = [f"ncols {ncols}", f"nrows {nrows}", f"xllcorner {float(xll)!r}",
             f"yllcorner {float(yll)!r}", f"cellsize {float(cellsize)!r}",
             f"NODATA_value {NODATA}"]
    fmt = (lambda x: str(int(x))) if integer else (lambda x: repr(float(x)))
    for row in values[::-1]:
        lines.append(" ".join(fmt(x) for x in row))
    _write_bytes(path, ("\n".join(lines) + "\n").encode())


def read_ascii_grid(path, integer: bool = False):
    """Return (values with row 0 south, header dict)."""
    data = _read_bytes(path)
    try:
        lines = data.decode("ascii").splitlines()
    except UnicodeDecodeError as exc:
        raise MalformedFile("grid is not ASCII", path=path, offset=exc.start) from None
    keys = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "NODATA_value")
    header = {}
    for i, key in enumerate(keys):
        tok = lines[i].split() if i < len(lines) else []
        if len(tok) != 2 or tok[0].lower() != key.lower():
            raise MalformedFile(f"expected {key}", path=path, line=i + 1)
        try:
            header[key] = float(tok[1])
        except ValueError:
            raise MalformedFile(f"bad {key}", path=path, line=i + 1) from None
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    rows = lines[6:6 + nrows]
    if len(rows) != nrows:
        raise MalformedFile("grid truncated", path=path, line=len(lines))
    parse = int if integer else float
    out = np.empty((nrows, ncols), dtype=np.int64 if integer else np.float64)
    for r, line in enumerate(rows):
        tok = line.split()
        if len(tok) != ncols:
            raise MalformedFile("wrong number of columns", path=path, line=7 + r)
        try:
            out[nrows - 1 - r] = [parse(t) for t in tok]
        except ValueError:
            raise MalformedFile("bad grid value", path=path, line=7 + r) from None
    return out, header


def _sidecar(path, suffix):
    path = Path(path)
    return path.with_name(path.stem + suffix + path.suffix)


def write_height_grid(grid, path) -> None:
    """Heights to ``path``; class and point-count rasters to ``*_class``/``*_count``."""
    x0, y0 = grid.origin
    write_ascii_grid(path, grid.z, x0, y0, grid.cell_size)
    write_ascii_grid(_sidecar(path, "_class"), grid.classes, x0, y0,
                     grid.cell_size, integer=True)
    write_ascii_grid(_sidecar(path, "_count"), grid.counts, x0, y0,
                     grid.cell_size, integer=True)


def read_height_grid(path):
    from .volumetry import HeightGrid

    z, h = read_ascii_grid(path)
    classes, hc = read_ascii_grid(_sidecar(path, "_class"), integer=True)
    counts, hn = read_ascii_grid(_sidecar(path, "_count"), integer=True)
    if not (z.shape == classes.shape == counts.shape):
        raise MalformedFile("height grid sidecars disagree in shape", path=path)
    return HeightGrid((h["xllcorner"], h["yllcorner"]), h["cellsize"], z,
                      classes, counts)


INSTANCE_COLUMNS = ("id", "class", "volume_m3", "centroid_x", "centroid_y",
                    "area_m2", "class_name")


def write_instances_csv(instances, path, class_table: Sequence[str] = ()) -> None:
    rows = [",".join(INSTANCE_COLUMNS)]
    for inst in instances:
        name = class_table[inst.class_index] if inst.class_index < len(class_table) else ""
        rows.append(",".join([
            str(inst.instance_id), str(inst.class_index), repr(inst.volume),
            repr(inst.centroid[0]), repr(inst.centroid[1]), repr(inst.area), name]))
    _write_bytes(path, ("\n".join(rows) + "\n").encode())


def write_risk_map(rmap, path) -> None:
    """KE grid as ESRI ASCII plus a JSON sidecar with speed and instance KE."""
    g = rmap.grid
    write_ascii_grid(path, rmap.ke, g.origin[0], g.origin[1], g.cell_size)
    meta = {"category": rmap.category, "speed_mps": rmap.speed,
            "instance_ke_j": {str(k): v for k, v in rmap.instance_ke.items()}}
    _write_bytes(Path(path).with_suffix(".json"),
                 (json.dumps(meta, indent=2, sort_keys=True) + "\n").encode())


def read_risk_map(path, grid):
    """Read a risk grid written by :func:`write_risk_map` against its HeightGrid."""
    from .risk import RiskMap

    ke, _ = read_ascii_grid(path)
    if ke.shape != grid.z.shape:
        raise DimensionMismatch("risk grid does not match height grid", path=path)
    try:
        meta = json.loads(_read_bytes(Path(path).with_suffix(".json")))
        inst = {int(k): float(v) for k, v in meta["instance_ke_j"].items()}
        return RiskMap(int(meta["category"]), float(meta["speed_mps"]), grid, ke,
                       inst)
    except (ValueError, KeyError, TypeError) as exc:
        raise MalformedFile(f"bad risk sidecar: {exc}", path=path) from None


def write_json(obj, path) -> None:
    _write_bytes(path, (json.dumps(obj, indent=2, sort_keys=False) + "\n").encode())


def ensure_dir(path) -> Path:
    path = Path(path)
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create directory: {exc.strerror}", path=path) from None
    return path
