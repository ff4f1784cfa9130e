"""``debris-twin`` command line.

    debris-twin {depth|fuse|risk|all} --config CONFIG [--threads N] [--out DIR]
    debris-twin synth (--spec SCENE_SPEC | --fixture NAME) --out DIR [--seed N]

Each stage reads its inputs from files and writes its outputs to files, so
stages can be rerun independently. Results and output paths go to stdout;
failures go to stderr as one JSON object and set the exit code of the error
family (see ``errors.EXIT_CODES``).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import plotting, projection, risk, scene_io, synth, volumetry
from .config import PipelineConfig, load_config
from .errors import DebrisTwinError, InvalidConfig, MalformedFile

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INTERNAL = 1

UNITS_NOTE = ("world coordinates are taken to be metres; an unscaled "
              "reconstruction yields volumes in arbitrary units^3")


class Layout:
    """Where each stage puts its files under the output directory."""

    def __init__(self, outdir):
        self.root = Path(outdir)
        self.depth = self.root / "depth"
        self.depth_index = self.depth / "index.json"
        self.labeled_cloud = self.root / "labeled_cloud.ply"
        self.fuse_summary = self.root / "fuse_summary.json"
        self.height = self.root / "grid" / "height.asc"
        self.instances = self.root / "instances.csv"
        self.risk = self.root / "risk"
        self.summary = self.root / "summary.json"
        self.figures = self.root / "figures"
        self.timing = self.root / "timing.json"

    def depth_file(self, camera_id):
        return self.depth / f"{camera_id}.depth"

    def depth_png(self, camera_id):
        return self.depth / f"{camera_id}.png"

    def risk_png(self, category):
        return self.risk / f"risk_cat{category}.png"

    def risk_grid(self, category):
        return self.risk / f"risk_cat{category}.asc"


def _require(cfg: PipelineConfig, *keys):
    for key in keys:
        if getattr(cfg, key) is None:
            raise InvalidConfig(f"config is missing paths.{key}")


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def run_depth(cfg: PipelineConfig, threads: int = 1) -> list[Path]:
    _require(cfg, "cameras", "cloud")
    scene = scene_io.parse_scene(cfg.cameras, cfg.cloud, cfg.masks, cfg,
                                 load_masks=False)
    out = Layout(cfg.outdir)
    scene_io.ensure_dir(out.depth)
    dmaps = projection.build_depth_maps(scene.points, scene.cameras,
                                        cfg.downsample, threads)
    written = []
    for cam in scene.cameras:
        dm = dmaps[cam.camera_id]
        scene_io.write_depth_map(dm, out.depth_file(cam.camera_id))
        scene_io.write_depth_png(dm, out.depth_png(cam.camera_id))
        written.append(out.depth_file(cam.camera_id))
    scene_io.write_json({"downsample": cfg.downsample,
                         "cameras": [c.camera_id for c in scene.cameras]},
                        out.depth_index)
    return written


def _load_depth_maps(out: Layout, scene, cfg):
    """Depth maps from the depth stage, or computed inline when absent."""
    if not out.depth_index.exists():
        return projection.build_depth_maps(scene.points, scene.cameras,
                                           cfg.downsample)
    try:
        index = json.loads(out.depth_index.read_text())
        ids = list(index["cameras"])
        downsample = int(index["downsample"])
    except (ValueError, KeyError, TypeError, OSError):
        raise MalformedFile("bad depth index", path=out.depth_index) from None
    if downsample != cfg.downsample or ids != [c.camera_id for c in scene.cameras]:
        raise MalformedFile("depth maps are stale for this config; rerun depth",
                            path=out.depth_index)
    dmaps = {}
    for cam in scene.cameras:
        dm = scene_io.read_depth_map(out.depth_file(cam.camera_id))
        if (dm.camera_id, dm.width, dm.height) != (cam.camera_id, cam.width,
                                                   cam.height):
            raise MalformedFile("depth map does not match its camera",
                                path=out.depth_file(cam.camera_id))
        dmaps[cam.camera_id] = dm
    return dmaps


def run_fuse(cfg: PipelineConfig, threads: int = 1) -> list[Path]:
    _require(cfg, "cameras", "cloud", "masks")
    scene = scene_io.parse_scene(cfg.cameras, cfg.cloud, cfg.masks, cfg,
                                 threads=threads)
    out = Layout(cfg.outdir)
    dmaps = _load_depth_maps(out, scene, cfg)
    eps = cfg.eps if cfg.eps is not None else projection.default_eps(scene.points)
    cloud = projection.project_labels(scene, dmaps=dmaps, eps=eps, threads=threads)
    scene_io.ensure_dir(out.root)
    scene_io.write_labeled_cloud(cloud, out.labeled_cloud, scene.class_table)
    counts = np.bincount(cloud.fused, minlength=scene.n_classes)
    support = cloud.support
    scene_io.write_json({
        "points": int(len(cloud)),
        "cameras": len(scene.cameras),
        "downsample": cfg.downsample,
        "eps_m": eps,
        "eps_source": "config" if cfg.eps is not None else "3x median spacing",
        "unsupported_points": int(np.count_nonzero(support == 0)),
        "class_counts": {name: int(counts[i])
                         for i, name in enumerate(scene.class_table)},
    }, out.fuse_summary)
    return [out.labeled_cloud, out.fuse_summary]


def run_risk(cfg: PipelineConfig, threads: int = 1) -> list[Path]:
    out = Layout(cfg.outdir)
    cloud, table = scene_io.read_labeled_cloud(out.labeled_cloud)
    class_table = cfg.class_table
    if table and tuple(table) != tuple(class_table):
        raise InvalidConfig("labeled cloud was fused with a different class table",
                            path=out.labeled_cloud)
    if cloud.n_classes != len(class_table):
        raise InvalidConfig("labeled cloud vote table does not match the config")

    plane = volumetry.register_ground(cloud, inlier_threshold=cfg.inlier_threshold,
                                      max_iters=cfg.max_iters, seed=cfg.seed)
    grid = volumetry.resample(cloud, plane, cfg.grid_size,
                              min_height=cfg.min_height, threads=threads)
    instances = volumetry.cluster_instances(grid, cfg.min_cells)
    maps = risk.build_risk_maps(grid, instances, cfg.materials(), cfg.wind_scale(),
                                class_table)
    log_range = risk.global_log_range(maps)

    written = []
    scene_io.write_height_grid(grid, out.height)
    scene_io.write_instances_csv(instances, out.instances, class_table)
    written += [out.height, out.instances]
    for m in maps:
        png = out.risk_png(m.category)
        flags = risk.render_heatmap(m, cfg.risk_threshold, png, log_range=log_range,
                                    class_table=class_table)
        scene_io.write_risk_map(m, out.risk_grid(m.category))
        written += [png, flags]
    written.append(plotting.risk_panel(maps, out.figures / "risk_overview.png",
                                       log_range))
    written.append(plotting.volume_bars(instances, out.figures / "volumes.png",
                                        class_table))

    summary = {
        "units": {"length": "m", "volume": "m^3", "energy": "J",
                  "assumed_metric": True, "note": UNITS_NOTE},
        "ground_plane": {"normal": list(plane.normal), "offset": plane.offset,
                         "inlier_fraction": plane.inlier_fraction},
        "grid": {"origin": list(grid.origin), "cell_size": grid.cell_size,
                 "nrows": grid.shape[0], "ncols": grid.shape[1]},
        "threshold_j": cfg.risk_threshold,
        "site_volume_m3": volumetry.site_volume(grid),
        "instance_volume_m3": float(sum(i.volume for i in instances)),
        "categories": [
            {"category": m.category, "speed_mps": m.speed,
             "max_cell_ke_j": float(m.ke.max(initial=0.0)),
             "flagged_cells": int(np.count_nonzero(m.flagged(cfg.risk_threshold)))}
            for m in maps],
        "instances": [
            {"id": i.instance_id, "class": i.class_index,
             "class_name": class_table[i.class_index], "volume_m3": i.volume,
             "centroid": list(i.centroid), "area_m2": i.area,
             "ke_j": {str(m.category): m.instance_ke[i.instance_id] for m in maps}}
            for i in instances],
    }
    scene_io.write_json(summary, out.summary)
    written.append(out.summary)
    return written


STAGES = {"depth": run_depth, "fuse": run_fuse, "risk": run_risk}


def run_pipeline(cfg: PipelineConfig, stages, threads: int = 1,
                 emit=print) -> list[dict]:
    """Run ``stages`` in order; returns and writes the per-stage timing report."""
    timings = []
    for name in stages:
        t0 = time.perf_counter()
        try:
            paths = STAGES[name](cfg, threads)
        except DebrisTwinError as exc:
            exc.context.setdefault("stage", name)
            raise
        seconds = time.perf_counter() - t0
        timings.append({"stage": name, "seconds": seconds, "outputs": len(paths)})
        for p in paths:
            emit(str(p))
        emit(f"{name}\t{seconds:.3f}s")
    scene_io.write_json({"threads": threads, "stages": timings},
                        Layout(cfg.outdir).timing)
    return timings


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

FIXTURES = {
    "unit_box": synth.unit_box_spec,
    "hemisphere": synth.hemisphere_spec,
    "occlusion": synth.occlusion_spec,
    "random": synth.random_spec,
}


def run_synth(args) -> int:
    if args.spec:
        spec = synth.load_scene_spec(args.spec)
        if args.seed is not None:
            spec = replace(spec, seed=args.seed)
    else:
        spec = FIXTURES[args.fixture](seed=args.seed or 0)
    fixture = synth.generate(spec)
    print(synth.write_fixture(fixture, args.out))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="debris-twin",
        description="Fuse label masks onto a point cloud, measure debris "
                    "volumes and render wind-category risk heatmaps.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("depth", "build per-camera depth maps"),
                           ("fuse", "occlusion-aware label fusion"),
                           ("risk", "ground, volumes, risk maps and reports"),
                           ("all", "depth, fuse and risk in sequence")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--threads", type=int, default=1,
                       help="worker cap for data-parallel stages (default 1)")
        p.add_argument("--out", type=Path, help="override paths.outdir")
    p = sub.add_parser("synth", help="write a synthetic fixture scene")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--spec", type=Path, help="scene_spec.toml")
    src.add_argument("--fixture", choices=sorted(FIXTURES))
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        if args.command == "synth":
            return run_synth(args)
        if args.threads < 1:
            raise InvalidConfig("--threads must be >= 1")
        cfg = load_config(args.config)
        if args.out is not None:
            cfg = cfg.with_outdir(args.out)
        stages = list(STAGES) if args.command == "all" else [args.command]
        run_pipeline(cfg, stages, args.threads)
        return EXIT_OK
    except DebrisTwinError as exc:
        print(json.dumps(exc.to_dict(), sort_keys=True), file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # last resort: still structured
        print(json.dumps({"error": "InternalError",
                          "message": f"{type(exc).__name__}: {exc}"}),
              file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
