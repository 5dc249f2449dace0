"""Command-line entry point: ``patchmvs {run,depth,fuse,eval,render}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import PipelineConfig, load_config, parse_overrides
from .errors import ConfigError, PatchMVSError
from .fusion import fuse, write_ply
from .io import read_pfm, write_calibration, write_image, write_kitti_poses, write_pfm, write_seed_file
from .metrics import DEPTH_CAP, compute_metrics



def _config_from_args(args) -> PipelineConfig:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if overrides:
        cfg = cfg.replace(**parse_overrides(overrides))
    flags = {}
    if args.seed is not None:
        flags["seed"] = args.seed
    if args.threads is not None:
        flags["threads"] = args.threads
    if args.scales is not None:
        flags["n_scales"] = args.scales
    if args.dump_intermediate:
        flags["dump_intermediate"] = True
    if getattr(args, "output", None):
        flags["output_dir"] = args.output
    return cfg.replace(**flags) if flags else cfg


def _add_run_flags(p):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one configuration key")
    p.add_argument("--seed", type=int, help="master random seed")
    p.add_argument("--threads", type=int, help="worker threads for the pixel kernels")
    p.add_argument("--scales", type=int, help="pyramid levels (default 3)")
    p.add_argument("--dump-intermediate", action="store_true", help="write per-scale, per-stage depth maps")
    p.add_argument("--output", "-o", help="output directory")


def cmd_run(args) -> int:
    from .pipeline import FrameSet, run_pipeline

    cfg = _config_from_args(args)
    fs = FrameSet.from_config(cfg)
    res = run_pipeline(cfg, fs)
    n = len(res.cloud) if res.cloud is not None else 0
    print(f"wrote maps for {len(res.frames)} frames and {n} fused points to {cfg.output_dir}")
    return 0


def cmd_depth(args) -> int:
    from .pipeline import FrameSet, run_pipeline

    cfg = _config_from_args(args)
    fs = FrameSet.from_config(cfg)
    if not 0 <= args.frame < len(fs):
        raise ConfigError(f"--frame {args.frame} outside 0..{len(fs) - 1}")
    run_pipeline(cfg, fs, targets=[args.frame], do_fusion=False)
    print(f"wrote maps for frame {args.frame} to {cfg.output_dir}")
    return 0


def cmd_fuse(args) -> int:
    from .pipeline import FrameSet, views_from_maps

    cfg = _config_from_args(args)
    fs = FrameSet.from_config(cfg)
    maps = Path(args.maps or cfg.output_dir)
    cloud = fuse(views_from_maps(maps, fs), cfg.fusion_params())
    out = Path(args.ply) if args.ply else Path(cfg.output_dir) / "cloud.ply"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_ply(cloud, out)
    print(f"wrote {len(cloud)} points to {out}")
    return 0


def cmd_eval(args) -> int:
    pred = read_pfm(args.pred).astype(np.float64)
    gt = read_pfm(args.gt).astype(np.float64)
    m = compute_metrics(pred, gt, cap=args.cap)
    text = m.report()
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_render(args) -> int:
    from .synthetic import load_scene_file, render_scene

    scene, cam = load_scene_file(args.scene)
    out = Path(args.output)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "gt").mkdir(parents=True, exist_ok=True)
    views = render_scene(scene, cam)
    rs = np.random.default_rng(args.seed)
    if args.seeds:
        (out / "seeds").mkdir(exist_ok=True)
    for k, v in enumerate(views):
        write_image(v.image, out / "images" / f"{k:06d}.png")
        write_pfm(v.depth, out / "gt" / f"{k:06d}_depth.pfm")
        write_pfm(v.normal, out / "gt" / f"{k:06d}_normal.pfm")
        if args.seeds:
            ys, xs = np.nonzero(v.depth > 0)
            pick = rs.choice(len(xs), size=min(args.seeds, len(xs)), replace=False)
            pts = np.stack([xs[pick], ys[pick], v.depth[ys[pick], xs[pick]]], axis=1)
            write_seed_file(pts, out / "seeds" / f"{k:06d}.txt")
    write_kitti_poses(scene.poses, out / "poses.txt")
    write_calibration(cam, out / "calib.txt")
    print(f"rendered {len(views)} views to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="patchmvs", description="Multi-view PatchMatch stereo.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="estimate maps for every frame and fuse them")
    _add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("depth", help="estimate maps for one frame")
    _add_run_flags(p)
    p.add_argument("--frame", type=int, required=True, help="index of the reference frame")
    p.set_defaults(func=cmd_depth)

    p = sub.add_parser("fuse", help="fuse previously written maps into a point cloud")
    _add_run_flags(p)
    p.add_argument("--maps", help="directory holding frame_*_depth.pfm / frame_*_normal.pfm")
    p.add_argument("--ply", help="output PLY path")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="depth metrics of a prediction against ground truth")
    p.add_argument("pred", help="predicted depth PFM")
    p.add_argument("gt", help="ground-truth depth PFM (0 = invalid)")
    p.add_argument("--cap", type=float, default=DEPTH_CAP, help="depth cap in metres")
    p.add_argument("--report", help="also write the report to this file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="render a synthetic scene with ground truth")
    p.add_argument("scene", help="scene description file")
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--seeds", type=int, default=0, help="also write this many exact depth seeds per view")
    p.add_argument("--seed", type=int, default=0, help="random seed for seed sampling")
    p.set_defaults(func=cmd_render)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PatchMVSError as exc:
        print(f"patchmvs {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
