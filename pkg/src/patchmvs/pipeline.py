"""End-to-end driver: frames in, depth/normal/confidence maps and a fused cloud out."""

from __future__ import annotations

import glob
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .config import PipelineConfig
from .errors import InsufficientFramesError, InvalidInputError, PatchMVSError, StageError
from .frames import CameraFrame
from .fusion import FusedCloud, FusionView, fuse, write_ply
from .geometry import CameraIntrinsics
from .io import load_calibration, load_kitti_poses, load_seed_file, read_image, write_pfm
from .matcher import HypothesisGrid, MatchContext, build_planar_priors, run_stage
from .multiscale import build_pyramid, detail_restore, joint_bilateral_upsample
from .refinement import confidence_from_cost, global_refine
from .seeding import SeedSet, initial_grid, scale_seeds

log = logging.getLogger(__name__)

@dataclass
class FrameSet:
    frames: list
    seeds: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.frames) < 2:
            raise InsufficientFramesError(f"need at least 2 frames, got {len(self.frames)}")
        if not self.seeds:
            self.seeds = [None] * len(self.frames)
        if len(self.seeds) != len(self.frames):
            raise InvalidInputError("one seed set (or None) per frame is required")
        shapes = {f.shape for f in self.frames}
        if len(shapes) != 1:
            raise InvalidInputError(f"frames differ in size: {sorted(shapes)}")
        for a, b in zip(self.frames, self.frames[1:]):
            if np.allclose(a.pose.matrix, b.pose.matrix, atol=1e-12):
                raise InvalidInputError(f"frames {a.frame_id} and {b.frame_id} share one pose")

    def __len__(self) -> int:
        return len(self.frames)

    @classmethod
    def from_files(cls, image_paths, pose_file, calib_file, seed_paths=None, depth_range=None) -> "FrameSet":
        image_paths = [Path(p) for p in image_paths]
        if not image_paths:
            raise InvalidInputError("no input images")
        poses = load_kitti_poses(pose_file)
        if len(poses) < len(image_paths):
            raise InvalidInputError(f"{pose_file}: {len(poses)} poses for {len(image_paths)} images")
        first = read_image(image_paths[0])
        cam = load_calibration(calib_file, first.shape[1], first.shape[0])
        frames = []
        for i, p in enumerate(image_paths):
            img = first if i == 0 else read_image(p)
            frames.append(CameraFrame(img, cam, poses[i], frame_id=i))
        seeds = [None] * len(frames)
        if seed_paths is not None:
            for i, sp in enumerate(seed_paths):
                if sp is not None and Path(sp).exists():
                    seeds[i] = SeedSet.from_points(load_seed_file(sp), cam, depth_range, frame_id=i)
        return cls(frames, seeds)

    @classmethod
    def from_config(cls, cfg: PipelineConfig) -> "FrameSet":
        if not (cfg.images and cfg.poses and cfg.calib):
            raise InvalidInputError("config must name images, poses and calib")
        src = Path(cfg.images)
        if src.is_dir():
            paths = sorted(p for p in src.iterdir() if p.suffix.lower() in (".png", ".pgm", ".ppm"))
        else:
            paths = [Path(p) for p in sorted(glob.glob(cfg.images))]
        if not paths:
            raise InvalidInputError(f"{cfg.images}: no images found")
        seed_paths = None
        if cfg.seeds:
            seed_paths = [Path(cfg.seeds) / (p.stem + ".txt") for p in paths]
        return cls.from_files(paths, cfg.poses, cfg.calib, seed_paths, cfg.depth_range)


@dataclass
class FrameResult:
    frame_id: int
    depth: np.ndarray
    normal: np.ndarray
    confidence: np.ndarray
    cost: np.ndarray


@dataclass
class PipelineResult:
    frames: dict                      # frame index -> FrameResult
    cloud: FusedCloud | None
    timings: dict = field(default_factory=dict)


def select_sources(ref: int, n_frames: int, k_src: int = 4, centers=None, min_baseline: float = 0.0) -> list[int]:
    """The ``k_src`` temporally nearest other frames (ties go to the earlier frame).

    With ``min_baseline > 0`` and camera ``centers`` given, frames closer
    than that to the reference camera are skipped.
    """
    if not 0 <= ref < n_frames:
        raise InvalidInputError(f"reference {ref} outside 0..{n_frames - 1}")
    cands = [j for j in range(n_frames) if j != ref]
    if min_baseline > 0 and centers is not None:
        c = np.asarray(centers)
        cands = [j for j in cands if np.linalg.norm(c[j] - c[ref]) >= min_baseline]
    cands.sort(key=lambda j: (abs(j - ref), j))
    chosen = sorted(cands[:k_src])
    if not chosen:
        raise InsufficientFramesError(f"frame {ref}: no source frames available")
    return chosen


def frame_seed(master: int, frame_id: int) -> int:
    return int(rng.hash_u64(master, rng.TAG_MISC, 0, frame_id, 0))


class _Stage:
    """Re-raise module errors with frame and stage attached."""

    def __init__(self, frame, stage):
        self.frame = frame
        self.stage = stage

    def __enter__(self):
        return self

    def __exit__(self, typ, exc, tb):
        if exc is not None and isinstance(exc, PatchMVSError) and not isinstance(exc, StageError):
            raise StageError(self.frame, self.stage, exc) from exc
        return False


def run_pipeline(cfg: PipelineConfig, frameset: FrameSet, output_dir=None, targets=None,
                 do_fusion: bool = True, write: bool = True) -> PipelineResult:
    """Estimate maps for ``targets`` (default: all frames) and fuse them.

    Scale-major schedule: at every scale all frames run the photometric and
    planar stages, then (against that snapshot) the geometric stage, then
    median filtering and refinement; refined maps are upsampled into the
    next scale.  Sources of the targets are processed alongside them.
    """
    t0 = time.perf_counter()
    frames = frameset.frames
    n = len(frames)
    targets = list(range(n)) if targets is None else sorted(set(targets))
    mp = cfg.match_params()
    gp = cfg.geom_params()
    rp = cfg.refine_params()
    sc = cfg.seed_config()
    dr = cfg.depth_range
    out = Path(output_dir or cfg.output_dir)
    if write:
        out.mkdir(parents=True, exist_ok=True)
    inter = out / "intermediate"
    if write and cfg.dump_intermediate:
        inter.mkdir(parents=True, exist_ok=True)

    centers = [f.pose.center for f in frames]
    sources = {}
    for i in range(n):
        with _Stage(frames[i].frame_id, "source selection"):
            sources[i] = select_sources(i, n, cfg.k_src, centers, cfg.min_baseline)
    active = sorted(set(targets).union(*(sources[i] for i in targets)))

    pyramids = {}
    for i in active:
        with _Stage(frames[i].frame_id, "pyramid"):
            pyramids[i] = build_pyramid(frames[i], cfg.n_scales)
    seeds = {i: frame_seed(cfg.seed, frames[i].frame_id) for i in active}

    def dump(i, s, stage, depth):
        if write and cfg.dump_intermediate:
            write_pfm(depth, inter / f"frame_{frames[i].frame_id:06d}_s{s}_{stage}_depth.pfm")

    grids: dict[int, HypothesisGrid] = {}
    refined: dict[int, tuple] = {}
    timings = {}
    for s in range(cfg.n_scales):
        ts = time.perf_counter()
        radius = mp.radius_coarse if s == 0 else mp.radius_fine
        ctxs = {}
        for i in active:
            fid = frames[i].frame_id
            lvl = pyramids[i][s]
            with _Stage(fid, f"scale {s} setup"):
                ctx = MatchContext(lvl, [pyramids[j][s] for j in sources[i]], dr, radius=radius,
                                   step=mp.patch_step, seed=seeds[i], threads=cfg.threads)
            ctxs[i] = ctx
            base = s * 1000
            if s == 0:
                with _Stage(fid, "seeding"):
                    sd = frameset.seeds[i]
                    if sd is not None:
                        sd = scale_seeds(sd, 2 ** (cfg.n_scales - 1), lvl.cam)
                    grid = initial_grid(sd, sc, lvl.cam, dr, seed=seeds[i], n_views=ctx.n_views)
            else:
                with _Stage(fid, f"scale {s} upsampling"):
                    prev = pyramids[i][s - 1]
                    coarse = grids[i]
                    coarse.depth[...], coarse.normal[...] = refined[i]
                    grid = joint_bilateral_upsample(coarse, lvl.image, prev.image, lvl.cam, dr,
                                                    cfg.jbu_sigma_s, cfg.jbu_sigma_r)
                with _Stage(fid, f"scale {s} detail restore"):
                    detail_restore(grid, ctx, cfg.restore_margin, cfg.restore_trials, salt=s)
            with _Stage(fid, f"scale {s} photometric"):
                run_stage(ctx, grid, mp, "photometric", iteration_base=base)
            dump(i, s, "photometric", grid.depth)
            if mp.n_planar > 0:
                with _Stage(fid, f"scale {s} planar"):
                    prior = build_planar_priors(grid, lvl.cam, dr, mp.prior_threshold, mp.prior_cell)
                    run_stage(ctx, grid, mp, "planar", prior=prior, iteration_base=base + 100)
                dump(i, s, "planar", grid.depth)
            grids[i] = grid
        if gp.n_geom > 0:
            snapshot = {i: grids[i].depth.copy() for i in active}
            for i in active:
                with _Stage(frames[i].frame_id, f"scale {s} geometric"):
                    gp.apply_to(ctxs[i], [snapshot[j] for j in sources[i]])
                    run_stage(ctxs[i], grids[i], mp, "geometric", n_iterations=gp.n_geom,
                              iteration_base=s * 1000 + 200)
                dump(i, s, "geometric", grids[i].depth)
        for i in active:
            g = grids[i]
            with _Stage(frames[i].frame_id, f"scale {s} refinement"):
                conf = confidence_from_cost(g.cost, rp.c_lo, rp.c_hi)
                if cfg.refine:
                    r = global_refine(g.depth, g.normal, conf, pyramids[i][s].image, pyramids[i][s].cam, dr, rp,
                                      threads=cfg.threads)
                    refined[i] = (r.depth, r.normal)
                else:
                    refined[i] = (g.depth.copy(), g.normal.copy())
            dump(i, s, "refined", refined[i][0])
        timings[f"scale{s}"] = time.perf_counter() - ts
        log.info("scale %d done in %.2fs", s, timings[f"scale{s}"])

    results = {}
    for i in targets:
        g = grids[i]
        d, nrm = refined[i]
        conf = confidence_from_cost(g.cost, rp.c_lo, rp.c_hi)
        results[i] = FrameResult(frames[i].frame_id, d, nrm, conf, g.cost.copy())
        if write:
            stem = out / f"frame_{frames[i].frame_id:06d}"
            with _Stage(frames[i].frame_id, "output"):
                write_pfm(d, f"{stem}_depth.pfm")
                write_pfm(nrm, f"{stem}_normal.pfm")
                write_pfm(conf, f"{stem}_conf.pfm")

    cloud = None
    if do_fusion and len(targets) > 1:
        tf = time.perf_counter()
        with _Stage("all", "fusion"):
            views = [FusionView(results[i].depth, results[i].normal, frames[i].image, frames[i].cam,
                                frames[i].pose, frames[i].frame_id) for i in targets]
            cloud = fuse(views, cfg.fusion_params())
            if write:
                write_ply(cloud, out / "cloud.ply")
        timings["fusion"] = time.perf_counter() - tf
    timings["total"] = time.perf_counter() - t0
    return PipelineResult(results, cloud, timings)


def views_from_maps(maps_dir, frameset: FrameSet) -> list[FusionView]:
    """Reload saved depth/normal maps for :func:`fuse`."""
    from .io import read_pfm

    maps_dir = Path(maps_dir)
    views = []
    for f in frameset.frames:
        stem = maps_dir / f"frame_{f.frame_id:06d}"
        d = read_pfm(f"{stem}_depth.pfm").astype(np.float64)
        nrm = read_pfm(f"{stem}_normal.pfm").astype(np.float64)
        nn = np.linalg.norm(nrm, axis=2, keepdims=True)
        nrm = nrm / np.where(nn > 0, nn, 1.0)
        views.append(FusionView(d, nrm, f.image, f.cam, f.pose, f.frame_id))
    return views


def synthetic_frameset(views, cam: CameraIntrinsics, seeds=None) -> FrameSet:
    """Frames from rendered views; ``seeds`` is an optional per-view list of SeedSets."""
    return FrameSet([CameraFrame(v.image, cam, v.pose, frame_id=k) for k, v in enumerate(views)], seeds or [])
