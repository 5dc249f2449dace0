"""Sparse depth seeds to an initial hypothesis grid."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import QhullError

from . import rng
from ._pykernels import _face, _sphere
from .errors import InvalidInputError, TriangulationError
from .geometry import CameraIntrinsics, DepthRange, pixel_rays, rotate_about_axis
from .matcher import HypothesisGrid, triangle_planes

log = logging.getLogger(__name__)

SEED_TAGS = ("slam", "range")
SEED_MODES = ("densify", "triangulate", "random")
GRAZING_LIMIT_DEG = 5.0


@dataclass
class SeedSet:
    """Sparse (pixel, depth) observations for one frame.  Pixels are integer indices."""

    xs: np.ndarray
    ys: np.ndarray
    depths: np.ndarray
    tags: list = field(default_factory=list)
    frame_id: int = 0

    @classmethod
    def empty(cls, frame_id: int = 0) -> "SeedSet":
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0), [], frame_id)

    @classmethod
    def from_points(cls, points, cam: CameraIntrinsics, depth_range: DepthRange,
                    tag: str = "slam", frame_id: int = 0) -> "SeedSet":
        """Ingest ``(x, y, depth)`` rows.

        Coordinates are floored to pixel indices; rows outside the image or
        with non-positive depth are dropped, depths are clamped into range and
        a later row for an already-seen pixel replaces the earlier one.
        """
        if tag not in SEED_TAGS:
            raise InvalidInputError(f"unknown seed tag {tag!r}")
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        xs = np.floor(pts[:, 0]).astype(np.int64)
        ys = np.floor(pts[:, 1]).astype(np.int64)
        d = pts[:, 2]
        ok = (xs >= 0) & (xs < cam.width) & (ys >= 0) & (ys < cam.height) & np.isfinite(d) & (d > 0)
        if not np.all(ok):
            log.warning("frame %d: dropped %d seeds outside the image or with invalid depth",
                        frame_id, int((~ok).sum()))
        xs, ys, d = xs[ok], ys[ok], depth_range.clamp(d[ok])
        lin = ys * cam.width + xs
        # keep the last occurrence of every pixel
        _, first_rev = np.unique(lin[::-1], return_index=True)
        keep = np.sort(len(lin) - 1 - first_rev)
        return cls(xs[keep], ys[keep], np.asarray(d, dtype=np.float64)[keep], [tag] * len(keep), frame_id)

    def __len__(self) -> int:
        return len(self.depths)

    def subset(self, idx) -> "SeedSet":
        idx = np.asarray(idx, dtype=np.int64)
        return SeedSet(self.xs[idx], self.ys[idx], self.depths[idx], [self.tags[i] for i in idx], self.frame_id)


@dataclass
class SeedConfig:
    mode: str = "densify"
    radius: int = 2
    depth_sigma: float = 0.02
    normal_sigma: float = 0.1

    def __post_init__(self):
        if self.mode not in SEED_MODES:
            raise InvalidInputError(f"seed mode must be one of {SEED_MODES}")
        if self.radius < 0:
            raise InvalidInputError("support radius must be >= 0")
        if self.depth_sigma < 0 or self.normal_sigma < 0:
            raise InvalidInputError("noise sigmas must be >= 0")


def densify(seeds: SeedSet, radius: int, shape) -> np.ndarray:
    """Spread every seed over its ``(2r+1)^2`` block; NaN where no seed reaches.

    Overlaps go to the Euclidean-nearest seed, ties to the smaller depth.
    """
    if radius < 0:
        raise InvalidInputError("radius must be >= 0")
    H, W = shape
    out = np.full((H, W), np.nan)
    if len(seeds) == 0:
        return out
    lins, dists, deps = [], [], []
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            qx = seeds.xs + dx
            qy = seeds.ys + dy
            ok = (qx >= 0) & (qx < W) & (qy >= 0) & (qy < H)
            lins.append((qy * W + qx)[ok])
            dists.append(np.full(int(ok.sum()), dx * dx + dy * dy))
            deps.append(seeds.depths[ok])
    lin = np.concatenate(lins)
    dist = np.concatenate(dists)
    dep = np.concatenate(deps)
    order = np.lexsort((dep, dist, lin))
    lin, dep = lin[order], dep[order]
    first = np.ones(len(lin), dtype=bool)
    first[1:] = lin[1:] != lin[:-1]
    out.ravel()[lin[first]] = dep[first]
    return out


def triangulate_seeds(seeds: SeedSet, cam: CameraIntrinsics):
    """Per-pixel plane from a Delaunay mesh over the seeds.

    Returns ``(depth, normal)``; depth is NaN outside the hull and where the
    triangle plane is within 5 degrees of grazing the pixel's ray.
    """
    if len(seeds) < 3:
        raise TriangulationError(f"need at least 3 seeds, got {len(seeds)}")
    px = seeds.xs + 0.5
    py = seeds.ys + 0.5
    try:
        tri, n, c, _ = triangle_planes(px, py, seeds.depths, cam)
    except QhullError as exc:
        raise TriangulationError("seeds are collinear or degenerate") from exc
    H, W = cam.height, cam.width
    yy, xx = np.mgrid[0:H, 0:W]
    simplex = tri.find_simplex(np.stack([xx.ravel() + 0.5, yy.ravel() + 0.5], axis=1)).reshape(H, W)
    inside = simplex >= 0
    sid = np.where(inside, simplex, 0)
    rays = pixel_rays(xx + 0.5, yy + 0.5, cam)
    nn = n[sid]
    den = np.sum(nn * rays, axis=2)
    cos_ray = -den / np.linalg.norm(rays, axis=2)
    ok = inside & (cos_ray > np.sin(np.deg2rad(GRAZING_LIMIT_DEG)))
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(ok, -c[sid] / den, np.nan)
    ok &= np.isfinite(d) & (d > 0)
    depth = np.where(ok, d, np.nan)
    normal = np.where(ok[..., None], nn, 0.0)
    return depth, normal


def init_hypotheses(partial, depth_range: DepthRange, cfg: SeedConfig, cam: CameraIntrinsics,
                    seed: int = 0, n_views: int = 1) -> HypothesisGrid:
    """Complete a partial depth (or ``(depth, normal)``) grid into a full hypothesis grid.

    Seeded pixels: depth times ``1 + N(0, sigma)``, clamped; normal random
    (depth-only input) or the given normal rotated by ``N(0, sigma_n)``
    about a random axis.  Other pixels: uniform depth, random normal.
    """
    H, W = cam.height, cam.width
    if partial is None:
        pdepth, pnormal = np.full((H, W), np.nan), None
    elif isinstance(partial, tuple):
        pdepth, pnormal = partial
    else:
        pdepth, pnormal = partial, None
    pdepth = np.asarray(pdepth, dtype=np.float64)
    if pdepth.shape != (H, W):
        raise InvalidInputError(f"partial grid {pdepth.shape} does not match camera {H}x{W}")
    pix = np.arange(H * W, dtype=np.uint64)
    yy, xx = np.divmod(np.arange(H * W), W)
    rays = pixel_rays(xx + 0.5, yy + 0.5, cam)
    t = rng.TAG_INIT

    u = rng.uniform(seed, t, 0, pix, 0)
    rand_depth = depth_range.d_min + (depth_range.d_max - depth_range.d_min) * u
    rand_normal = _face(_sphere(rng.uniform(seed, t, 0, pix, 1), rng.uniform(seed, t, 0, pix, 2)), rays)

    seeded = np.isfinite(pdepth.ravel())
    noisy = pdepth.ravel() * (1.0 + cfg.depth_sigma * rng.normal(seed, t, 0, pix, 2))
    depth = np.where(seeded, depth_range.clamp(np.where(seeded, noisy, 1.0)), rand_depth)

    normal = rand_normal
    if pnormal is not None:
        pn = np.asarray(pnormal, dtype=np.float64).reshape(-1, 3)
        axis = _sphere(rng.uniform(seed, t, 0, pix, 6), rng.uniform(seed, t, 0, pix, 7))
        ang = cfg.normal_sigma * rng.normal(seed, t, 0, pix, 4)
        rot = rotate_about_axis(pn, axis, ang)
        rn = np.linalg.norm(rot, axis=1, keepdims=True)
        rot = rot / np.where(rn > 0, rn, 1.0)
        rot = np.where(((rot * rays).sum(axis=1) < 0)[:, None], rot, _face(pn, rays))
        has_n = seeded & (np.linalg.norm(pn, axis=1) > 0.5)
        normal = np.where(has_n[:, None], rot, rand_normal)
    return HypothesisGrid.from_hypotheses(depth.reshape(H, W), normal.reshape(H, W, 3), n_views)


def initial_grid(seeds: SeedSet | None, cfg: SeedConfig, cam: CameraIntrinsics, depth_range: DepthRange,
                 seed: int = 0, n_views: int = 1) -> HypothesisGrid:
    """Seeds to a full grid according to ``cfg.mode``, falling back to densify then random."""
    partial = None
    if seeds is not None and len(seeds) and cfg.mode != "random":
        if cfg.mode == "triangulate":
            try:
                partial = triangulate_seeds(seeds, cam)
            except TriangulationError as exc:
                log.warning("frame %d: %s; densifying instead", seeds.frame_id, exc)
        if partial is None:
            partial = densify(seeds, cfg.radius, (cam.height, cam.width))
    return init_hypotheses(partial, depth_range, cfg, cam, seed=seed, n_views=n_views)


def scale_seeds(seeds: SeedSet, factor: int, cam: CameraIntrinsics) -> SeedSet:
    """Seeds re-indexed onto a level downscaled by ``factor`` (later duplicates win)."""
    if factor == 1 or len(seeds) == 0:
        return seeds
    pts = np.stack([(seeds.xs + 0.5) / factor, (seeds.ys + 0.5) / factor, seeds.depths], axis=1)
    pts = pts[np.argsort(-seeds.depths, kind="stable")]  # nearer seeds written last
    dr = DepthRange(float(seeds.depths.min()) * 0.5, float(seeds.depths.max()) * 2.0)
    out = SeedSet.from_points(pts, cam, dr, frame_id=seeds.frame_id)
    out.tags = [seeds.tags[0] if seeds.tags else "slam"] * len(out)
    return out
