"""Image pyramids, joint bilateral upsampling of hypotheses and random detail restoration."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from . import _backend, rng
from ._pykernels import _face, _sphere
from .errors import InvalidInputError
from .frames import CameraFrame
from .geometry import CameraIntrinsics, DepthRange, pixel_rays
from .matcher import HypothesisGrid, MatchContext, aggregate_cost, update_view_weights

log = logging.getLogger(__name__)

N_LEVELS = 3
MIN_COARSE_SIZE = 32
BLUR_SIGMA = 0.8


@dataclass
class Pyramid:
    """Frames ordered from coarsest to finest (full resolution last)."""

    levels: list

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, i) -> CameraFrame:
        return self.levels[i]

    @property
    def finest(self) -> CameraFrame:
        return self.levels[-1]

    @property
    def coarsest(self) -> CameraFrame:
        return self.levels[0]


def downsample(image: np.ndarray, sigma: float = BLUR_SIGMA) -> np.ndarray:
    """Gaussian blur then 2x2 box decimation; odd sizes are edge-padded (output ``ceil(n/2)``)."""
    img = np.asarray(image, dtype=np.float64)
    sig = (sigma, sigma) + (0,) * (img.ndim - 2)
    blurred = gaussian_filter(img, sig, mode="nearest")
    H, W = img.shape[:2]
    pad = [(0, H % 2), (0, W % 2)] + [(0, 0)] * (img.ndim - 2)
    b = np.pad(blurred, pad, mode="edge")
    return 0.25 * (b[0::2, 0::2] + b[1::2, 0::2] + b[0::2, 1::2] + b[1::2, 1::2])


def build_pyramid(frame: CameraFrame, n_levels: int = N_LEVELS, min_size: int = MIN_COARSE_SIZE) -> Pyramid:
    if n_levels < 1:
        raise InvalidInputError("need at least one pyramid level")
    cam = frame.cam
    shift = n_levels - 1
    cw = -(-cam.width // 2**shift)
    ch = -(-cam.height // 2**shift)
    if min(cw, ch) < min_size:
        raise InvalidInputError(
            f"frame {frame.frame_id}: {cam.width}x{cam.height} gives a {cw}x{ch} coarsest level, "
            f"below the {min_size}x{min_size} minimum")
    levels = [frame]
    img = frame.image
    for k in range(1, n_levels):
        img = downsample(img)
        levels.append(CameraFrame(img, cam.downscaled(k), frame.pose, frame.frame_id))
    return Pyramid(levels[::-1])


def joint_bilateral_upsample(coarse: HypothesisGrid, fine_image, coarse_image, fine_cam: CameraIntrinsics,
                             depth_range: DepthRange, sigma_s: float = 1.0, sigma_r: float = 0.1,
                             radius: int = 2) -> HypothesisGrid:
    """Edge-aware 2x upsampling of a hypothesis grid.

    Each fine pixel averages the coarse hypotheses of the 5x5 coarse window
    around it, weighted by coarse-pixel distance and by the color difference
    between the fine pixel and each coarse pixel.
    """
    fine_image = np.asarray(fine_image, dtype=np.float64)
    coarse_image = np.asarray(coarse_image, dtype=np.float64)
    if fine_image.ndim == 2:
        fine_image = fine_image[..., None]
    if coarse_image.ndim == 2:
        coarse_image = coarse_image[..., None]
    Hc, Wc = coarse.shape
    Hf, Wf = fine_image.shape[:2]
    if coarse_image.shape[:2] != (Hc, Wc):
        raise InvalidInputError("coarse image and coarse grid differ in size")
    if (-(-Hf // 2), -(-Wf // 2)) != (Hc, Wc) or (Wf, Hf) != (fine_cam.width, fine_cam.height):
        raise InvalidInputError(f"fine size {Wf}x{Hf} is not a 2x upscale of {Wc}x{Hc}")

    yy, xx = np.mgrid[0:Hf, 0:Wf]
    # fine pixel centre in coarse index space
    uc = (xx + 0.5) / 2.0 - 0.5
    vc = (yy + 0.5) / 2.0 - 0.5
    bx = xx // 2
    by = yy // 2
    wsum = np.zeros((Hf, Wf))
    dsum = np.zeros((Hf, Wf))
    nsum = np.zeros((Hf, Wf, 3))
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            qx = bx + dx
            qy = by + dy
            ok = (qx >= 0) & (qx < Wc) & (qy >= 0) & (qy < Hc)
            qxc = np.clip(qx, 0, Wc - 1)
            qyc = np.clip(qy, 0, Hc - 1)
            ws = np.exp(-((qxc - uc) ** 2 + (qyc - vc) ** 2) / (2 * sigma_s**2))
            diff = fine_image - coarse_image[qyc, qxc]
            wr = np.exp(-np.sum(diff * diff, axis=2) / (2 * sigma_r**2))
            w = np.where(ok, ws * wr, 0.0)
            wsum += w
            dsum += w * coarse.depth[qyc, qxc]
            nsum += w[..., None] * coarse.normal[qyc, qxc]
    near_d = coarse.depth[by, bx]
    near_n = coarse.normal[by, bx]
    good = wsum > 1e-300
    depth = np.where(good, dsum / np.where(good, wsum, 1.0), near_d)
    nn = np.linalg.norm(nsum, axis=2, keepdims=True)
    normal = np.where((good[..., None]) & (nn > 1e-12), nsum / np.where(nn > 1e-12, nn, 1.0), near_n)
    rays = pixel_rays(xx + 0.5, yy + 0.5, fine_cam)
    normal = _face(normal, rays)
    depth = depth_range.clamp(depth)
    return HypothesisGrid.from_hypotheses(depth, normal, coarse.n_views)


def detail_restore(grid: HypothesisGrid, ctx: MatchContext, margin: float = 0.1, n_trials: int = 4,
                   seed: int | None = None, salt: int = 0) -> np.ndarray:
    """Replace hypotheses that a random hypothesis beats by more than ``margin``.

    Each pixel draws ``n_trials`` random hypotheses and keeps the best; the
    comparison uses the incumbent's view weights.  Updates ``grid`` in place
    (costs refreshed) and returns the boolean replacement mask.
    """
    H, W = grid.shape
    kernels = _backend.kernels
    seed = ctx.args.seed if seed is None else seed
    yy, xx = np.mgrid[0:H, 0:W]
    ys, xs = yy.ravel(), xx.ravel()
    vc = kernels.photo_costs(ctx.args, ys, xs, grid.depth.ravel(), grid.normal.reshape(-1, 3))
    w = update_view_weights(vc)
    cur = aggregate_cost(vc, w)
    grid.view_cost[...] = vc.reshape(H, W, -1)
    grid.weights[...] = w.reshape(H, W, -1)
    grid.photo_cost[...] = cur.reshape(H, W)
    grid.cost[...] = grid.photo_cost
    replaced = np.zeros(H * W, dtype=bool)
    if not np.isfinite(margin) or n_trials <= 0:
        return replaced.reshape(H, W)
    pix = np.arange(H * W, dtype=np.uint64)
    rays = pixel_rays(xs + 0.5, ys + 0.5, ctx.cam)
    dr = ctx.depth_range
    best_c = np.full(H * W, np.inf)
    best_d = np.zeros(H * W)
    best_n = np.zeros((H * W, 3))
    best_v = np.zeros_like(vc)
    for t in range(n_trials):
        it = salt * 64 + t
        d = dr.d_min + (dr.d_max - dr.d_min) * rng.uniform(seed, rng.TAG_RESTORE, it, pix, 0)
        n = _face(_sphere(rng.uniform(seed, rng.TAG_RESTORE, it, pix, 1),
                          rng.uniform(seed, rng.TAG_RESTORE, it, pix, 2)), rays)
        v = kernels.photo_costs(ctx.args, ys, xs, d, n)
        c = aggregate_cost(v, w)
        better = c < best_c
        best_c = np.where(better, c, best_c)
        best_d = np.where(better, d, best_d)
        best_n = np.where(better[:, None], n, best_n)
        best_v = np.where(better[:, None], v, best_v)
    replaced = best_c < cur - margin
    if np.any(replaced):
        r2 = replaced.reshape(H, W)
        grid.depth[r2] = best_d[replaced]
        grid.normal[r2] = best_n[replaced]
        grid.view_cost[r2] = best_v[replaced]
        grid.photo_cost[r2] = best_c[replaced]
        grid.cost[r2] = best_c[replaced]
    log.debug("detail restore replaced %.2f%% of pixels", 100.0 * replaced.mean())
    return replaced.reshape(H, W)


def upsample_hypotheses(coarse: HypothesisGrid, coarse_frame: CameraFrame, fine_frame: CameraFrame,
                        depth_range: DepthRange, **kw) -> HypothesisGrid:
    return joint_bilateral_upsample(coarse, fine_frame.image, coarse_frame.image, fine_frame.cam, depth_range, **kw)
