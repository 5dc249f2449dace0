"""Confidence maps and confidence-weighted global smoothing of depth and normal maps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import median_filter

from . import _backend
from ._pykernels import _face
from .errors import InvalidInputError
from .geometry import CameraIntrinsics, DepthRange, pixel_rays

log = logging.getLogger(__name__)


@dataclass
class RefineParams:
    lam_s: float = 1.0
    max_sweeps: int = 400
    tol: float = 1e-4
    c_lo: float = 0.2
    c_hi: float = 1.0
    median: bool = True

    def __post_init__(self):
        if self.lam_s < 0:
            raise InvalidInputError("smoothness weight must be >= 0")
        if not self.c_lo < self.c_hi:
            raise InvalidInputError("need c_lo < c_hi")
        if self.max_sweeps < 0 or self.tol < 0:
            raise InvalidInputError("sweep cap and tolerance must be >= 0")


@dataclass
class RefineResult:
    depth: np.ndarray
    normal: np.ndarray
    sweeps: int
    energies: list = field(default_factory=list)


def confidence_from_cost(cost, c_lo: float = 0.2, c_hi: float = 1.0) -> np.ndarray:
    """Linear map of cost onto [0, 1]: 1 at or below ``c_lo``, 0 at or above ``c_hi``."""
    cost = np.asarray(cost, dtype=np.float64)
    if not np.all(np.isfinite(cost)):
        raise InvalidInputError("costs must be finite")
    return np.clip((c_hi - cost) / (c_hi - c_lo), 0.0, 1.0)


def confident_median(depth, conf) -> np.ndarray:
    """3x3 median over the neighbours with positive confidence (plain 3x3 median
    where none is confident), so unreliable pixels cannot drag reliable ones."""
    depth = np.asarray(depth, dtype=np.float64)
    plain = median_filter(depth, size=3, mode="nearest")
    win = sliding_window_view(np.pad(np.where(conf > 0, depth, np.nan), 1, mode="edge"), (3, 3))
    win = win.reshape(depth.shape + (9,))
    has = np.any(np.isfinite(win), axis=2)
    out = plain.copy()
    out[has] = np.nanmedian(win[has], axis=1)
    return out


def edge_weights(image) -> tuple[np.ndarray, np.ndarray]:
    """Color weights ``exp(-|I(q) - I(p)|)`` of horizontal ``(H, W-1)`` and vertical ``(H-1, W)`` edges."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    wr = np.exp(-np.sqrt(np.sum((img[:, 1:] - img[:, :-1]) ** 2, axis=2)))
    wd = np.exp(-np.sqrt(np.sum((img[1:] - img[:-1]) ** 2, axis=2)))
    return np.ascontiguousarray(wr), np.ascontiguousarray(wd)


def refine_energy(depth, d0, conf, wr, wd, lam: float) -> float:
    data = np.sum(conf * (depth - d0) ** 2)
    smooth = np.sum(wr * (depth[:, 1:] - depth[:, :-1]) ** 2) + np.sum(wd * (depth[1:] - depth[:-1]) ** 2)
    return float(data + lam * smooth)


def relax(d0, conf, wr, wd, lam: float, max_sweeps: int = 400, tol: float = 1e-4, init=None,
          threads: int = 1, trace: bool = False):
    """Red/black Gauss-Seidel on the quadratic energy; stops when the mean absolute
    update falls below ``tol`` times the mean absolute depth.  Returns ``(depth, sweeps, energies)``."""
    d0 = np.ascontiguousarray(d0, dtype=np.float64)
    conf = np.ascontiguousarray(conf, dtype=np.float64)
    depth = np.array(d0 if init is None else init, dtype=np.float64, copy=True)
    k = _backend.kernels
    energies = [refine_energy(depth, d0, conf, wr, wd, lam)] if trace else []
    sweeps = 0
    scale = max(float(np.mean(np.abs(d0))), 1e-300)
    for sweeps in range(1, max_sweeps + 1):
        prev = depth.copy()
        k.refine_half_sweep(depth, d0, conf, wr, wd, lam, 0, threads)
        k.refine_half_sweep(depth, d0, conf, wr, wd, lam, 1, threads)
        if trace:
            energies.append(refine_energy(depth, d0, conf, wr, wd, lam))
        if np.mean(np.abs(depth - prev)) <= tol * scale:
            break
    return depth, sweeps, energies


def fit_normals(depth, cam: CameraIntrinsics) -> np.ndarray:
    """Camera-facing normals from a PCA plane fit over each 3x3 neighbourhood of backprojected points."""
    H, W = depth.shape
    yy, xx = np.mgrid[0:H, 0:W]
    rays = pixel_rays(xx + 0.5, yy + 0.5, cam)
    X = depth[..., None] * rays
    valid = (depth > 0).astype(np.float64)
    pad = lambda a: np.pad(a, [(1, 1), (1, 1)] + [(0, 0)] * (a.ndim - 2))
    Xp = pad(X * valid[..., None])
    vp = pad(valid)
    cnt = np.zeros((H, W))
    s1 = np.zeros((H, W, 3))
    s2 = np.zeros((H, W, 3, 3))
    for dy in range(3):
        for dx in range(3):
            x = Xp[dy:dy + H, dx:dx + W]
            cnt += vp[dy:dy + H, dx:dx + W]
            s1 += x
            s2 += x[..., :, None] * x[..., None, :]
    mean = s1 / np.maximum(cnt, 1)[..., None]
    cov = s2 / np.maximum(cnt, 1)[..., None, None] - mean[..., :, None] * mean[..., None, :]
    _, vecs = np.linalg.eigh(cov)
    n = vecs[..., :, 0]
    n = np.where((cnt >= 3)[..., None], n, -rays / np.linalg.norm(rays, axis=2, keepdims=True))
    return _face(n, rays)


def global_refine(depth, normal, conf, image, cam: CameraIntrinsics, depth_range: DepthRange,
                  params: RefineParams | None = None, threads: int = 1, trace: bool = False) -> RefineResult:
    """Smooth ``depth`` toward confident values, then re-derive normals from it.

    Minimises ``sum conf (d - d0)^2 + lam_s sum w (d_p - d_q)^2`` over
    4-connected edges.  ``d0`` is the confidence-aware 3x3 median of
    the input when ``params.median`` is set.  New normals blend the input (weight
    ``conf``) with normals fitted to the refined depth.
    """
    params = params or RefineParams()
    depth = np.asarray(depth, dtype=np.float64)
    conf = np.asarray(conf, dtype=np.float64)
    if depth.shape != conf.shape or depth.shape != np.shape(normal)[:2] or depth.shape != np.shape(image)[:2]:
        raise InvalidInputError("depth, normal, confidence and image must share dimensions")
    if not np.any(conf > 0):
        log.debug("all-zero confidence: refinement reduces to pure smoothing")
    d0 = confident_median(depth, conf) if params.median else depth.copy()
    wr, wd = edge_weights(image)
    refined, sweeps, energies = relax(d0, conf, wr, wd, params.lam_s, params.max_sweeps, params.tol,
                                      threads=threads, trace=trace)
    refined = depth_range.clamp(refined)
    fitted = fit_normals(refined, cam)
    blend = conf[..., None] * np.asarray(normal, dtype=np.float64) + (1.0 - conf[..., None]) * fitted
    bn = np.linalg.norm(blend, axis=2, keepdims=True)
    blend = np.where(bn > 1e-12, blend / np.where(bn > 1e-12, bn, 1.0), fitted)
    H, W = depth.shape
    yy, xx = np.mgrid[0:H, 0:W]
    blend = _face(blend, pixel_rays(xx + 0.5, yy + 0.5, cam))
    return RefineResult(np.ascontiguousarray(refined), np.ascontiguousarray(blend), sweeps, energies)
