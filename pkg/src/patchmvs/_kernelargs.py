"""Flat array bundle handed to the hot kernels of either backend."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MODE_PHOTO = 0
MODE_PLANAR = 1
MODE_GEOM = 2


def patch_offsets(radius: int, step: int = 2) -> np.ndarray:
    """Sparse square window: offsets ``-radius, -radius+step, ..., radius``."""
    r = np.arange(-radius, radius + 1, step)
    dy, dx = np.meshgrid(r, r, indexing="ij")
    return np.stack([dx.ravel(), dy.ravel()], axis=1).astype(np.int64)


def _region_offsets():
    """The eight checkerboard sampling regions.

    Four diagonal near regions (odd Manhattan distance up to 5, off-axis)
    and four axis-aligned far strips (odd distances 1..21).  Every offset
    has odd Manhattan length, so it always lands on the other color.
    """
    regions = []
    for sy in (-1, 1):
        for sx in (-1, 1):
            offs = [(sx * a, sy * b) for a in range(1, 5) for b in range(1, 5)
                    if (a + b) % 2 == 1 and a + b <= 5]
            regions.append(offs)
    for dx, dy in ((0, -1), (0, 1), (-1, 0), (1, 0)):
        regions.append([(dx * k, dy * k) for k in range(1, 22, 2)])
    width = max(len(r) for r in regions)
    out = np.zeros((8, width, 2), dtype=np.int64)
    counts = np.zeros(8, dtype=np.int64)
    for i, r in enumerate(regions):
        out[i, : len(r)] = r
        counts[i] = len(r)
    return out, counts


REGION_OFFSETS, REGION_COUNTS = _region_offsets()


@dataclass
class KernelArgs:
    """Everything a per-pixel cost evaluation needs, as contiguous arrays."""

    ref: np.ndarray            # (H, W) reference intensity
    ref_color: np.ndarray      # (H, W, 3) reference color in [0, 1]
    src: np.ndarray            # (K, H, W) source intensities
    cam: np.ndarray            # (fx, fy, cx, cy), shared by all views at this level
    rot: np.ndarray            # (K, 3, 3) source-from-reference rotation
    trans: np.ndarray          # (K, 3)
    rot_inv: np.ndarray        # (K, 3, 3) reference-from-source rotation
    trans_inv: np.ndarray      # (K, 3)
    d_min: float
    d_max: float
    radius: int = 3
    step: int = 2
    mode: int = MODE_PHOTO
    src_depth: np.ndarray | None = None    # (K, H, W) for the geometric stage
    cons_depth: np.ndarray | None = None   # (H, W) frozen depths for the consistency term
    prior_depth: np.ndarray | None = None  # (H, W), NaN where no prior
    prior_normal: np.ndarray | None = None  # (H, W, 3)
    lam_planar: float = 0.2
    planar_td: float = 0.2
    planar_ta: float = np.deg2rad(30.0)
    lam_rep: float = 0.1
    lam_cons: float = 0.1
    tau: float = 2.0
    omega_radius: int = 2
    seed: int = 0
    threads: int = 1
    offsets: np.ndarray = field(init=False)

    def __post_init__(self):
        f64 = lambda a: np.ascontiguousarray(a, dtype=np.float64)
        self.ref = f64(self.ref)
        self.ref_color = f64(self.ref_color)
        self.src = f64(self.src)
        self.cam = f64(self.cam)
        self.rot = f64(self.rot)
        self.trans = f64(self.trans)
        self.rot_inv = f64(self.rot_inv)
        self.trans_inv = f64(self.trans_inv)
        H, W = self.ref.shape
        K = self.src.shape[0]
        if self.src_depth is None:
            self.src_depth = np.zeros((K, H, W))
        if self.cons_depth is None:
            self.cons_depth = np.zeros((H, W))
        if self.prior_depth is None:
            self.prior_depth = np.full((H, W), np.nan)
        if self.prior_normal is None:
            self.prior_normal = np.zeros((H, W, 3))
        self.src_depth = f64(self.src_depth)
        self.cons_depth = f64(self.cons_depth)
        self.prior_depth = f64(self.prior_depth)
        self.prior_normal = f64(self.prior_normal)
        self.offsets = patch_offsets(self.radius, self.step)

    @property
    def shape(self):
        return self.ref.shape

    @property
    def n_views(self) -> int:
        return self.src.shape[0]
