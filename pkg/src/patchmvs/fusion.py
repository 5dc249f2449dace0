"""Multi-view consistency gating of depth/normal maps and point-cloud output."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _backend
from .errors import InvalidInputError, InvalidOutputError
from .geometry import CameraIntrinsics, Pose, pixel_rays

log = logging.getLogger(__name__)


@dataclass
class FusionParams:
    n_min: int = 2
    gamma: float = 2.0          # forward-backward reprojection, pixels
    epsilon: float = 0.01       # relative depth difference
    theta_deg: float = 10.0     # normal angle
    window: int | None = None   # sources per reference (nearest frames); None = all others

    def __post_init__(self):
        if self.n_min < 1:
            raise InvalidInputError("n_min must be >= 1")
        if self.gamma <= 0 or self.epsilon <= 0:
            raise InvalidInputError("gamma and epsilon must be positive")
        if not 0 < self.theta_deg < 90:
            raise InvalidInputError("theta must lie in (0, 90) degrees")


@dataclass
class FusionView:
    """Final maps of one frame: depth (0 = no estimate), camera-frame normals, color image."""

    depth: np.ndarray
    normal: np.ndarray
    image: np.ndarray
    cam: CameraIntrinsics
    pose: Pose
    frame_id: int = 0

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.normal = np.asarray(self.normal, dtype=np.float64)
        if self.depth.shape != (self.cam.height, self.cam.width) or self.normal.shape[:2] != self.depth.shape:
            raise InvalidInputError(f"frame {self.frame_id}: map sizes do not match the camera")


@dataclass
class FusedCloud:
    points: np.ndarray                    # (N, 3) world frame
    normals: np.ndarray                   # (N, 3) unit
    colors: np.ndarray                    # (N, 3) uint8
    support: np.ndarray                   # (N,) consistent source views per point
    ref_frame: np.ndarray                 # (N,) frame index the point was seeded from
    members: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    # rows of (point index, frame index, pixel index) for every merged observation

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls) -> "FusedCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3), dtype=np.uint8),
                   np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))


def _points(view: FusionView, xs, ys):
    rays = pixel_rays(xs + 0.5, ys + 0.5, view.cam)
    Xc = view.depth[ys, xs][:, None] * rays
    return view.pose.apply(Xc), view.normal[ys, xs] @ view.pose.rotation.T


def observe(ref: FusionView, src: FusionView, xs, ys, params: FusionParams):
    """Test reference pixels ``(xs, ys)`` against one source.

    Returns ``(consistent, src_lin)``: the three-way gate result and the
    linear index of the source pixel the point lands in (-1 if outside).
    """
    xs = np.asarray(xs, dtype=np.int64)
    ys = np.asarray(ys, dtype=np.int64)
    Xw, nw = _points(ref, xs, ys)
    inv = src.pose.inverse()
    Xs = inv.apply(Xw)
    z = Xs[:, 2]
    front = z > 0
    zs = np.where(front, z, 1.0)
    cam = src.cam
    u = cam.fx * Xs[:, 0] / zs + cam.cx
    v = cam.fy * Xs[:, 1] / zs + cam.cy
    iu = np.floor(u).astype(np.int64)
    iv = np.floor(v).astype(np.int64)
    inb = front & (iu >= 0) & (iu < cam.width) & (iv >= 0) & (iv < cam.height)
    iuc = np.where(inb, iu, 0)
    ivc = np.where(inb, iv, 0)
    ds = src.depth[ivc, iuc]
    ok = inb & (ds > 0)
    # source observation back into the reference
    Xsw, nsw = _points(src, iuc, ivc)
    Xr = ref.pose.inverse().apply(Xsw)
    zr = Xr[:, 2]
    zrs = np.where(zr > 0, zr, 1.0)
    ru = ref.cam.fx * Xr[:, 0] / zrs + ref.cam.cx
    rv = ref.cam.fy * Xr[:, 1] / zrs + ref.cam.cy
    reproj = np.hypot(ru - (xs + 0.5), rv - (ys + 0.5))
    rel = np.abs(z - ds) / np.where(ds > 0, ds, 1.0)
    cosang = np.clip(np.sum(nw * nsw, axis=1), -1.0, 1.0)
    consistent = (ok & (zr > 0) & (reproj < params.gamma) & (rel < params.epsilon)
                  & (cosang > np.cos(np.deg2rad(params.theta_deg))))
    lin = np.where(inb, ivc * cam.width + iuc, -1)
    return consistent, lin


def check_consistency(p, ref: FusionView, src: FusionView, params: FusionParams) -> bool:
    """Whether the reference estimate at pixel ``p = (x, y)`` is confirmed by ``src``."""
    ok, _ = observe(ref, src, np.array([int(p[0])]), np.array([int(p[1])]), params)
    return bool(ok[0])


def fusion_sources(i: int, n: int, window: int | None) -> list[int]:
    others = [j for j in range(n) if j != i]
    if window is None:
        return others
    return sorted(sorted(others, key=lambda j: (abs(j - i), j))[:window])


def fuse(views: list[FusionView], params: FusionParams | None = None) -> FusedCloud:
    """Sequentially turn every unconsumed reference pixel with at least ``n_min``
    consistent source observations into one point averaged over itself and
    the consistent observations no earlier point has consumed."""
    params = params or FusionParams()
    kernels = _backend.kernels
    if not views:
        return FusedCloud.empty()
    sizes = {v.depth.size for v in views}
    npix = max(sizes)
    consumed = np.zeros((len(views), npix), dtype=np.uint8)
    pts, nrm, col, sup, refs, members = [], [], [], [], [], []
    n_out = 0
    for i, ref in enumerate(views):
        srcs = fusion_sources(i, len(views), params.window)
        if len(srcs) < params.n_min:
            continue
        H, W = ref.depth.shape
        ys, xs = np.nonzero(ref.depth > 0)
        ref_lin = ys * W + xs
        keep = consumed[i, ref_lin] == 0
        ys, xs, ref_lin = ys[keep], xs[keep], ref_lin[keep]
        if len(xs) == 0:
            continue
        cons = np.zeros((len(xs), len(srcs)), dtype=bool)
        slin = np.zeros((len(xs), len(srcs)), dtype=np.int64)
        for k, j in enumerate(srcs):
            c, lin = observe(ref, views[j], xs, ys, params)
            cons[:, k] = c
            slin[:, k] = np.maximum(lin, 0)
        emit, used = kernels.fuse_claim(cons, np.asarray(srcs, dtype=np.int64), slin, i, ref_lin,
                                        consumed, params.n_min)
        if not np.any(emit):
            continue
        Xr, nr = _points(ref, xs[emit], ys[emit])
        sumX = Xr.copy()
        sumN = nr.copy()
        cnt = np.ones(int(emit.sum()))
        u_emit = used[emit]
        l_emit = slin[emit]
        for k, j in enumerate(srcs):
            m = u_emit[:, k]
            if not np.any(m):
                continue
            sv = views[j]
            sy, sx = np.divmod(l_emit[m, k], sv.depth.shape[1])
            Xs, ns = _points(sv, sx, sy)
            sumX[m] += Xs
            sumN[m] += ns
            cnt[m] += 1
        nn = np.linalg.norm(sumN, axis=1, keepdims=True)
        pts.append(sumX / cnt[:, None])
        nrm.append(sumN / np.where(nn > 0, nn, 1.0))
        rgb = np.asarray(ref.image, dtype=np.float64)
        if rgb.ndim == 2:
            rgb = np.repeat(rgb[..., None], 3, axis=2)
        col.append(np.clip(np.round(rgb[ys[emit], xs[emit]] * 255.0), 0, 255).astype(np.uint8))
        sup.append(cons[emit].sum(axis=1))
        refs.append(np.full(int(emit.sum()), i))
        idx = n_out + np.arange(len(u_emit))
        members.append(np.stack([idx, np.full(len(idx), i), ref_lin[emit]], axis=1))
        rr, kk = np.nonzero(u_emit)
        members.append(np.stack([idx[rr], np.asarray(srcs)[kk], l_emit[rr, kk]], axis=1))
        n_out += len(u_emit)
        log.debug("fusion: frame %d emitted %d points", views[i].frame_id, int(emit.sum()))
    if not pts:
        return FusedCloud.empty()
    return FusedCloud(np.concatenate(pts), np.concatenate(nrm), np.concatenate(col),
                      np.concatenate(sup), np.concatenate(refs), np.concatenate(members).astype(np.int64))


def write_ply(cloud: FusedCloud, path) -> None:
    """Binary little-endian PLY with float32 xyz/normals and uint8 colors."""
    path = Path(path)
    if not (np.all(np.isfinite(cloud.points)) and np.all(np.isfinite(cloud.normals))):
        raise InvalidOutputError(f"{path}: non-finite point data")
    dt = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4"),
                   ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    rec = np.empty(len(cloud), dtype=dt)
    for i, k in enumerate("xyz"):
        rec[k] = cloud.points[:, i]
        rec["n" + k] = cloud.normals[:, i]
    for i, k in enumerate(("red", "green", "blue")):
        rec[k] = cloud.colors[:, i]
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(cloud)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property float nx\nproperty float ny\nproperty float nz\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(rec.tobytes())


def read_ply(path) -> FusedCloud:
    """Reader for the files :func:`write_ply` produces."""
    data = Path(path).read_bytes()
    end = data.index(b"end_header\n") + len(b"end_header\n")
    header = data[:end].decode("ascii").splitlines()
    n = next(int(line.split()[2]) for line in header if line.startswith("element vertex"))
    dt = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4"),
                   ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    rec = np.frombuffer(data, dtype=dt, count=n, offset=end)
    pts = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    nrm = np.stack([rec["nx"], rec["ny"], rec["nz"]], axis=1).astype(np.float64)
    col = np.stack([rec["red"], rec["green"], rec["blue"]], axis=1)
    return FusedCloud(pts, nrm, col, np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64))
