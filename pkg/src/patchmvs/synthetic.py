"""Ray-cast renderer for analytic textured scenes.

Scenes are collections of (optionally bounded) planes and axis-aligned
boxes carrying procedural value-noise texture.  Ground-truth depth and
normals come straight from the analytic ray intersection, which makes the
renderer the oracle for the end-to-end tests.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidSceneError, ParseError
from .geometry import CameraIntrinsics, Pose, pixel_rays

TEXTURE_AMPLITUDE = 0.5
TEXTURE_OCTAVES = 4


def _hash2(ix, iy, seed):
    with np.errstate(over="ignore"):
        h = (ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)) ^ (
            iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
        )
        h ^= np.uint64(seed) * np.uint64(0x165667B19E3779F9)
        h = (h ^ (h >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        h = (h ^ (h >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        h ^= h >> np.uint64(31)
    return (h >> np.uint64(11)).astype(np.float64) / 9007199254740992.0


def value_noise(s, t, cell: float, seed: int, octaves: int = TEXTURE_OCTAVES) -> np.ndarray:
    """Multi-octave value noise in [0, 1] with quintic (C2) interpolation."""
    total = np.zeros(np.broadcast(s, t).shape)
    norm = 0.0
    amp = 1.0
    for o in range(octaves):
        a = np.asarray(s) / cell
        b = np.asarray(t) / cell
        i0 = np.floor(a)
        j0 = np.floor(b)
        fa = a - i0
        fb = b - j0
        fa = fa * fa * fa * (fa * (fa * 6 - 15) + 10)
        fb = fb * fb * fb * (fb * (fb * 6 - 15) + 10)
        i0 = i0.astype(np.int64)
        j0 = j0.astype(np.int64)
        sd = seed * 131 + o
        v00 = _hash2(i0, j0, sd)
        v10 = _hash2(i0 + 1, j0, sd)
        v01 = _hash2(i0, j0 + 1, sd)
        v11 = _hash2(i0 + 1, j0 + 1, sd)
        total += amp * ((v00 * (1 - fa) + v10 * fa) * (1 - fb) + (v01 * (1 - fa) + v11 * fa) * fb)
        norm += amp
        amp *= 0.5
        cell *= 0.5
    return total / norm


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


@dataclass
class PlaneSurface:
    """A plane through ``point`` with unit ``normal``.

    ``u_axis`` spans texture coordinates together with ``normal x u_axis``;
    ``extent`` optionally bounds the plane to a rectangle of half sizes
    ``(a, b)`` along those axes; ``band`` makes texture constant for
    ``band[0] <= u <= band[1]``.
    """

    point: np.ndarray
    normal: np.ndarray
    u_axis: np.ndarray | None = None
    extent: tuple | None = None
    texture_seed: int = 0
    cell: float = 0.4
    color: tuple = (1.0, 1.0, 1.0)
    band: tuple | None = None

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=np.float64)
        self.normal = _unit(self.normal)
        if self.u_axis is None:
            helper = np.array([0.0, 1.0, 0.0]) if abs(self.normal[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
            self.u_axis = np.cross(helper, self.normal)
        u = np.asarray(self.u_axis, dtype=np.float64)
        u = u - self.normal * (u @ self.normal)
        self.u_axis = _unit(u)

    @property
    def v_axis(self):
        return np.cross(self.normal, self.u_axis)

    def intersect(self, origin, dirs):
        """Ray parameter ``t`` per direction (inf where missed)."""
        denom = dirs @ self.normal
        num = (self.point - origin) @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(np.abs(denom) > 1e-12, num / denom, np.inf)
        t = np.where(t > 1e-9, t, np.inf)
        if self.extent is not None:
            X = origin + dirs * np.where(np.isfinite(t), t, 0.0)[..., None]
            rel = X - self.point
            a = rel @ self.u_axis
            b = rel @ self.v_axis
            inside = (np.abs(a) <= self.extent[0]) & (np.abs(b) <= self.extent[1])
            t = np.where(inside, t, np.inf)
        return t

    def texture(self, X):
        rel = X - self.point
        s = rel @ self.u_axis
        t = rel @ self.v_axis
        val = 0.5 - TEXTURE_AMPLITUDE / 2 + TEXTURE_AMPLITUDE * value_noise(s, t, self.cell, self.texture_seed)
        if self.band is not None:
            val = np.where((s >= self.band[0]) & (s <= self.band[1]), 0.5, val)
        return val

    def contains_point(self, X) -> bool:
        return abs(float((np.asarray(X) - self.point) @ self.normal)) < 1e-9


@dataclass
class BoxSurface:
    """Axis-aligned box rendered as six bounded faces."""

    center: np.ndarray
    size: np.ndarray
    texture_seed: int = 0
    cell: float = 0.4
    color: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.size = np.asarray(self.size, dtype=np.float64)

    def faces(self):
        half = self.size / 2
        out = []
        for axis in range(3):
            for sign in (-1.0, 1.0):
                n = np.zeros(3)
                n[axis] = sign
                p = self.center + n * half[axis]
                others = [a for a in range(3) if a != axis]
                u = np.zeros(3)
                u[others[0]] = 1.0
                # n x u lies along the remaining axis, so the extents follow (others[0], others[1])
                face = PlaneSurface(p, n, u_axis=u, extent=(half[others[0]], half[others[1]]),
                                    texture_seed=self.texture_seed * 7 + axis * 2 + int(sign > 0),
                                    cell=self.cell, color=self.color)
                out.append(face)
        return out

    def contains_point(self, X) -> bool:
        return bool(np.all(np.abs(np.asarray(X) - self.center) < self.size / 2))


@dataclass
class SyntheticScene:
    surfaces: list
    poses: list
    light_dir: np.ndarray = field(default_factory=lambda: np.array([0.3, -1.0, -0.4]))
    ambient: float = 0.5

    def planes(self):
        out = []
        for s in self.surfaces:
            out.extend(s.faces() if isinstance(s, BoxSurface) else [s])
        return out


@dataclass
class RenderedView:
    image: np.ndarray   # (H, W, 3) in [0, 1]
    pose: Pose
    depth: np.ndarray   # (H, W), 0 where no surface
    normal: np.ndarray  # (H, W, 3) camera frame, facing the camera
    surface_id: np.ndarray  # (H, W) index into scene.planes(), -1 for background


def render_view(scene: SyntheticScene, cam: CameraIntrinsics, pose: Pose) -> RenderedView:
    for s in scene.surfaces:
        if isinstance(s, BoxSurface) and s.contains_point(pose.translation):
            raise InvalidSceneError(f"camera at {pose.translation} is inside a box")
        if isinstance(s, PlaneSurface) and s.contains_point(pose.translation):
            raise InvalidSceneError(f"camera at {pose.translation} lies on a plane")
    H, W = cam.height, cam.width
    yy, xx = np.mgrid[0:H, 0:W]
    rays = pixel_rays(xx + 0.5, yy + 0.5, cam)  # z = 1, so t equals camera depth
    dirs = rays @ pose.rotation.T
    origin = pose.translation
    planes = scene.planes()
    best_t = np.full((H, W), np.inf)
    best_id = np.full((H, W), -1)
    for i, pl in enumerate(planes):
        t = pl.intersect(origin, dirs)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_id = np.where(closer, i, best_id)
    hit = np.isfinite(best_t)
    depth = np.where(hit, best_t, 0.0)
    X = origin + dirs * depth[..., None]
    light = _unit(scene.light_dir)
    image = np.zeros((H, W, 3))
    normal_w = np.zeros((H, W, 3))
    for i, pl in enumerate(planes):
        m = best_id == i
        if not np.any(m):
            continue
        n = pl.normal
        # face the camera
        facing = np.where((dirs[m] @ n)[:, None] > 0, -n, n)
        normal_w[m] = facing
        shade = scene.ambient + (1 - scene.ambient) * np.abs(light @ n)
        tex = pl.texture(X[m])
        image[m] = np.clip(tex[:, None] * shade * np.asarray(pl.color)[None, :], 0.0, 1.0)
    normal_c = normal_w @ pose.rotation
    return RenderedView(image=image, pose=pose, depth=depth, normal=normal_c, surface_id=best_id)


def render_scene(scene: SyntheticScene, cam: CameraIntrinsics) -> list[RenderedView]:
    """Render every pose of the scene; raises if a camera sees too little geometry."""
    views = []
    for k, pose in enumerate(scene.poses):
        v = render_view(scene, cam, pose)
        coverage = float(np.mean(v.depth > 0))
        if coverage < 0.5:
            raise InvalidSceneError(f"camera {k} sees only {coverage:.0%} of the scene")
        views.append(v)
    return views


def lateral_trajectory(n_views: int, baseline: float, start=(0.0, 0.0, 0.0)) -> list[Pose]:
    """Cameras looking down +z, stepping ``baseline`` meters along +x."""
    start = np.asarray(start, dtype=np.float64)
    return [Pose(np.eye(3), start + np.array([k * baseline, 0.0, 0.0])) for k in range(n_views)]


def textured_plane_scene(n_views: int = 5, baseline: float = 0.3, depth: float = 6.0,
                         tilt_deg: float = 25.0, band_width: float | None = None,
                         texture_seed: int = 7, cell: float = 0.4) -> SyntheticScene:
    """One slanted textured plane in front of a lateral camera rig.

    The plane passes through ``(mid_x, 0, depth)`` where ``mid_x`` is the
    rig's center, tilted by ``tilt_deg`` about the vertical axis.  With
    ``band_width`` a textureless vertical band of that world width is
    centred on the plane's anchor point.
    """
    mid_x = baseline * (n_views - 1) / 2
    a = np.deg2rad(tilt_deg)
    normal = np.array([np.sin(a), 0.0, -np.cos(a)])
    u_axis = np.array([np.cos(a), 0.0, np.sin(a)])
    band = None if band_width is None else (-band_width / 2, band_width / 2)
    plane = PlaneSurface(point=[mid_x, 0.0, depth], normal=normal, u_axis=u_axis,
                         texture_seed=texture_seed, cell=cell, color=(1.0, 0.92, 0.85), band=band)
    return SyntheticScene(surfaces=[plane], poses=lateral_trajectory(n_views, baseline))


# ---------------------------------------------------------------- scene files


def _floats(text, n=None, *, path=None, key=None):
    try:
        vals = [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise ParseError(f"non-numeric value for {key!r}: {text!r}", path) from None
    if n is not None and len(vals) != n:
        raise ParseError(f"{key!r} needs {n} numbers, got {len(vals)}", path)
    return vals


def load_scene_file(path) -> tuple[SyntheticScene, CameraIntrinsics]:
    """Parse a scene description (INI-style sections).

    Sections: ``[camera]`` (fx fy cx cy width height), ``[trajectory]``
    (``kitti = poses.txt`` or ``count``/``start``/``step``), ``[light]``
    and any number of ``[plane NAME]`` / ``[box NAME]`` sections.
    """
    from .io import load_kitti_poses

    path = Path(path)
    cp = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ParseError(str(exc), path) from None
    if "camera" not in cp:
        raise ParseError("missing [camera] section", path)
    c = cp["camera"]
    try:
        cam = CameraIntrinsics(float(c["fx"]), float(c["fy"]), float(c["cx"]), float(c["cy"]),
                               int(c["width"]), int(c["height"]))
    except (KeyError, ValueError) as exc:
        raise ParseError(f"bad [camera] section: {exc}", path) from None
    if "trajectory" not in cp:
        raise ParseError("missing [trajectory] section", path)
    t = cp["trajectory"]
    if "kitti" in t:
        poses = load_kitti_poses(path.parent / t["kitti"])
    else:
        count = int(t.get("count", "5"))
        start = np.array(_floats(t.get("start", "0 0 0"), 3, path=path, key="start"))
        step = np.array(_floats(t.get("step", "0.3 0 0"), 3, path=path, key="step"))
        poses = [Pose(np.eye(3), start + k * step) for k in range(count)]
    surfaces = []
    for name in cp.sections():
        sec = cp[name]
        kind = name.split()[0]
        if kind == "plane":
            band = sec.get("band")
            extent = sec.get("extent")
            surfaces.append(PlaneSurface(
                point=_floats(sec["point"], 3, path=path, key="point"),
                normal=_floats(sec["normal"], 3, path=path, key="normal"),
                u_axis=_floats(sec["u_axis"], 3, path=path, key="u_axis") if "u_axis" in sec else None,
                extent=tuple(_floats(extent, 2, path=path, key="extent")) if extent else None,
                texture_seed=int(sec.get("texture_seed", "0")),
                cell=float(sec.get("cell", "0.4")),
                color=tuple(_floats(sec.get("color", "1 1 1"), 3, path=path, key="color")),
                band=tuple(_floats(band, 2, path=path, key="band")) if band else None,
            ))
        elif kind == "box":
            surfaces.append(BoxSurface(
                center=_floats(sec["center"], 3, path=path, key="center"),
                size=_floats(sec["size"], 3, path=path, key="size"),
                texture_seed=int(sec.get("texture_seed", "0")),
                cell=float(sec.get("cell", "0.4")),
                color=tuple(_floats(sec.get("color", "1 1 1"), 3, path=path, key="color")),
            ))
        elif kind not in ("camera", "trajectory", "light"):
            raise ParseError(f"unknown section [{name}]", path)
    if not surfaces:
        raise InvalidSceneError(f"{path}: scene has no surfaces")
    scene = SyntheticScene(surfaces=surfaces, poses=poses)
    if "light" in cp:
        scene.light_dir = np.array(_floats(cp["light"].get("direction", "0.3 -1 -0.4"), 3, path=path, key="direction"))
        scene.ambient = float(cp["light"].get("ambient", "0.5"))
    return scene, cam


# ---------------------------------------------------------------- evaluation masks


def _world_points(view: RenderedView, cam: CameraIntrinsics):
    yy, xx = np.mgrid[0:cam.height, 0:cam.width]
    rays = pixel_rays(xx + 0.5, yy + 0.5, cam)
    return view.pose.apply(view.depth[..., None] * rays)


def covisible_mask(views: list[RenderedView], cam: CameraIntrinsics, i: int, margin: int = 10,
                   min_views: int = 1) -> np.ndarray:
    """Pixels of view ``i`` at least ``margin`` from the border whose surface point
    projects inside at least ``min_views`` other views."""
    X = _world_points(views[i], cam)
    cnt = np.zeros((cam.height, cam.width), dtype=np.int64)
    for j, v in enumerate(views):
        if j == i:
            continue
        Xs = v.pose.inverse().apply(X)
        z = Xs[..., 2]
        zs = np.where(z > 0, z, 1.0)
        u = cam.fx * Xs[..., 0] / zs + cam.cx
        w = cam.fy * Xs[..., 1] / zs + cam.cy
        cnt += (z > 0) & (u >= 0) & (u < cam.width) & (w >= 0) & (w < cam.height)
    m = np.zeros((cam.height, cam.width), dtype=bool)
    m[margin:cam.height - margin, margin:cam.width - margin] = True
    return m & (cnt >= min_views) & (views[i].depth > 0)


def band_mask(scene: SyntheticScene, view: RenderedView, cam: CameraIntrinsics) -> np.ndarray:
    """Pixels of ``view`` that land inside a textureless band of any plane."""
    X = _world_points(view, cam)
    out = np.zeros((cam.height, cam.width), dtype=bool)
    for k, pl in enumerate(scene.planes()):
        if pl.band is None:
            continue
        s = (X - pl.point) @ pl.u_axis
        out |= (view.surface_id == k) & (s >= pl.band[0]) & (s <= pl.band[1])
    return out


def perfect_seeds(view: RenderedView, n: int, seed: int = 0) -> np.ndarray:
    """``(n, 3)`` rows of ``x y depth`` sampled without replacement from valid
    ground truth; pixel coordinates are integer indices.  For a fixed ``seed``
    smaller ``n`` gives a subset of larger ``n``."""
    ys, xs = np.nonzero(view.depth > 0)
    pick = np.sort(np.random.default_rng(seed).permutation(len(xs))[:n])
    return np.stack([xs[pick], ys[pick], view.depth[ys[pick], xs[pick]]], axis=1).astype(np.float64)
