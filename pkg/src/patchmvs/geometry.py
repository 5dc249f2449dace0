"""Pinhole cameras, rigid poses and plane-induced warps.

Pixel convention: continuous image coordinates have their origin at the
top-left corner of the top-left pixel, so the pixel with integer index
``(x, y)`` has its center at ``(x + 0.5, y + 0.5)``.  All intrinsics refer
to continuous coordinates, which makes pyramid rescaling exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BehindCameraError,
    DegenerateHomographyError,
    InvalidInputError,
    OutOfRangeError,
)

ROTATION_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise InvalidInputError(f"bad image size {self.width}x{self.height}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise InvalidInputError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.cx, self.cy], dtype=np.float64)

    def downscaled(self, level_shift: int) -> "CameraIntrinsics":
        """Intrinsics for an image ``2**level_shift`` times smaller per axis."""
        s = 2**level_shift
        return CameraIntrinsics(
            self.fx / s,
            self.fy / s,
            self.cx / s,
            self.cy / s,
            -(-self.width // s),
            -(-self.height // s),
        )

    def contains(self, p) -> bool:
        u, v = p
        return 0.0 <= u <= self.width and 0.0 <= v <= self.height


def _check_rotation(R: np.ndarray, tol: float = ROTATION_TOL) -> None:
    if R.shape != (3, 3):
        raise InvalidInputError(f"rotation must be 3x3, got {R.shape}")
    err = np.abs(R.T @ R - np.eye(3)).max()
    if err > tol or abs(np.linalg.det(R) - 1.0) > tol:
        raise InvalidInputError(f"rotation is not a proper orthonormal matrix (error {err:.2e})")


def nearest_rotation(M: np.ndarray) -> np.ndarray:
    """Project a 3x3 matrix onto SO(3) in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


@dataclass(frozen=True)
class Pose:
    """Rigid world-from-camera transform: ``X_world = R @ X_cam + t``."""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        _check_rotation(R)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M) -> "Pose":
        M = np.asarray(M, dtype=np.float64)
        return cls(M[:3, :3], M[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    @property
    def center(self) -> np.ndarray:
        return self.translation.copy()

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return X @ self.rotation.T + self.translation


def relative_pose(ref_pose: Pose, src_pose: Pose) -> Pose:
    """Source-from-reference transform for two world-from-camera poses."""
    return src_pose.inverse() @ ref_pose


@dataclass(frozen=True)
class DepthRange:
    d_min: float
    d_max: float

    def __post_init__(self):
        if not (0 < self.d_min < self.d_max):
            raise InvalidInputError(f"need 0 < d_min < d_max, got [{self.d_min}, {self.d_max}]")

    def clamp(self, d):
        return np.clip(d, self.d_min, self.d_max)

    def contains(self, d) -> bool:
        return self.d_min <= d <= self.d_max


@dataclass(frozen=True)
class PlaneHypothesis:
    """Depth at the anchor pixel plus a unit normal in the camera frame."""

    depth: float
    normal: np.ndarray

    def __post_init__(self):
        n = np.array(self.normal, dtype=np.float64).reshape(3)
        if not self.depth > 0:
            raise InvalidInputError(f"hypothesis depth must be positive, got {self.depth}")
        if abs(np.linalg.norm(n) - 1.0) > 1e-6:
            raise InvalidInputError(f"hypothesis normal is not unit length: {n}")
        n.setflags(write=False)
        object.__setattr__(self, "depth", float(self.depth))
        object.__setattr__(self, "normal", n)

    def is_valid_at(self, p, cam: CameraIntrinsics, depth_range: DepthRange) -> bool:
        ray = pixel_ray(p, cam)
        return depth_range.contains(self.depth) and float(self.normal @ ray) < 0.0


def pixel_center(x, y):
    """Continuous coordinates of the pixel with integer index ``(x, y)``."""
    return (np.asarray(x, dtype=np.float64) + 0.5, np.asarray(y, dtype=np.float64) + 0.5)


def pixel_ray(p, cam: CameraIntrinsics) -> np.ndarray:
    """Viewing ray through continuous pixel ``p``, scaled to unit z."""
    u, v = p
    return np.array([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0])


def pixel_rays(us, vs, cam: CameraIntrinsics) -> np.ndarray:
    us = np.asarray(us, dtype=np.float64)
    vs = np.asarray(vs, dtype=np.float64)
    return np.stack([(us - cam.cx) / cam.fx, (vs - cam.cy) / cam.fy, np.ones_like(us)], axis=-1)


def backproject(p, d: float, cam: CameraIntrinsics) -> np.ndarray:
    """3D camera-frame point at depth ``d`` (its z coordinate) along pixel ``p``."""
    if not d > 0:
        raise InvalidInputError(f"depth must be positive, got {d}")
    if not cam.contains(p):
        raise InvalidInputError(f"pixel {tuple(p)} outside the {cam.width}x{cam.height} image")
    return d * pixel_ray(p, cam)


def project(X, cam: CameraIntrinsics):
    """Return ``((u, v), z)``; the pixel may fall outside the image."""
    X = np.asarray(X, dtype=np.float64)
    z = float(X[2])
    if not z > 0:
        raise BehindCameraError(f"point {X} is not in front of the camera")
    return (cam.fx * X[0] / z + cam.cx, cam.fy * X[1] / z + cam.cy), z


def depth_of_plane_at(h: PlaneHypothesis, p, q, cam: CameraIntrinsics) -> float:
    """Depth at pixel ``q`` of the plane through ``(p, h.depth)`` with normal ``h.normal``."""
    if q[0] == p[0] and q[1] == p[1]:
        return h.depth
    n = h.normal
    offset = float(n @ (h.depth * pixel_ray(p, cam)))
    denom = float(n @ pixel_ray(q, cam))
    if abs(denom) < 1e-12:
        raise OutOfRangeError(f"ray through {tuple(q)} is parallel to the plane")
    d = offset / denom
    if not d > 0:
        raise OutOfRangeError(f"plane lies behind the camera along {tuple(q)}")
    return d


def plane_homography(h: PlaneHypothesis, p, ref_cam: CameraIntrinsics, src_cam: CameraIntrinsics,
                     rel_pose: Pose) -> np.ndarray:
    """Homography taking reference pixels to source pixels through the plane of ``h``.

    ``rel_pose`` is the source-from-reference transform.  With the plane
    written as ``n.X + c = 0`` the warp is ``Ks (R - t n^T / c) Kr^-1``.
    """
    n = h.normal
    Xp = h.depth * pixel_ray(p, ref_cam)
    c = -float(n @ Xp)
    if abs(c) < 1e-12 * max(1.0, h.depth):
        raise DegenerateHomographyError("plane passes through the reference camera center")
    R, t = rel_pose.rotation, rel_pose.translation
    src_center_in_ref = -R.T @ t
    if abs(float(n @ src_center_in_ref) + c) < 1e-12 * max(1.0, abs(c)):
        raise DegenerateHomographyError("plane passes through the source camera center")
    H = src_cam.K @ (R - np.outer(t, n) / c) @ ref_cam.K_inv
    if abs(H[2, 2]) < 1e-15:
        raise DegenerateHomographyError("homography cannot be normalised")
    return H / H[2, 2]


def apply_homography(H: np.ndarray, q):
    x = H @ np.array([q[0], q[1], 1.0])
    return x[0] / x[2], x[1] / x[2]


def random_unit_normal(rng: np.random.Generator, view_ray) -> np.ndarray:
    """Uniform direction on the hemisphere facing back along ``view_ray``."""
    v = rng.standard_normal(3)
    nv = np.linalg.norm(v)
    while nv < 1e-12:
        v = rng.standard_normal(3)
        nv = np.linalg.norm(v)
    n = v / nv
    return orient_toward_camera(n, view_ray)


def orient_toward_camera(n, view_ray):
    """Flip ``n`` so that ``n . view_ray < 0``; rays exactly in-plane map to ``-ray``."""
    n = np.asarray(n, dtype=np.float64)
    ray = np.asarray(view_ray, dtype=np.float64)
    s = n @ ray if n.ndim == 1 else np.einsum("...i,...i->...", n, ray)
    out = np.where(np.asarray(s)[..., None] > 0, -n, n)
    zero = np.asarray(s) == 0
    if np.any(zero):
        r = ray / np.linalg.norm(ray, axis=-1, keepdims=True)
        out = np.where(zero[..., None], -r, out)
    return out


def rotate_about_axis(v, axis, angle):
    """Rodrigues rotation of vectors ``v`` about unit ``axis`` (broadcasting)."""
    v = np.asarray(v, dtype=np.float64)
    axis = np.asarray(axis, dtype=np.float64)
    c = np.cos(angle)[..., None] if np.ndim(angle) else math.cos(angle)
    s = np.sin(angle)[..., None] if np.ndim(angle) else math.sin(angle)
    dot = np.sum(axis * v, axis=-1, keepdims=True)
    return v * c + np.cross(axis, v) * s + axis * dot * (1.0 - c)


def angle_between(a, b) -> np.ndarray:
    """Angle in radians between (batches of) unit vectors."""
    d = np.clip(np.sum(np.asarray(a) * np.asarray(b), axis=-1), -1.0, 1.0)
    return np.arccos(d)


def plane_through_points(X0, X1, X2):
    """Unit normal and offset ``c`` (``n.X + c = 0``) of the plane through three points."""
    n = np.cross(np.asarray(X1) - X0, np.asarray(X2) - X0)
    nn = np.linalg.norm(n, axis=-1, keepdims=True)
    n = n / np.where(nn > 0, nn, 1.0)
    c = -np.sum(n * X0, axis=-1)
    return n, c
