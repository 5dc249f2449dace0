"""File formats: PFM maps, KITTI pose lists, seed lists, calibration and images."""

from __future__ import annotations

import logging
import re
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvalidInputError, InvalidOutputError, ParseError
from .geometry import CameraIntrinsics, Pose, nearest_rotation

log = logging.getLogger(__name__)

DRIFT_WARN = 1e-6
DRIFT_REJECT = 1e-3


# ---------------------------------------------------------------- PFM


def write_pfm(grid, path) -> None:
    """Little-endian PFM; 2-D grids as ``Pf``, ``(H, W, 3)`` grids as ``PF``.  Rows go bottom-up."""
    a = np.asarray(grid)
    if a.ndim == 3 and a.shape[2] == 3:
        magic = b"PF"
    elif a.ndim == 2:
        magic = b"Pf"
    else:
        raise InvalidOutputError(f"{path}: PFM needs a 2-D or (H, W, 3) grid, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidOutputError(f"{path}: refusing to write non-finite values")
    H, W = a.shape[:2]
    body = np.ascontiguousarray(a[::-1].astype("<f4"))
    with open(path, "wb") as fh:
        fh.write(magic + b"\n" + f"{W} {H}\n".encode() + b"-1.0\n")
        fh.write(body.tobytes())


def read_pfm(path) -> np.ndarray:
    """Float32 grid from a PFM file (either endianness)."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read: {exc.strerror}", path) from None
    # three whitespace-terminated header tokens after the magic
    m = re.match(rb"(P[fF])\s+(\d+)\s+(\d+)\s+([-+0-9.eE]+)\s", data)
    if m is None:
        raise ParseError("bad PFM header", path)
    magic, W, H, scale = m.group(1), int(m.group(2)), int(m.group(3)), float(m.group(4))
    ch = 3 if magic == b"PF" else 1
    dt = "<f4" if scale < 0 else ">f4"
    n = W * H * ch
    if len(data) - m.end() < 4 * n:
        raise ParseError(f"truncated PFM data: need {n} floats", path)
    a = np.frombuffer(data, dtype=dt, count=n, offset=m.end()).astype(np.float32)
    a = a.reshape((H, W, 3) if ch == 3 else (H, W))
    return np.ascontiguousarray(a[::-1])


# ---------------------------------------------------------------- poses


def load_kitti_poses(path) -> list[Pose]:
    """One world-from-camera pose per nonempty line of 12 row-major 3x4 values."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read pose file: {exc.strerror}", path) from None
    poses = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        toks = line.split()
        if not toks:
            continue
        if len(toks) != 12:
            raise ParseError(f"expected 12 numbers, got {len(toks)}", path, lineno)
        try:
            vals = np.array([float(t) for t in toks])
        except ValueError:
            raise ParseError("non-numeric token", path, lineno) from None
        if not np.all(np.isfinite(vals)):
            raise ParseError("non-finite value", path, lineno)
        M = vals.reshape(3, 4)
        R = M[:, :3]
        Rn = nearest_rotation(R)
        drift = float(np.abs(R - Rn).max())
        if drift > DRIFT_REJECT or np.linalg.det(R) <= 0:
            raise ParseError(f"rotation is not orthonormal (drift {drift:.2e})", path, lineno)
        if drift > DRIFT_WARN:
            log.warning("%s:%d: re-orthonormalising rotation (drift %.2e)", path, lineno, drift)
            R = Rn
        elif drift > 1e-10:
            # below the warning level but above the pose tolerance: fix quietly
            R = Rn
        poses.append(Pose(R, M[:, 3]))
    return poses


def write_kitti_poses(poses, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in poses:
            M = p.matrix[:3]
            fh.write(" ".join(repr(float(v)) for v in M.ravel()) + "\n")


# ---------------------------------------------------------------- seeds


def load_seed_file(path) -> np.ndarray:
    """``(N, 3)`` rows of ``x y depth``; ``#`` starts a comment line."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read seed file: {exc.strerror}", path) from None
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        toks = s.split()
        if len(toks) != 3:
            raise ParseError(f"expected 'x y depth', got {len(toks)} fields", path, lineno)
        try:
            rows.append([float(t) for t in toks])
        except ValueError:
            raise ParseError("non-numeric token", path, lineno) from None
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def write_seed_file(points, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# x y depth\n")
        for x, y, d in np.asarray(points, dtype=np.float64).reshape(-1, 3):
            fh.write(f"{float(x)!r} {float(y)!r} {float(d)!r}\n")


# ---------------------------------------------------------------- calibration


def load_calibration(path, width: int, height: int) -> CameraIntrinsics:
    """Intrinsics from ``fx fy cx cy`` or a KITTI-style ``P0: <12 values>`` line (first one wins)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read calibration: {exc.strerror}", path) from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if ":" in s:
            s = s.split(":", 1)[1]
        try:
            vals = [float(t) for t in s.split()]
        except ValueError:
            raise ParseError("non-numeric token", path, lineno) from None
        if len(vals) == 12:
            P = np.array(vals).reshape(3, 4)
            fx, fy, cx, cy = P[0, 0], P[1, 1], P[0, 2], P[1, 2]
        elif len(vals) == 4:
            fx, fy, cx, cy = vals
        else:
            raise ParseError(f"expected 4 or 12 numbers, got {len(vals)}", path, lineno)
        try:
            return CameraIntrinsics(fx, fy, cx, cy, width, height)
        except InvalidInputError as exc:
            raise ParseError(str(exc), path, lineno) from None
    raise ParseError("no calibration line found", path)


def write_calibration(cam: CameraIntrinsics, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(" ".join(repr(float(v)) for v in (cam.fx, cam.fy, cam.cx, cam.cy)) + "\n")


# ---------------------------------------------------------------- images


def read_image(path) -> np.ndarray:
    """Float image in [0, 1]: ``(H, W, 3)`` for color files, ``(H, W)`` for grayscale (values used as linear)."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            a = np.asarray(im)
    except (OSError, ValueError) as exc:
        raise ParseError(f"cannot read image: {exc}", path) from None
    if mode in ("I;16", "I;16B", "I;16L", "I"):
        return a.astype(np.float64) / 65535.0
    if mode in ("RGBA", "LA"):
        a = a[..., :-1]
    if mode not in ("L", "RGB", "RGBA", "LA"):
        with Image.open(path) as im:
            a = np.asarray(im.convert("RGB"))
    return a.astype(np.float64) / 255.0


def write_image(image, path) -> None:
    """8-bit PNG (or PGM by extension) of a [0, 1] float image."""
    a = np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(a).save(path)
