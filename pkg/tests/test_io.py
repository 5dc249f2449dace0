import logging

import numpy as np
import pytest

from patchmvs.errors import ParseError
from scipy.spatial.transform import Rotation

from patchmvs.geometry import CameraIntrinsics, Pose
from patchmvs.io import (
    load_calibration,
    load_kitti_poses,
    load_seed_file,
    read_image,
    read_pfm,
    write_calibration,
    write_image,
    write_kitti_poses,
    write_pfm,
    write_seed_file,
)


def test_pfm_round_trip_is_bit_identical(tmp_path, rs):
    a = rs.normal(size=(7, 11)).astype(np.float32)
    write_pfm(a, tmp_path / "a.pfm")
    b = read_pfm(tmp_path / "a.pfm")
    assert b.dtype == np.float32 and b.tobytes() == a.tobytes()
    n = rs.normal(size=(5, 4, 3)).astype(np.float32)
    write_pfm(n, tmp_path / "n.pfm")
    assert read_pfm(tmp_path / "n.pfm").tobytes() == n.tobytes()


def test_pfm_header(tmp_path):
    write_pfm(np.zeros((2, 3)), tmp_path / "a.pfm")
    lines = (tmp_path / "a.pfm").read_bytes().split(b"\n", 3)
    assert lines[:3] == [b"Pf", b"3 2", b"-1.0"]


def test_pfm_rows_bottom_up(tmp_path):
    a = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
    write_pfm(a, tmp_path / "a.pfm")
    body = np.frombuffer((tmp_path / "a.pfm").read_bytes()[-16:], dtype="<f4")
    np.testing.assert_array_equal(body, [3, 4, 1, 2])


def test_pfm_big_endian(tmp_path):
    (tmp_path / "b.pfm").write_bytes(b"Pf\n2 1\n1.0\n" + np.array([1.5, -2.0], dtype=">f4").tobytes())
    np.testing.assert_array_equal(read_pfm(tmp_path / "b.pfm"), [[1.5, -2.0]])


def test_pfm_errors(tmp_path):
    with pytest.raises(ParseError):
        read_pfm(tmp_path / "missing.pfm")
    (tmp_path / "t.pfm").write_bytes(b"Pf\n4 4\n-1.0\n" + b"\0" * 8)
    with pytest.raises(ParseError, match="truncated"):
        read_pfm(tmp_path / "t.pfm")
    with pytest.raises(Exception):
        write_pfm(np.array([[np.nan]]), tmp_path / "nan.pfm")


def test_kitti_identity_line(tmp_path):
    p = tmp_path / "poses.txt"
    p.write_text("1 0 0 0 0 1 0 0 0 0 1 0\n")
    (pose,) = load_kitti_poses(p)
    np.testing.assert_array_equal(pose.rotation, np.eye(3))
    np.testing.assert_array_equal(pose.translation, np.zeros(3))


def test_kitti_short_line_names_line(tmp_path):
    p = tmp_path / "poses.txt"
    p.write_text("1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1\n")
    with pytest.raises(ParseError) as ei:
        load_kitti_poses(p)
    assert ei.value.line == 2 and f"{p}:2" in str(ei.value)


def test_kitti_round_trip(tmp_path, rs):
    poses = []
    for _ in range(20):
        poses.append(Pose(Rotation.random(random_state=rs).as_matrix(), rs.normal(size=3)))
    write_kitti_poses(poses, tmp_path / "p.txt")
    back = load_kitti_poses(tmp_path / "p.txt")
    for a, b in zip(poses, back):
        np.testing.assert_allclose(b.matrix, a.matrix, atol=1e-12)


def test_kitti_drift(tmp_path, caplog):
    R = np.eye(3)
    R[0, 1] = 1e-5
    p = tmp_path / "p.txt"
    p.write_text(" ".join(str(v) for v in np.hstack([R, np.zeros((3, 1))]).ravel()) + "\n")
    with caplog.at_level(logging.WARNING):
        (pose,) = load_kitti_poses(p)
    assert "re-orthonormalising" in caplog.text
    np.testing.assert_allclose(pose.rotation @ pose.rotation.T, np.eye(3), atol=1e-12)
    R[0, 1] = 1e-2
    p.write_text(" ".join(str(v) for v in np.hstack([R, np.zeros((3, 1))]).ravel()) + "\n")
    with pytest.raises(ParseError, match="orthonormal"):
        load_kitti_poses(p)


def test_seed_file_round_trip(tmp_path):
    pts = np.array([[1.0, 2.0, 3.5], [10.25, 0.0, 7.125]])
    write_seed_file(pts, tmp_path / "s.txt")
    np.testing.assert_array_equal(load_seed_file(tmp_path / "s.txt"), pts)
    (tmp_path / "bad.txt").write_text("1 2\n")
    with pytest.raises(ParseError):
        load_seed_file(tmp_path / "bad.txt")


def test_calibration(tmp_path):
    cam = CameraIntrinsics(700.5, 701.25, 320.0, 240.5, 640, 480)
    write_calibration(cam, tmp_path / "c.txt")
    assert load_calibration(tmp_path / "c.txt", 640, 480) == cam
    (tmp_path / "k.txt").write_text("P0: 700.5 0 320 0 0 701.25 240.5 0 0 0 1 0\n")
    assert load_calibration(tmp_path / "k.txt", 640, 480) == cam
    (tmp_path / "bad.txt").write_text("1 2 3\n")
    with pytest.raises(ParseError):
        load_calibration(tmp_path / "bad.txt", 640, 480)


def test_image_round_trip(tmp_path, rs):
    a = np.round(rs.uniform(size=(6, 5, 3)) * 255) / 255
    write_image(a, tmp_path / "a.png")
    np.testing.assert_allclose(read_image(tmp_path / "a.png"), a, atol=1e-12)
    g = np.round(rs.uniform(size=(6, 5)) * 255) / 255
    write_image(g, tmp_path / "g.png")
    assert read_image(tmp_path / "g.png").shape == (6, 5)
