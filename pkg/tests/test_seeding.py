import logging

import numpy as np
import pytest

from patchmvs.errors import InvalidInputError, TriangulationError
from patchmvs.geometry import CameraIntrinsics, DepthRange, pixel_rays
from patchmvs.matcher import triangle_planes
from patchmvs.seeding import (
    SeedConfig,
    SeedSet,
    densify,
    init_hypotheses,
    initial_grid,
    scale_seeds,
    triangulate_seeds,
)

CAM = CameraIntrinsics(100.0, 100.0, 50.0, 50.0, 100, 100)
DR = DepthRange(1.0, 50.0)


def seeds(rows):
    return SeedSet.from_points(np.asarray(rows, dtype=float), CAM, DR)


def test_single_seed_fills_5x5_block():
    g = densify(seeds([[10, 10, 4.0]]), 2, (100, 100))
    filled = np.isfinite(g)
    expected = np.zeros_like(filled)
    expected[8:13, 8:13] = True
    np.testing.assert_array_equal(filled, expected)
    assert np.all(g[filled] == 4.0)


def test_radius_zero_fills_seed_pixels_only():
    s = seeds([[1, 2, 3.0], [40, 41, 5.0]])
    g = densify(s, 0, (100, 100))
    assert np.isfinite(g).sum() == 2
    assert g[2, 1] == 3.0 and g[41, 40] == 5.0


def test_overlap_goes_to_nearest_seed():
    s = seeds([[20, 20, 3.0], [23, 20, 7.0], [21, 22, 5.0]])
    g = densify(s, 2, (100, 100))
    # brute-force: for each pixel, nearest seed (ties to smaller depth) among those within radius
    for y in range(100):
        for x in range(100):
            cands = [(float((x - sx) ** 2 + (y - sy) ** 2), d)
                     for sx, sy, d in zip(s.xs, s.ys, s.depths) if abs(x - sx) <= 2 and abs(y - sy) <= 2]
            if not cands:
                assert np.isnan(g[y, x])
            else:
                assert g[y, x] == min(cands)[1]


def test_from_points_floors_drops_and_keeps_last(caplog):
    with caplog.at_level(logging.WARNING):
        s = SeedSet.from_points(np.array([[3.7, 4.2, 5.0], [200, 3, 5.0], [3.1, 4.9, 6.0], [1, 1, -1.0]]), CAM, DR)
    assert len(s) == 1
    assert (s.xs[0], s.ys[0], s.depths[0]) == (3, 4, 6.0)
    assert "dropped 2 seeds" in caplog.text


def test_triangulate_equal_depth_gives_fronto_plane():
    s = seeds([[10, 10, 8.0], [80, 15, 8.0], [40, 85, 8.0]])
    depth, normal = triangulate_seeds(s, CAM)
    inside = np.isfinite(depth)
    assert inside.sum() > 1000
    np.testing.assert_allclose(depth[inside], 8.0, rtol=1e-12)
    np.testing.assert_allclose(normal[inside], np.broadcast_to([0, 0, -1.0], normal[inside].shape), atol=1e-12)


def test_three_seeds_one_triangle():
    tri, *_ = triangle_planes(np.array([10.5, 80.5, 40.5]), np.array([10.5, 15.5, 85.5]),
                              np.array([5.0, 6.0, 7.0]), CAM)
    assert len(tri.simplices) == 1


def test_triangulate_matches_slanted_plane():
    n = np.array([0.3, -0.2, -1.0])
    n /= np.linalg.norm(n)
    c = 6.0  # plane n.X + c = 0 ... solved for depth along each ray below
    pts = []
    for x, y in [(5, 5), (90, 8), (12, 93), (88, 90)]:
        r = pixel_rays(np.array(x + 0.5), np.array(y + 0.5), CAM)
        pts.append([x, y, -c / float(n @ r)])
    depth, _ = triangulate_seeds(seeds(pts), CAM)
    yy, xx = np.mgrid[0:100, 0:100]
    truth = -c / (pixel_rays(xx + 0.5, yy + 0.5, CAM) @ n)
    inside = np.isfinite(depth)
    assert inside.sum() > 5000
    np.testing.assert_allclose(depth[inside], truth[inside], rtol=1e-6)


def test_triangulate_errors():
    with pytest.raises(TriangulationError):
        triangulate_seeds(seeds([[1, 1, 2.0], [5, 5, 2.0]]), CAM)
    with pytest.raises(TriangulationError):
        triangulate_seeds(seeds([[1, 1, 2.0], [5, 5, 2.0], [9, 9, 2.0]]), CAM)


def test_zero_sigma_keeps_seed_depths():
    s = seeds([[10, 10, 4.0], [60, 70, 9.5]])
    cfg = SeedConfig(depth_sigma=0.0)
    g = init_hypotheses(densify(s, 2, (100, 100)), DR, cfg, CAM, seed=3)
    assert np.all(g.depth[8:13, 8:13] == 4.0)
    assert np.all(g.depth[68:73, 58:63] == 9.5)
    g.check(CAM, DR)


def test_empty_seeds_give_uniform_depths():
    g = initial_grid(SeedSet.empty(), SeedConfig(), CAM, DR, seed=5)
    counts, _ = np.histogram(g.depth, bins=10, range=(DR.d_min, DR.d_max))
    expected = g.depth.size / 10
    assert np.sum((counts - expected) ** 2 / expected) < 21.67  # chi-square 1%, 9 dof
    g.check(CAM, DR)


def test_depth_noise_law():
    partial = np.full((100, 100), 10.0)
    g = init_hypotheses(partial, DR, SeedConfig(depth_sigma=0.01), CAM, seed=11)
    assert abs(g.depth.std() - 0.1) < 0.005


def test_normal_noise_rotates_by_sigma():
    partial = (np.full((100, 100), 10.0), np.broadcast_to([0.0, 0.0, -1.0], (100, 100, 3)))
    g = init_hypotheses(partial, DR, SeedConfig(normal_sigma=0.05), CAM, seed=2)
    ang = np.arccos(np.clip(-g.normal[..., 2], -1, 1))
    # small rotation by |N(0, s)| about a uniform axis moves n by angle*sin(axis, n);
    # E|N(0, s)| = s*sqrt(2/pi) and E[sin] over the sphere = pi/4
    assert abs(ang.mean() - 0.05 * np.sqrt(2 / np.pi) * np.pi / 4) < 0.001
    g.check(CAM, DR)


def test_init_is_deterministic_and_seed_dependent():
    a = initial_grid(None, SeedConfig(), CAM, DR, seed=1)
    b = initial_grid(None, SeedConfig(), CAM, DR, seed=1)
    c = initial_grid(None, SeedConfig(), CAM, DR, seed=2)
    np.testing.assert_array_equal(a.depth, b.depth)
    np.testing.assert_array_equal(a.normal, b.normal)
    assert not np.array_equal(a.depth, c.depth)


def test_triangulate_mode_falls_back(caplog):
    s = seeds([[10, 10, 4.0], [20, 20, 4.0]])
    with caplog.at_level(logging.WARNING):
        g = initial_grid(s, SeedConfig(mode="triangulate", depth_sigma=0.0), CAM, DR)
    assert "densifying instead" in caplog.text
    assert g.depth[10, 10] == 4.0


def test_scale_seeds_maps_pixels():
    s = seeds([[41, 21, 5.0], [40, 20, 6.0], [9, 3, 7.0]])
    small = CameraIntrinsics(25.0, 25.0, 12.5, 12.5, 25, 25)
    out = scale_seeds(s, 4, small)
    got = {(int(x), int(y)): d for x, y, d in zip(out.xs, out.ys, out.depths)}
    # the two seeds landing on (10, 5) collapse to the nearer one
    assert got == {(10, 5): 5.0, (2, 0): 7.0}


def test_seed_config_validation():
    with pytest.raises(InvalidInputError):
        SeedConfig(mode="magic")
    with pytest.raises(InvalidInputError):
        SeedConfig(radius=-1)
