import numpy as np
import pytest

from patchmvs.errors import InvalidSceneError, ParseError
from patchmvs.geom_consistency import GeomParams, depth_normal_consistency
from patchmvs.geometry import PlaneHypothesis, Pose, apply_homography, plane_homography, relative_pose
from patchmvs.matcher import _py
from patchmvs.synthetic import (
    PlaneSurface,
    SyntheticScene,
    band_mask,
    load_scene_file,
    perfect_seeds,
    render_scene,
    render_view,
    textured_plane_scene,
)

from helpers import context, interior


def test_fronto_plane_ground_truth(small_cam):
    scene = SyntheticScene([PlaneSurface([0, 0, 7.5], [0, 0, -1.0])], [Pose.identity()])
    v = render_view(scene, small_cam, Pose.identity())
    np.testing.assert_allclose(v.depth, 7.5, rtol=1e-14)
    np.testing.assert_allclose(v.normal, np.broadcast_to([0, 0, -1.0], v.normal.shape), atol=1e-14)
    assert v.image.min() >= 0 and v.image.max() <= 1 and v.image.std() > 0.02


def test_corner_fold_line(small_cam):
    # two planes meeting at x = 0.5 (world) at depth 6
    a = PlaneSurface([0.5, 0, 6.0], [-0.5, 0, -1.0])
    b = PlaneSurface([0.5, 0, 6.0], [0.5, 0, -1.0])
    v = render_view(SyntheticScene([a, b], [Pose.identity()]), small_cam, Pose.identity())
    fold_u = small_cam.fx * 0.5 / 6.0 + small_cam.cx  # the fold line projects to a vertical line
    cols = np.nonzero(np.any(v.surface_id[:, 1:] != v.surface_id[:, :-1], axis=0))[0] + 1
    assert np.all(np.abs(cols - fold_u) <= 1.0)


def test_warp_consistency(small_cam):
    scene = textured_plane_scene(tilt_deg=20.0)
    views = render_scene(scene, small_cam)
    ref, src = views[2], views[3]
    rel = relative_pose(ref.pose, src.pose)
    H, W = ref.depth.shape
    errs = []
    for y in range(5, H - 5, 3):
        for x in range(5, W - 5, 3):
            h = PlaneHypothesis(ref.depth[y, x], ref.normal[y, x])
            Hm = plane_homography(h, (x + 0.5, y + 0.5), small_cam, small_cam, rel)
            u, v = apply_homography(Hm, (x + 0.5, y + 0.5))
            vals, ok = _py._bilinear(src.image.mean(axis=2), np.array(u - 0.5), np.array(v - 0.5))
            if ok:
                errs.append(abs(float(vals) - ref.image[y, x].mean()))
    assert np.mean(errs) < 0.02


def test_ground_truth_is_self_consistent(plane_views, small_cam, depth_range):
    ctx = context(plane_views, small_cam, depth_range)
    GeomParams().apply_to(ctx, [v.depth for v in plane_views[:2] + plane_views[3:]])
    v = plane_views[2]
    for y, x in zip(*np.nonzero(interior(v.depth.shape, 2))):
        assert depth_normal_consistency(x, y, PlaneHypothesis(v.depth[y, x], v.normal[y, x]), v.depth, ctx) < 1e-6


def test_band_is_textureless(small_cam):
    scene = textured_plane_scene(band_width=0.88)
    v = render_scene(scene, small_cam)[2]
    m = band_mask(scene, v, small_cam)
    assert 8 <= np.count_nonzero(m.any(axis=0)) <= 16
    gray = v.image.mean(axis=2)
    assert np.ptp(gray[m]) < 1e-12
    assert gray[~m].std() > 0.02


def test_perfect_seeds_are_nested(plane_views):
    a = perfect_seeds(plane_views[0], 50, seed=4)
    b = perfect_seeds(plane_views[0], 200, seed=4)
    assert {tuple(r) for r in a} <= {tuple(r) for r in b}
    xs, ys = b[:, 0].astype(int), b[:, 1].astype(int)
    np.testing.assert_array_equal(b[:, 2], plane_views[0].depth[ys, xs])


def test_scene_file(tmp_path):
    p = tmp_path / "scene.ini"
    p.write_text("[camera]\nfx = 60\nfy = 60\ncx = 32\ncy = 24\nwidth = 64\nheight = 48\n"
                 "[trajectory]\ncount = 3\nstep = 0.2 0 0\n"
                 "[plane back]\npoint = 0 0 5\nnormal = 0 0 -1\ntexture_seed = 4\n"
                 "[box crate]\ncenter = 0.2 0.3 3\nsize = 0.5 0.5 0.5\n")
    scene, cam = load_scene_file(p)
    assert (cam.width, cam.height) == (64, 48)
    assert len(scene.poses) == 3 and len(scene.planes()) == 7
    views = render_scene(scene, cam)
    assert views[0].depth.min() > 2.0


def test_scene_file_errors(tmp_path):
    p = tmp_path / "bad.ini"
    p.write_text("[trajectory]\ncount = 2\n")
    with pytest.raises(ParseError):
        load_scene_file(p)
    p.write_text("[camera]\nfx = 60\nfy = 60\ncx = 32\ncy = 24\nwidth = 64\nheight = 48\n[trajectory]\n[blob x]\n")
    with pytest.raises(ParseError):
        load_scene_file(p)


def test_camera_inside_box_rejected(small_cam):
    from patchmvs.synthetic import BoxSurface

    scene = SyntheticScene([BoxSurface([0, 0, 0], [1, 1, 1])], [Pose.identity()])
    with pytest.raises(InvalidSceneError):
        render_scene(scene, small_cam)


def test_low_coverage_rejected(small_cam):
    # plane seen edge-on from most of the image
    scene = SyntheticScene([PlaneSurface([0, 0, 5], [0, 0, -1], extent=(0.1, 0.1))], [Pose.identity()])
    with pytest.raises(InvalidSceneError):
        render_scene(scene, small_cam)
