"""Small builders shared by the test modules."""

import numpy as np

from patchmvs.frames import CameraFrame
from patchmvs.geometry import pixel_rays
from patchmvs.matcher import HypothesisGrid, MatchContext


def frames(views, cam):
    return [CameraFrame(v.image, cam, v.pose, frame_id=k) for k, v in enumerate(views)]


def context(views, cam, depth_range, ref=2, sources=None, radius=3, seed=0):
    fr = frames(views, cam)
    sources = [k for k in range(len(views)) if k != ref] if sources is None else sources
    return MatchContext(fr[ref], [fr[k] for k in sources], depth_range, radius=radius, step=2, seed=seed)


def gt_grid(view, n_views):
    return HypothesisGrid.from_hypotheses(view.depth.copy(), view.normal.copy(), n_views)


def rays(cam):
    yy, xx = np.mgrid[0:cam.height, 0:cam.width]
    return pixel_rays(xx + 0.5, yy + 0.5, cam)


def interior(shape, margin):
    m = np.zeros(shape, dtype=bool)
    m[margin:shape[0] - margin, margin:shape[1] - margin] = True
    return m
