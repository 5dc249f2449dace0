import numpy as np
import pytest

from patchmvs.errors import InvalidInputError
from patchmvs.geometry import CameraIntrinsics, DepthRange
from patchmvs.refinement import (
    RefineParams,
    confidence_from_cost,
    edge_weights,
    fit_normals,
    global_refine,
    refine_energy,
    relax,
)

from helpers import rays

DR = DepthRange(0.1, 100.0)


def cam_for(H, W):
    return CameraIntrinsics(float(W), float(W), W / 2, H / 2, W, H)


def dense_minimizer(d0, conf, wr, wd, lam):
    """Solve (C + lam L) d = C d0 with a dense direct solver."""
    H, W = d0.shape
    n = H * W
    A = np.diag(conf.ravel()).astype(float)
    idx = np.arange(n).reshape(H, W)

    def edge(i, j, w):
        A[i, i] += lam * w
        A[j, j] += lam * w
        A[i, j] -= lam * w
        A[j, i] -= lam * w

    for y in range(H):
        for x in range(W - 1):
            edge(idx[y, x], idx[y, x + 1], wr[y, x])
    for y in range(H - 1):
        for x in range(W):
            edge(idx[y, x], idx[y + 1, x], wd[y, x])
    return np.linalg.solve(A, (conf * d0).ravel()).reshape(H, W)


def test_confidence_examples():
    np.testing.assert_allclose(confidence_from_cost([0.0, 1.0, 1.5, 0.6]), [1.0, 0.0, 0.0, 0.5])
    with pytest.raises(InvalidInputError):
        confidence_from_cost([np.nan])


def test_unary_only_is_identity(rs):
    d = rs.uniform(2, 9, size=(12, 15))
    res = global_refine(d, np.broadcast_to([0, 0, -1.0], (12, 15, 3)), np.ones((12, 15)), rs.uniform(size=(12, 15, 3)),
                        cam_for(12, 15), DR, RefineParams(lam_s=0.0, median=False))
    np.testing.assert_array_equal(res.depth, d)


def test_constant_input_is_fixed_point(rs):
    d = np.full((10, 10), 4.5)
    for lam in (0.1, 1.0, 25.0):
        res = global_refine(d, np.broadcast_to([0, 0, -1.0], (10, 10, 3)), np.ones((10, 10)),
                            rs.uniform(size=(10, 10, 3)), cam_for(10, 10), DR, RefineParams(lam_s=lam))
        np.testing.assert_allclose(res.depth, 4.5, rtol=1e-15)


def test_strip_interpolates_linearly():
    W = 20
    d0 = np.zeros((1, W))
    d0[0, 0], d0[0, -1] = 1.0, 2.0
    conf = np.zeros((1, W))
    conf[0, [0, -1]] = 1.0
    wr, wd = edge_weights(np.zeros((1, W)))
    lam = 0.5
    d, _, _ = relax(d0, conf, wr, wd, lam, max_sweeps=200_000, tol=1e-15, init=np.full((1, W), 1.5))
    exact = dense_minimizer(d0, conf, wr, wd, lam)
    np.testing.assert_allclose(d, exact, atol=1e-6)
    # interior is linear between the (slightly pulled-in) endpoints
    np.testing.assert_allclose(np.diff(exact[0], 2), 0.0, atol=1e-12)


@pytest.mark.parametrize("shape", [(8, 8), (17, 23), (32, 32)])
def test_matches_dense_solver(backend, shape, rs):
    H, W = shape
    d0 = rs.uniform(2, 20, size=shape)
    conf = rs.uniform(size=shape)
    conf[rs.uniform(size=shape) < 0.3] = 0.0
    conf[0, 0] = 1.0
    image = rs.uniform(size=shape + (3,))
    wr, wd = edge_weights(image)
    for lam in (0.2, 1.0):
        d, sweeps, energies = relax(d0, conf, wr, wd, lam, max_sweeps=100_000, tol=1e-15, trace=True)
        np.testing.assert_allclose(d, dense_minimizer(d0, conf, wr, wd, lam), atol=1e-6)
        e = np.array(energies)
        assert np.all(np.diff(e) <= 1e-12 * e[0])


def test_global_refine_uses_the_same_energy(rs):
    H, W = 16, 16
    d0 = rs.uniform(4, 6, size=(H, W))
    conf = rs.uniform(size=(H, W))
    image = rs.uniform(size=(H, W, 3))
    res = global_refine(d0, np.broadcast_to([0, 0, -1.0], (H, W, 3)), conf, image, cam_for(H, W), DR,
                        RefineParams(lam_s=1.0, median=False, tol=1e-15, max_sweeps=100_000), trace=True)
    wr, wd = edge_weights(image)
    np.testing.assert_allclose(res.depth, dense_minimizer(d0, conf, wr, wd, 1.0), atol=1e-6)
    assert res.energies[-1] == pytest.approx(refine_energy(res.depth, d0, conf, wr, wd, 1.0))


def test_outliers_are_corrected(rs):
    H, W = 32, 32
    cam = cam_for(H, W)
    n = np.array([0.2, -0.1, -1.0])
    n /= np.linalg.norm(n)
    truth = 5.0 / -(rays(cam) @ n)
    depth = truth.copy()
    cost = np.full((H, W), 0.05)
    out = rs.uniform(size=(H, W)) < 0.1
    depth[out] = rs.uniform(1, 30, size=out.sum())
    cost[out] = 1.5  # unreliable: confidence 0
    res = global_refine(depth, np.broadcast_to(n, (H, W, 3)), confidence_from_cost(cost), np.full((H, W, 3), 0.5),
                        cam, DR, RefineParams(lam_s=1.0))
    fixed = np.abs(res.depth[out] - truth[out]) / truth[out] < 0.01
    assert fixed.mean() >= 0.95


def test_fit_normals_on_plane():
    cam = cam_for(20, 30)
    n = np.array([0.3, 0.2, -1.0])
    n /= np.linalg.norm(n)
    depth = 7.0 / -(rays(cam) @ n)
    got = fit_normals(depth, cam)
    np.testing.assert_allclose(got[1:-1, 1:-1], np.broadcast_to(n, got[1:-1, 1:-1].shape), atol=1e-9)


def test_shape_mismatch(rs):
    with pytest.raises(InvalidInputError):
        global_refine(np.ones((5, 5)), np.zeros((5, 5, 3)), np.ones((4, 5)), np.zeros((5, 5)), cam_for(5, 5), DR)
    with pytest.raises(InvalidInputError):
        RefineParams(lam_s=-1.0)
