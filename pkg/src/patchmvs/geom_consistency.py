"""Geometric-stage costs: forward-backward reprojection and depth-normal consistency."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from . import _pykernels as _py
from .errors import InvalidInputError
from .geometry import PlaneHypothesis
from .matcher import MatchContext


@dataclass
class GeomParams:
    lam_rep: float = 0.1
    lam_cons: float = 0.1
    tau: float = 2.0
    omega_radius: int = 2
    n_geom: int = 2
    perturbation: tuple = (0.02, 0.1)

    def __post_init__(self):
        if min(self.lam_rep, self.lam_cons, self.tau) < 0 or self.omega_radius < 0 or self.n_geom < 0:
            raise InvalidInputError("geometric parameters must be non-negative")

    def apply_to(self, ctx: MatchContext, src_depths) -> None:
        ctx.set_geometric(src_depths, self.lam_rep, self.lam_cons, self.tau, self.omega_radius)


def _one(x, y, h):
    return np.array([y]), np.array([x]), np.array([float(h.depth)]), np.asarray(h.normal, dtype=np.float64)[None, :]


def reprojection_error(x: int, y: int, depth: float, ctx: MatchContext) -> np.ndarray:
    """Per-source ``min(|p - p_hat|, tau)`` where ``p_hat`` is ``p`` sent to the source with
    ``depth`` and brought back with the source's own (bilinearly sampled) depth."""
    if not ctx.geometric_ready:
        raise InvalidInputError("source depth maps are not set; call GeomParams.apply_to first")
    lrep, _ = _backend.kernels.geom_terms(ctx.args, np.array([y]), np.array([x]), np.array([float(depth)]),
                                          np.array([[0.0, 0.0, -1.0]]))
    return lrep[0]


def depth_normal_consistency(x: int, y: int, h: PlaneHypothesis, depth_grid, ctx: MatchContext) -> float:
    """Color-weighted mean distance of the neighbours' 3D points to the plane of ``h``,
    divided by ``h.depth`` (so the value is unitless).

    Neighbours are the pixels of the ``(2r+1)^2`` window other than ``p``;
    out-of-image neighbours and neighbours without depth are skipped.
    """
    args = ctx.args
    saved = args.cons_depth
    args.cons_depth = np.ascontiguousarray(depth_grid, dtype=np.float64)
    try:
        ys, xs, d, n = _one(x, y, h)
        return float(_py.depth_normal_consistency(args, ys, xs, d, n)[0])
    finally:
        args.cons_depth = saved


def geometric_cost(x: int, y: int, h: PlaneHypothesis, ctx: MatchContext, view_weights) -> float:
    """Aggregate over sources of ``lam_rep * L_rep_i + lam_cons * L_cons`` with the view weights."""
    args = ctx.args
    if not ctx.geometric_ready:
        raise InvalidInputError("geometric stage needs source depths; call GeomParams.apply_to first")
    ys, xs, d, n = _one(x, y, h)
    lrep, lcons = _backend.kernels.geom_terms(args, ys, xs, d, n)
    per_view = args.lam_rep * lrep + args.lam_cons * lcons[:, None]
    return float(_py.aggregate(per_view, np.asarray(view_weights, dtype=np.float64)[None, :])[0])


def geometric_terms_grid(ctx: MatchContext, depth, normal):
    """Reprojection errors ``(H, W, K)`` and consistency ``(H, W)`` for whole grids."""
    H, W = depth.shape
    yy, xx = np.mgrid[0:H, 0:W]
    lrep, lcons = _backend.kernels.geom_terms(ctx.args, yy.ravel(), xx.ravel(), depth.ravel(), normal.reshape(-1, 3))
    return lrep.reshape(H, W, -1), lcons.reshape(H, W)
