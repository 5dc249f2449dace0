"""PatchMatch core: photometric costs, checkerboard propagation, perturbation, planar priors."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay, QhullError

from . import _backend
from . import _pykernels as _py
from ._kernelargs import MODE_GEOM, MODE_PHOTO, MODE_PLANAR, KernelArgs
from .errors import InvalidInputError
from .frames import CameraFrame
from .geometry import (
    CameraIntrinsics,
    DepthRange,
    PlaneHypothesis,
    pixel_rays,
    relative_pose,
)

log = logging.getLogger(__name__)

MAX_COST = _py.MAX_COST
VIEW_BETA = _py.VIEW_BETA

STAGES = {"photometric": MODE_PHOTO, "planar": MODE_PLANAR, "geometric": MODE_GEOM}


@dataclass
class MatchParams:
    radius_coarse: int = 5      # 11x11 window at the coarsest level
    radius_fine: int = 3        # 7x7 window at finer levels
    patch_step: int = 2
    n_photo: int = 3
    n_planar: int = 3
    k_src: int = 4
    prior_threshold: float = 0.1
    prior_cell: int = 1
    perturb_photo: tuple = (0.1, 0.4)
    perturb_planar: tuple = (0.05, 0.2)
    perturb_geom: tuple = (0.02, 0.1)
    lam_planar: float = 0.2
    planar_depth_trunc: float = 0.2
    planar_angle_trunc_deg: float = 30.0

    def __post_init__(self):
        if self.n_photo < 1 or self.n_planar < 0:
            raise InvalidInputError("need n_photo >= 1 and n_planar >= 0")
        if self.k_src < 1:
            raise InvalidInputError("k_src must be >= 1")
        if not 0 < self.prior_threshold < 2:
            raise InvalidInputError("prior threshold must lie in (0, 2)")
        if self.radius_coarse < 1 or self.radius_fine < 1 or self.patch_step < 1:
            raise InvalidInputError("patch radii and step must be positive")
        if self.prior_cell < 1:
            raise InvalidInputError("prior_cell must be >= 1")

    def perturbation(self, stage: str) -> tuple:
        return {"photometric": self.perturb_photo, "planar": self.perturb_planar,
                "geometric": self.perturb_geom}[stage]


@dataclass
class HypothesisGrid:
    """Per-pixel plane hypotheses together with their costs and view weights."""

    depth: np.ndarray        # (H, W)
    normal: np.ndarray       # (H, W, 3), camera frame
    cost: np.ndarray         # (H, W) total cost under the current stage
    photo_cost: np.ndarray   # (H, W) aggregated photometric cost
    view_cost: np.ndarray    # (H, W, K) per-view NCC cost
    weights: np.ndarray      # (H, W, K) view-selection weights

    @classmethod
    def from_hypotheses(cls, depth, normal, n_views: int) -> "HypothesisGrid":
        depth = np.ascontiguousarray(depth, dtype=np.float64)
        H, W = depth.shape
        return cls(
            depth=depth,
            normal=np.ascontiguousarray(normal, dtype=np.float64),
            cost=np.full((H, W), MAX_COST),
            photo_cost=np.full((H, W), MAX_COST),
            view_cost=np.full((H, W, n_views), MAX_COST),
            weights=np.ones((H, W, n_views)),
        )

    @property
    def shape(self):
        return self.depth.shape

    @property
    def n_views(self) -> int:
        return self.view_cost.shape[2]

    def copy(self) -> "HypothesisGrid":
        return HypothesisGrid(*(np.array(a, copy=True) for a in
                                (self.depth, self.normal, self.cost, self.photo_cost, self.view_cost, self.weights)))

    def check(self, cam: CameraIntrinsics, depth_range: DepthRange, tol: float = 1e-6) -> None:
        """Raise if any grid invariant is violated."""
        H, W = self.shape
        if (W, H) != (cam.width, cam.height):
            raise InvalidInputError(f"grid {W}x{H} does not match camera {cam.width}x{cam.height}")
        if np.any(self.depth < depth_range.d_min) or np.any(self.depth > depth_range.d_max):
            raise InvalidInputError("depth outside range")
        if np.abs(np.linalg.norm(self.normal, axis=2) - 1).max() > tol:
            raise InvalidInputError("normals not unit length")
        yy, xx = np.mgrid[0:H, 0:W]
        rays = pixel_rays(xx + 0.5, yy + 0.5, cam)
        if np.any(np.sum(rays * self.normal, axis=2) >= 0):
            raise InvalidInputError("normal not facing the camera")
        if not np.all(np.isfinite(self.cost)) or np.any(self.cost < 0):
            raise InvalidInputError("costs must be finite and non-negative")
        if np.any(self.weights < 0) or np.any(self.weights > 1):
            raise InvalidInputError("weights outside [0, 1]")


@dataclass
class PlanarPriorField:
    depth: np.ndarray            # (H, W), NaN where no prior
    normal: np.ndarray           # (H, W, 3)
    vertices: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    triangles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    kept: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @classmethod
    def empty(cls, shape) -> "PlanarPriorField":
        H, W = shape
        return cls(np.full((H, W), np.nan), np.zeros((H, W, 3)))

    @property
    def is_empty(self) -> bool:
        return not np.any(np.isfinite(self.depth))

    def at(self, x: int, y: int) -> PlaneHypothesis | None:
        d = self.depth[y, x]
        if not np.isfinite(d):
            return None
        return PlaneHypothesis(d, self.normal[y, x])


class MatchContext:
    """A reference frame, its sources and every stage parameter, ready for the kernels."""

    def __init__(self, ref: CameraFrame, sources: list[CameraFrame], depth_range: DepthRange,
                 radius: int = 3, step: int = 2, seed: int = 0, threads: int = 1, **kernel_kw):
        if not sources:
            raise InvalidInputError("at least one source view is required")
        for s in sources:
            if s.shape != ref.shape:
                raise InvalidInputError("all frames of a level must share one size")
        self.ref = ref
        self.sources = sources
        self.cam = ref.cam
        self.depth_range = depth_range
        rels = [relative_pose(ref.pose, s.pose) for s in sources]
        self.args = KernelArgs(
            ref=ref.gray,
            ref_color=ref.image,
            src=np.stack([s.gray for s in sources]),
            cam=ref.cam.as_array(),
            rot=np.stack([r.rotation for r in rels]),
            trans=np.stack([r.translation for r in rels]),
            rot_inv=np.stack([r.inverse().rotation for r in rels]),
            trans_inv=np.stack([r.inverse().translation for r in rels]),
            d_min=depth_range.d_min,
            d_max=depth_range.d_max,
            radius=radius,
            step=step,
            seed=seed,
            threads=threads,
            **kernel_kw,
        )
        self.geometric_ready = False

    @property
    def n_views(self) -> int:
        return len(self.sources)

    @property
    def shape(self):
        return self.ref.shape

    def set_planar(self, prior: PlanarPriorField | None, params: MatchParams) -> None:
        H, W = self.shape
        if prior is None:
            prior = PlanarPriorField.empty((H, W))
        self.args.prior_depth = np.ascontiguousarray(prior.depth, dtype=np.float64)
        self.args.prior_normal = np.ascontiguousarray(prior.normal, dtype=np.float64)
        self.args.lam_planar = params.lam_planar
        self.args.planar_td = params.planar_depth_trunc
        self.args.planar_ta = np.deg2rad(params.planar_angle_trunc_deg)

    def set_geometric(self, src_depths, lam_rep: float, lam_cons: float, tau: float, omega_radius: int) -> None:
        self.args.src_depth = np.ascontiguousarray(np.stack(src_depths), dtype=np.float64)
        self.args.lam_rep = lam_rep
        self.args.lam_cons = lam_cons
        self.args.tau = tau
        self.args.omega_radius = omega_radius
        self.geometric_ready = True


# ------------------------------------------------------------------ per-pixel API


def ncc_cost(ref_patch, src_patch) -> float:
    """``1 - NCC`` in [0, 2]; a constant patch on either side costs the maximum."""
    r = np.asarray(ref_patch, dtype=np.float64).ravel()
    s = np.asarray(src_patch, dtype=np.float64).ravel()
    if np.shape(ref_patch) != np.shape(src_patch):
        raise InvalidInputError(f"patch shapes differ: {np.shape(ref_patch)} vs {np.shape(src_patch)}")
    n = r.size
    if n == 0:
        return MAX_COST
    mr = r.mean()
    ms = s.mean()
    vr = np.mean((r - mr) ** 2)
    vs = np.mean((s - ms) ** 2)
    if not (vr > _py.VAR_EPS and vs > _py.VAR_EPS):
        return MAX_COST
    ncc = np.mean((r - mr) * (s - ms)) / np.sqrt(vr * vs)
    return float(np.clip(1.0 - ncc, 0.0, MAX_COST))


def evaluate_hypothesis(x: int, y: int, h: PlaneHypothesis, ctx: MatchContext) -> np.ndarray:
    """Per-source NCC costs of hypothesis ``h`` anchored at pixel ``(x, y)``."""
    k = _backend.kernels
    return k.photo_costs(ctx.args, np.array([y]), np.array([x]), np.array([h.depth]), h.normal[None, :])[0]


def update_view_weights(view_costs) -> np.ndarray:
    """Gaussian cost-to-weight map ``exp(-c^2 / 2 beta^2)``, rescaled so the best view has weight 1."""
    return _py.update_view_weights(np.asarray(view_costs, dtype=np.float64))


def aggregate_cost(view_costs, weights) -> np.ndarray:
    """Weighted mean of per-view costs; 2 when every weight is zero."""
    return _py.aggregate(np.asarray(view_costs, dtype=np.float64), np.asarray(weights, dtype=np.float64))


def planar_prior_cost(h: PlaneHypothesis, prior: PlaneHypothesis | None, lam: float = 0.2,
                      depth_trunc: float = 0.2, angle_trunc_deg: float = 30.0) -> float:
    if prior is None:
        return 0.0
    rel = min(abs(h.depth - prior.depth) / prior.depth, depth_trunc) / depth_trunc
    ang = float(np.arccos(np.clip(h.normal @ prior.normal, -1.0, 1.0)))
    ta = np.deg2rad(angle_trunc_deg)
    return lam * (rel + min(ang, ta) / ta)


def perturb(x: int, y: int, h: PlaneHypothesis, depth_range: DepthRange, cam: CameraIntrinsics,
            delta_d: float, delta_n: float, seed: int = 0, iteration: int = 0) -> list[PlaneHypothesis]:
    """The eight {current, perturbed, random} depth x normal combinations other than the incumbent.

    Draws come from the same counter-based streams the kernels use, keyed
    by ``(seed, iteration, pixel)``.
    """
    W = cam.width
    args = _stub_args(cam, depth_range, seed)
    ray = pixel_rays(np.array([x + 0.5]), np.array([y + 0.5]), cam)
    pix = np.array([y * W + x], dtype=np.uint64)
    out = []
    for d, n in _py.perturb_candidates(args, pix, ray, np.array([h.depth]), h.normal[None, :],
                                       iteration, delta_d, delta_n):
        out.append(PlaneHypothesis(float(d[0]), n[0]))
    return out


def _stub_args(cam, depth_range, seed):
    H, W = cam.height, cam.width
    z = np.zeros((1, 3, 3))
    return KernelArgs(ref=np.zeros((H, W)), ref_color=np.zeros((H, W, 3)), src=np.zeros((1, H, W)),
                      cam=cam.as_array(), rot=z, trans=np.zeros((1, 3)), rot_inv=z, trans_inv=np.zeros((1, 3)),
                      d_min=depth_range.d_min, d_max=depth_range.d_max, seed=seed)


# ------------------------------------------------------------------ grid-level API


def evaluate_grid(ctx: MatchContext, grid: HypothesisGrid) -> None:
    """Recompute per-view costs of every incumbent hypothesis in place."""
    H, W = grid.shape
    yy, xx = np.mgrid[0:H, 0:W]
    vc = _backend.kernels.photo_costs(ctx.args, yy.ravel(), xx.ravel(), grid.depth.ravel(), grid.normal.reshape(-1, 3))
    grid.view_cost[...] = vc.reshape(H, W, -1)


def extra_cost_grid(ctx: MatchContext, grid: HypothesisGrid) -> np.ndarray:
    """Stage-dependent extra cost of every incumbent under ``ctx.args.mode``."""
    H, W = grid.shape
    if ctx.args.mode == MODE_PHOTO:
        return np.zeros((H, W))
    yy, xx = np.mgrid[0:H, 0:W]
    ys, xs = yy.ravel(), xx.ravel()
    d = grid.depth.ravel()
    n = grid.normal.reshape(-1, 3)
    if ctx.args.mode == MODE_PLANAR:
        return _py.planar_costs(ctx.args, ys, xs, d, n).reshape(H, W)
    lrep, lcons = _backend.kernels.geom_terms(ctx.args, ys, xs, d, n)
    per_view = ctx.args.lam_rep * lrep + ctx.args.lam_cons * lcons[:, None]
    return _py.aggregate(per_view, grid.weights.reshape(H * W, -1)).reshape(H, W)


def refresh_costs(ctx: MatchContext, grid: HypothesisGrid, update_weights: bool = True) -> None:
    """Recompute view weights and stored costs of the incumbents (no new photometric evaluation)."""
    if update_weights:
        grid.weights[...] = update_view_weights(grid.view_cost)
    grid.photo_cost[...] = aggregate_cost(grid.view_cost, grid.weights)
    grid.cost[...] = grid.photo_cost + extra_cost_grid(ctx, grid)


def _sweep(ctx, grid, phase, iteration, delta_d, delta_n, propagate, do_perturb):
    _backend.kernels.sweep_phase(ctx.args, grid.depth, grid.normal, grid.cost, grid.photo_cost,
                                 grid.view_cost, grid.weights, phase, iteration, delta_d, delta_n,
                                 propagate, do_perturb)


def propagate_checkerboard(grid: HypothesisGrid, phase: int, ctx: MatchContext, iteration: int = 0) -> HypothesisGrid:
    """Adopt, for every pixel of color ``phase``, the best of the incumbent and the
    region-wise best neighbours of the other color (re-anchored at the pixel).

    The extra cost follows ``ctx.args.mode``.  Updates ``grid`` in place and returns it.
    """
    _sweep(ctx, grid, phase, iteration, 0.0, 0.0, True, False)
    return grid


def perturb_phase(grid: HypothesisGrid, phase: int, ctx: MatchContext, iteration: int,
                  delta_d: float, delta_n: float) -> HypothesisGrid:
    _sweep(ctx, grid, phase, iteration, delta_d, delta_n, False, True)
    return grid


def run_stage(ctx: MatchContext, grid: HypothesisGrid, params: MatchParams, stage: str,
              n_iterations: int | None = None, prior: PlanarPriorField | None = None,
              iteration_base: int = 0, on_iteration=None) -> HypothesisGrid:
    """Run ``n_iterations`` red/black rounds of propagation + perturbation.

    ``stage`` picks the extra cost: none, planar prior (``prior``) or the
    geometric terms (configure ``ctx.set_geometric`` first).  The
    perturbation magnitudes halve every iteration.
    """
    if stage not in STAGES:
        raise InvalidInputError(f"unknown stage {stage!r}")
    if n_iterations is None:
        n_iterations = {"photometric": params.n_photo, "planar": params.n_planar}.get(stage, 0)
    if n_iterations <= 0:
        return grid
    ctx.args.mode = STAGES[stage]
    if stage == "planar":
        ctx.set_planar(prior, params)
    delta_d, delta_n = params.perturbation(stage)
    evaluate_grid(ctx, grid)
    for it in range(n_iterations):
        if stage == "geometric":
            ctx.args.cons_depth = grid.depth.copy()
        refresh_costs(ctx, grid)
        scale = 0.5**it
        for phase in (0, 1):
            _sweep(ctx, grid, phase, iteration_base + 2 * it + phase, delta_d * scale, delta_n * scale, True, True)
        if on_iteration is not None:
            on_iteration(it, grid)
    return grid


# ------------------------------------------------------------------ planar priors


def _triangle_min_angle(A, B, C):
    def ang(P, Q, R):
        u = Q - P
        v = R - P
        cu = np.linalg.norm(u, axis=-1)
        cv = np.linalg.norm(v, axis=-1)
        c = np.sum(u * v, axis=-1) / np.maximum(cu * cv, 1e-300)
        return np.degrees(np.arccos(np.clip(c, -1.0, 1.0)))

    return np.minimum(np.minimum(ang(A, B, C), ang(B, C, A)), ang(C, A, B))


def triangle_planes(px, py, depths, cam: CameraIntrinsics):
    """Delaunay-triangulate pixel positions and fit a 3D plane per triangle.

    Returns ``(tri, normals, offsets, min_angle_deg)`` where each plane is
    ``n.X + c = 0`` with ``n`` oriented toward the camera.
    """
    pts = np.stack([px, py], axis=1)
    tri = Delaunay(pts)
    X = depths[:, None] * pixel_rays(px, py, cam)
    A, B, C = (X[tri.simplices[:, i]] for i in range(3))
    n = np.cross(B - A, C - A)
    nn = np.linalg.norm(n, axis=1, keepdims=True)
    n = n / np.where(nn > 0, nn, 1.0)
    n = np.where((np.sum(n * A, axis=1) > 0)[:, None], -n, n)
    c = -np.sum(n * A, axis=1)
    return tri, n, c, _triangle_min_angle(A, B, C)


def build_planar_priors(grid: HypothesisGrid, cam: CameraIntrinsics, depth_range: DepthRange,
                        threshold: float = 0.1, cell: int = 1,
                        min_angle_deg: float = 1.0) -> PlanarPriorField:
    """Planes of a Delaunay mesh over reliable pixels (aggregated cost below ``threshold``).

    With ``cell > 1`` only the lowest-cost reliable pixel of every
    ``cell x cell`` block becomes a vertex.
    """
    H, W = grid.shape
    field_ = PlanarPriorField.empty((H, W))
    reliable = grid.photo_cost < threshold
    if cell > 1 and np.any(reliable):
        c = np.where(reliable, grid.photo_cost, np.inf)
        Hc, Wc = -(-H // cell), -(-W // cell)
        pad = np.full((Hc * cell, Wc * cell), np.inf)
        pad[:H, :W] = c
        blocks = pad.reshape(Hc, cell, Wc, cell).transpose(0, 2, 1, 3).reshape(Hc, Wc, cell * cell)
        arg = blocks.argmin(axis=2)
        ok = np.isfinite(np.take_along_axis(blocks, arg[..., None], axis=2)[..., 0])
        by, bx = np.nonzero(ok)
        vy = by * cell + arg[ok] // cell
        vx = bx * cell + arg[ok] % cell
    else:
        vy, vx = np.nonzero(reliable)
    if vy.size < 3:
        return field_
    px = vx + 0.5
    py = vy + 0.5
    try:
        tri, n, c, min_ang = triangle_planes(px, py, grid.depth[vy, vx], cam)
    except QhullError:
        return field_
    keep = min_ang >= min_angle_deg
    yy, xx = np.mgrid[0:H, 0:W]
    simplex = tri.find_simplex(np.stack([xx.ravel() + 0.5, yy.ravel() + 0.5], axis=1)).reshape(H, W)
    inside = simplex >= 0
    sid = np.where(inside, simplex, 0)
    inside &= keep[sid]
    rays = pixel_rays(xx + 0.5, yy + 0.5, cam)
    nn = n[sid]
    den = np.sum(nn * rays, axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(den < 0, -c[sid] / den, np.nan)
    ok = inside & np.isfinite(d) & (d >= depth_range.d_min) & (d <= depth_range.d_max)
    field_.depth = np.where(ok, d, np.nan)
    field_.normal = np.where(ok[..., None], nn, 0.0)
    field_.vertices = np.stack([px, py], axis=1)
    field_.triangles = tri.simplices
    field_.kept = keep
    return field_
