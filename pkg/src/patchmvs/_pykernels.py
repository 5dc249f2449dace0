"""Pure-numpy implementations of the hot kernels.

These vectorise over the pixels of one checkerboard phase.  They define
the reference semantics; the compiled module must agree with them up to
floating-point summation order.
"""

from __future__ import annotations

import numpy as np

from . import rng
from ._kernelargs import MODE_GEOM, MODE_PLANAR, REGION_COUNTS, REGION_OFFSETS, KernelArgs

BACKEND = "python"

MAX_COST = 2.0
VAR_EPS = 1e-10
VIEW_BETA = 0.3
# samples this close outside the border count as inside (absorbs rounding on exact edges)
BORDER_EPS = 1e-9


def _rays(args: KernelArgs, us, vs):
    fx, fy, cx, cy = args.cam
    return np.stack([(us - cx) / fx, (vs - cy) / fy, np.ones_like(us)], axis=-1)


def _bilinear(img, xs, ys):
    """Sample ``img`` at index-space positions; returns (values, valid)."""
    H, W = img.shape[-2:]
    e = BORDER_EPS
    valid = (xs >= -e) & (xs <= W - 1 + e) & (ys >= -e) & (ys <= H - 1 + e)
    xc = np.clip(xs, 0, W - 1)
    yc = np.clip(ys, 0, H - 1)
    x0 = np.minimum(np.floor(xc).astype(np.int64), W - 2) if W > 1 else np.zeros(xc.shape, np.int64)
    y0 = np.minimum(np.floor(yc).astype(np.int64), H - 2) if H > 1 else np.zeros(yc.shape, np.int64)
    ax = xc - x0
    ay = yc - y0
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    v = (img[y0, x0] * (1 - ax) + img[y0, x1] * ax) * (1 - ay) + (img[y1, x0] * (1 - ax) + img[y1, x1] * ax) * ay
    return v, valid


def update_view_weights(view_cost):
    w = np.exp(-(view_cost**2) / (2.0 * VIEW_BETA**2))
    m = w.max(axis=-1, keepdims=True)
    return np.where(m > 0, w / np.where(m > 0, m, 1.0), 1.0)


def aggregate(view_cost, weights):
    sw = weights.sum(axis=-1)
    s = (weights * view_cost).sum(axis=-1)
    return np.where(sw > 0, s / np.where(sw > 0, sw, 1.0), MAX_COST)


def photo_costs(args: KernelArgs, ys, xs, depth, normal):
    """Per-view NCC costs (N, K) of plane hypotheses anchored at pixels (ys, xs)."""
    ys = np.asarray(ys, dtype=np.int64)
    xs = np.asarray(xs, dtype=np.int64)
    depth = np.asarray(depth, dtype=np.float64)
    normal = np.asarray(normal, dtype=np.float64)
    N = ys.shape[0]
    K = args.n_views
    H, W = args.shape
    fx, fy, cx, cy = args.cam
    out = np.full((N, K), MAX_COST)
    if N == 0:
        return out
    offs = args.offsets
    S = offs.shape[0]
    qx = xs[:, None] + offs[None, :, 0]
    qy = ys[:, None] + offs[None, :, 1]
    ref_valid = (qx >= 0) & (qx < W) & (qy >= 0) & (qy < H)
    rvals = args.ref[np.clip(qy, 0, H - 1), np.clip(qx, 0, W - 1)]
    u = qx + 0.5
    v = qy + 0.5
    rq = _rays(args, u, v)  # (N, S, 3)
    rp = _rays(args, xs + 0.5, ys + 0.5)
    c = -depth * np.einsum("ni,ni->n", normal, rp)  # plane n.X + c = 0
    nr = np.einsum("ni,nsi->ns", normal, rq)
    front = nr < 0
    good_plane = c > 1e-12
    Kmat = np.array([[fx, 0, cx], [0, fy, cy], [0, 0, 1.0]])
    Kinv = np.array([[1 / fx, 0, -cx / fx], [0, 1 / fy, -cy / fy], [0, 0, 1.0]])
    cs = np.where(good_plane, c, 1.0)
    for k in range(K):
        M = args.rot[k][None] - args.trans[k][None, :, None] * normal[:, None, :] / cs[:, None, None]
        Hm = Kmat[None] @ M @ Kinv[None]  # (N, 3, 3)
        hx = Hm[:, 0, 0, None] * u + Hm[:, 0, 1, None] * v + Hm[:, 0, 2, None]
        hy = Hm[:, 1, 0, None] * u + Hm[:, 1, 1, None] * v + Hm[:, 1, 2, None]
        hw = Hm[:, 2, 0, None] * u + Hm[:, 2, 1, None] * v + Hm[:, 2, 2, None]
        wpos = hw > 1e-12
        hws = np.where(wpos, hw, 1.0)
        sx = hx / hws - 0.5
        sy = hy / hws - 0.5
        svals, svalid = _bilinear(args.src[k], sx, sy)
        valid = ref_valid & front & wpos & svalid & good_plane[:, None]
        n = valid.sum(axis=1).astype(np.float64)
        ns = np.where(n > 0, n, 1.0)
        r = np.where(valid, rvals, 0.0)
        s = np.where(valid, svals, 0.0)
        mr = r.sum(axis=1) / ns
        ms = s.sum(axis=1) / ns
        vr = (r * r).sum(axis=1) / ns - mr * mr
        vs = (s * s).sum(axis=1) / ns - ms * ms
        cov = (r * s).sum(axis=1) / ns - mr * ms
        ok = (2 * n >= S) & (vr > VAR_EPS) & (vs > VAR_EPS)
        ncc = cov / np.sqrt(np.where(ok, vr * vs, 1.0))
        cost = np.clip(1.0 - ncc, 0.0, MAX_COST)
        out[:, k] = np.where(ok, cost, MAX_COST)
    return out


def geom_terms(args: KernelArgs, ys, xs, depth, normal):
    """Forward-backward reprojection errors (N, K) and depth-normal consistency (N,)."""
    ys = np.asarray(ys, dtype=np.int64)
    xs = np.asarray(xs, dtype=np.int64)
    depth = np.asarray(depth, dtype=np.float64)
    normal = np.asarray(normal, dtype=np.float64)
    N = ys.shape[0]
    K = args.n_views
    H, W = args.shape
    fx, fy, cx, cy = args.cam
    tau = args.tau
    pu = xs + 0.5
    pv = ys + 0.5
    Xp = depth[:, None] * _rays(args, pu, pv)
    lrep = np.full((N, K), tau)
    for k in range(K):
        Xs = Xp @ args.rot[k].T + args.trans[k]
        zs = Xs[:, 2]
        ok = zs > 0
        zss = np.where(ok, zs, 1.0)
        us = fx * Xs[:, 0] / zss + cx
        vs = fy * Xs[:, 1] / zss + cy
        ds, inb = _bilinear(args.src_depth[k], us - 0.5, vs - 0.5)
        ok &= inb & (ds > 0)
        Xs2 = np.where(ok, ds, 1.0)[:, None] * _rays(args, us, vs)
        Xr = Xs2 @ args.rot_inv[k].T + args.trans_inv[k]
        zr = Xr[:, 2]
        ok &= zr > 0
        zrs = np.where(zr > 0, zr, 1.0)
        ru = fx * Xr[:, 0] / zrs + cx
        rv = fy * Xr[:, 1] / zrs + cy
        err = np.hypot(ru - pu, rv - pv)
        lrep[:, k] = np.where(ok, np.minimum(err, tau), tau)
    lcons = depth_normal_consistency(args, ys, xs, depth, normal)
    return lrep, lcons


def depth_normal_consistency(args: KernelArgs, ys, xs, depth, normal):
    H, W = args.shape
    R = args.omega_radius
    N = ys.shape[0]
    pu = xs + 0.5
    pv = ys + 0.5
    Xp = depth[:, None] * _rays(args, pu, pv)
    cp = args.ref_color[ys, xs]
    total = np.zeros(N)
    count = np.zeros(N)
    for dy in range(-R, R + 1):
        for dx in range(-R, R + 1):
            if dx == 0 and dy == 0:
                continue
            qx = xs + dx
            qy = ys + dy
            inb = (qx >= 0) & (qx < W) & (qy >= 0) & (qy < H)
            qxc = np.clip(qx, 0, W - 1)
            qyc = np.clip(qy, 0, H - 1)
            dq = args.cons_depth[qyc, qxc]
            ok = inb & (dq > 0)
            Xq = dq[:, None] * _rays(args, qxc + 0.5, qyc + 0.5)
            w = np.exp(-np.sqrt(((args.ref_color[qyc, qxc] - cp) ** 2).sum(axis=1)))
            term = w * np.abs(((Xq - Xp) * normal).sum(axis=1))
            total += np.where(ok, term, 0.0)
            count += ok
    return np.where(count > 0, total / (np.where(count > 0, count, 1.0) * depth), 0.0)


def extra_costs(args: KernelArgs, ys, xs, depth, normal, weights):
    """Stage-dependent cost added to the aggregated photometric cost."""
    if args.mode == MODE_PLANAR:
        return planar_costs(args, ys, xs, depth, normal)
    if args.mode == MODE_GEOM:
        lrep, lcons = geom_terms(args, ys, xs, depth, normal)
        per_view = args.lam_rep * lrep + args.lam_cons * lcons[:, None]
        return aggregate(per_view, weights)
    return np.zeros(len(ys))


def planar_costs(args: KernelArgs, ys, xs, depth, normal):
    pd = args.prior_depth[ys, xs]
    pn = args.prior_normal[ys, xs]
    has = np.isfinite(pd)
    pds = np.where(has, pd, 1.0)
    rel = np.minimum(np.abs(depth - pds) / pds, args.planar_td) / args.planar_td
    ang = np.arccos(np.clip((normal * pn).sum(axis=1), -1.0, 1.0))
    angt = np.minimum(ang, args.planar_ta) / args.planar_ta
    return np.where(has, args.lam_planar * (rel + angt), 0.0)


def total_costs(args: KernelArgs, ys, xs, depth, normal, weights):
    views = photo_costs(args, ys, xs, depth, normal)
    photo = aggregate(views, weights)
    return photo + extra_costs(args, ys, xs, depth, normal, weights), photo, views


def _sphere(u1, u2):
    z = 2.0 * u1 - 1.0
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = 2.0 * np.pi * u2
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def _face(n, ray):
    s = (n * ray).sum(axis=-1)
    n = np.where(s[..., None] > 0, -n, n)
    zero = s == 0
    if np.any(zero):
        rn = ray / np.linalg.norm(ray, axis=-1, keepdims=True)
        n = np.where(zero[..., None], -rn, n)
    return n


def random_normals(args: KernelArgs, seed, tag, iteration, pix, draw0, rays):
    u1 = rng.uniform(seed, tag, iteration, pix, draw0)
    u2 = rng.uniform(seed, tag, iteration, pix, draw0 + 1)
    return _face(_sphere(u1, u2), rays)


def perturb_candidates(args: KernelArgs, pix, rays, depth, normal, iteration, delta_d, delta_n):
    """The eight non-incumbent combinations of {current, perturbed, random} depth x normal."""
    seed = args.seed
    tag = rng.TAG_PERTURB
    u_d = rng.uniform(seed, tag, iteration, pix, 0)
    u_r = rng.uniform(seed, tag, iteration, pix, 1)
    axis = _sphere(rng.uniform(seed, tag, iteration, pix, 2), rng.uniform(seed, tag, iteration, pix, 3))
    u_a = rng.uniform(seed, tag, iteration, pix, 4)
    d_pert = np.clip(depth * (1.0 + delta_d * (2.0 * u_d - 1.0)), args.d_min, args.d_max)
    d_rand = args.d_min + (args.d_max - args.d_min) * u_r
    ang = delta_n * (2.0 * u_a - 1.0)
    c = np.cos(ang)[:, None]
    s = np.sin(ang)[:, None]
    dot = (axis * normal).sum(axis=1, keepdims=True)
    n_pert = normal * c + np.cross(axis, normal) * s + axis * dot * (1.0 - c)
    n_pert /= np.linalg.norm(n_pert, axis=1, keepdims=True)
    n_pert = np.where(((n_pert * rays).sum(axis=1) < 0)[:, None], n_pert, normal)
    n_rand = random_normals(args, seed, tag, iteration, pix, 5, rays)
    ds = (depth, d_pert, d_rand)
    ns = (normal, n_pert, n_rand)
    out = []
    for i in range(3):
        for j in range(3):
            if i == 0 and j == 0:
                continue
            out.append((ds[i], ns[j]))
    return out


def sweep_phase(args: KernelArgs, depth, normal, cost, photo_cost, view_cost, weights,
                phase, iteration, delta_d, delta_n, propagate=True, perturb=True):
    """Propagation then perturbation for every pixel of one checkerboard color, in place."""
    H, W = args.shape
    yy, xx = np.mgrid[0:H, 0:W]
    sel = ((yy + xx) % 2) == phase
    ys = yy[sel]
    xs = xx[sel]
    N = ys.size
    if N == 0:
        return
    rays = _rays(args, xs + 0.5, ys + 0.5)
    best_d = depth[ys, xs].copy()
    best_n = normal[ys, xs].copy()
    best_c = cost[ys, xs].copy()
    best_p = photo_cost[ys, xs].copy()
    best_v = view_cost[ys, xs].copy()
    w = weights[ys, xs]

    def consider(cd, cn, mask):
        idx = np.nonzero(mask)[0]
        if idx.size == 0:
            return
        tc, pc, vc = total_costs(args, ys[idx], xs[idx], cd[idx], cn[idx], w[idx])
        better = tc < best_c[idx]
        j = idx[better]
        best_d[j] = cd[idx][better]
        best_n[j] = cn[idx][better]
        best_c[j] = tc[better]
        best_p[j] = pc[better]
        best_v[j] = vc[better]

    if propagate:
        snap_d = depth.copy()
        snap_n = normal.copy()
        snap_c = cost.copy()
        for r in range(8):
            offs = REGION_OFFSETS[r, : REGION_COUNTS[r]]
            qx = xs[:, None] + offs[None, :, 0]
            qy = ys[:, None] + offs[None, :, 1]
            inb = (qx >= 0) & (qx < W) & (qy >= 0) & (qy < H)
            qxc = np.clip(qx, 0, W - 1)
            qyc = np.clip(qy, 0, H - 1)
            qc = np.where(inb, snap_c[qyc, qxc], np.inf)
            j = np.argmin(qc, axis=1)
            have = np.isfinite(qc[np.arange(N), j])
            bx = qxc[np.arange(N), j]
            by = qyc[np.arange(N), j]
            nq = snap_n[by, bx]
            Xq = snap_d[by, bx][:, None] * _rays(args, bx + 0.5, by + 0.5)
            den = (nq * rays).sum(axis=1)
            num = (nq * Xq).sum(axis=1)
            dc = np.where(den < 0, num / np.where(den < 0, den, -1.0), -1.0)
            ok = have & (dc >= args.d_min) & (dc <= args.d_max)
            consider(np.where(ok, dc, 1.0), nq, ok)

    if perturb:
        pix = (ys * W + xs).astype(np.uint64)
        for cd, cn in perturb_candidates(args, pix, rays, best_d.copy(), best_n.copy(), iteration, delta_d, delta_n):
            consider(cd, cn, np.ones(N, dtype=bool))

    depth[ys, xs] = best_d
    normal[ys, xs] = best_n
    cost[ys, xs] = best_c
    photo_cost[ys, xs] = best_p
    view_cost[ys, xs] = best_v


def refine_half_sweep(depth, d0, conf, wr, wd, lam, phase, threads=1):
    """One red or black Gauss-Seidel half sweep of the confidence-weighted quadratic energy."""
    H, W = depth.shape
    num = conf * d0
    den = conf.copy()
    if lam > 0:
        num = num.copy()
        # right / left neighbours
        num[:, :-1] += lam * wr * depth[:, 1:]
        den[:, :-1] += lam * wr
        num[:, 1:] += lam * wr * depth[:, :-1]
        den[:, 1:] += lam * wr
        num[:-1, :] += lam * wd * depth[1:, :]
        den[:-1, :] += lam * wd
        num[1:, :] += lam * wd * depth[:-1, :]
        den[1:, :] += lam * wd
    yy, xx = np.mgrid[0:H, 0:W]
    sel = (((yy + xx) % 2) == phase) & (den > 0)
    depth[sel] = num[sel] / den[sel]


def fuse_claim(consistent, src_frames, src_lin, ref_frame, ref_lin, consumed, n_min):
    """Sequential first-come claiming of consistent observations.

    A still unconsumed reference pixel with at least ``n_min`` consistent
    sources produces a point; of its consistent observations only the ones
    no earlier point consumed are merged.  Returns ``(emit, used)``.
    """
    N, K = consistent.shape
    emit = np.zeros(N, dtype=bool)
    used = np.zeros((N, K), dtype=bool)
    for i in range(N):
        if consumed[ref_frame, ref_lin[i]]:
            continue
        if int(consistent[i].sum()) < n_min:
            continue
        emit[i] = True
        consumed[ref_frame, ref_lin[i]] = 1
        for k in range(K):
            if consistent[i, k] and not consumed[src_frames[k], src_lin[i, k]]:
                used[i, k] = True
                consumed[src_frames[k], src_lin[i, k]] = 1
    return emit, used
