# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels (see ``_pykernels`` for semantics)."""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sqrt, exp, cos, sin, acos, fabs, floor, hypot, isfinite, M_PI
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

BACKEND = "cython"

DEF MAXK = 16
DEF MAXS = 256

cdef double MAX_COST = 2.0
cdef double VAR_EPS = 1e-10
cdef double VIEW_BETA = 0.3
cdef double BORDER_EPS = 1e-9

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t M1 = 0xBF58476D1CE4E5B9ULL
cdef uint64_t M2 = 0x94D049BB133111EBULL
cdef uint64_t C_IT = 0x632BE59BD9B4E019ULL
cdef uint64_t C_DRAW = 0x8CB92BA72F3D8DD7ULL
cdef double INV53 = 1.0 / 9007199254740992.0

cdef int TAG_PERTURB = 2


cdef inline uint64_t _mix(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * M1
    z = (z ^ (z >> 27)) * M2
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t seed, uint64_t tag, uint64_t it, uint64_t pix, uint64_t draw) noexcept nogil:
    cdef uint64_t h = _mix(seed + GOLDEN * (tag + 1))
    h = _mix(h ^ (it * GOLDEN + C_IT))
    h = _mix(h ^ pix)
    h = _mix(h ^ (draw + C_DRAW))
    return <double>(h >> 11) * INV53


def uniform(uint64_t seed, uint64_t tag, uint64_t it, uint64_t pix, uint64_t draw):
    return _uniform(seed, tag, it, pix, draw)


cdef struct Ctx:
    int H
    int W
    int K
    double fx, fy, cx, cy
    double* ref
    double* ref_color
    double* src
    double* rot
    double* trans
    double* rot_inv
    double* trans_inv
    double* src_depth
    double* cons_depth
    double* prior_depth
    double* prior_normal
    int64_t* offsets
    int S
    int mode
    double d_min, d_max
    double lam_planar, planar_td, planar_ta
    double lam_rep, lam_cons, tau
    int omega
    uint64_t seed


cdef class _Holder:
    """Keeps the contiguous arrays alive while raw pointers into them are in use."""
    cdef Ctx ctx
    cdef object keep


cdef double* _ptr(cnp.ndarray a):
    return <double*> cnp.PyArray_DATA(a)


cdef _Holder _make(args):
    cdef _Holder h = _Holder()
    arrays = [
        np.ascontiguousarray(args.ref, dtype=np.float64),
        np.ascontiguousarray(args.ref_color, dtype=np.float64),
        np.ascontiguousarray(args.src, dtype=np.float64),
        np.ascontiguousarray(args.rot, dtype=np.float64),
        np.ascontiguousarray(args.trans, dtype=np.float64),
        np.ascontiguousarray(args.rot_inv, dtype=np.float64),
        np.ascontiguousarray(args.trans_inv, dtype=np.float64),
        np.ascontiguousarray(args.src_depth, dtype=np.float64),
        np.ascontiguousarray(args.cons_depth, dtype=np.float64),
        np.ascontiguousarray(args.prior_depth, dtype=np.float64),
        np.ascontiguousarray(args.prior_normal, dtype=np.float64),
        np.ascontiguousarray(args.offsets, dtype=np.int64),
    ]
    h.keep = arrays
    h.ctx.H = args.ref.shape[0]
    h.ctx.W = args.ref.shape[1]
    h.ctx.K = args.src.shape[0]
    if h.ctx.K > MAXK:
        raise ValueError(f"at most {MAXK} source views supported")
    h.ctx.fx = args.cam[0]
    h.ctx.fy = args.cam[1]
    h.ctx.cx = args.cam[2]
    h.ctx.cy = args.cam[3]
    h.ctx.ref = _ptr(arrays[0])
    h.ctx.ref_color = _ptr(arrays[1])
    h.ctx.src = _ptr(arrays[2])
    h.ctx.rot = _ptr(arrays[3])
    h.ctx.trans = _ptr(arrays[4])
    h.ctx.rot_inv = _ptr(arrays[5])
    h.ctx.trans_inv = _ptr(arrays[6])
    h.ctx.src_depth = _ptr(arrays[7])
    h.ctx.cons_depth = _ptr(arrays[8])
    h.ctx.prior_depth = _ptr(arrays[9])
    h.ctx.prior_normal = _ptr(arrays[10])
    h.ctx.offsets = <int64_t*> cnp.PyArray_DATA(arrays[11])
    h.ctx.S = arrays[11].shape[0]
    if h.ctx.S > MAXS:
        raise ValueError("patch window too large")
    h.ctx.mode = args.mode
    h.ctx.d_min = args.d_min
    h.ctx.d_max = args.d_max
    h.ctx.lam_planar = args.lam_planar
    h.ctx.planar_td = args.planar_td
    h.ctx.planar_ta = args.planar_ta
    h.ctx.lam_rep = args.lam_rep
    h.ctx.lam_cons = args.lam_cons
    h.ctx.tau = args.tau
    h.ctx.omega = args.omega_radius
    h.ctx.seed = <uint64_t> args.seed
    return h


cdef inline double _bilinear(double* img, int H, int W, double xs, double ys, int* valid) noexcept nogil:
    cdef double xc, yc, ax, ay
    cdef int x0, y0, x1, y1
    valid[0] = (xs >= -BORDER_EPS) and (xs <= W - 1 + BORDER_EPS) and (ys >= -BORDER_EPS) and (ys <= H - 1 + BORDER_EPS)
    xc = xs
    if xc < 0:
        xc = 0
    elif xc > W - 1:
        xc = W - 1
    yc = ys
    if yc < 0:
        yc = 0
    elif yc > H - 1:
        yc = H - 1
    if W > 1:
        x0 = <int> floor(xc)
        if x0 > W - 2:
            x0 = W - 2
    else:
        x0 = 0
    if H > 1:
        y0 = <int> floor(yc)
        if y0 > H - 2:
            y0 = H - 2
    else:
        y0 = 0
    ax = xc - x0
    ay = yc - y0
    x1 = x0 + 1
    if x1 > W - 1:
        x1 = W - 1
    y1 = y0 + 1
    if y1 > H - 1:
        y1 = H - 1
    return ((img[y0 * W + x0] * (1 - ax) + img[y0 * W + x1] * ax) * (1 - ay)
            + (img[y1 * W + x0] * (1 - ax) + img[y1 * W + x1] * ax) * ay)


cdef struct Patch:
    double r[MAXS]
    double u[MAXS]
    double v[MAXS]
    int ok[MAXS]
    double cpl


cdef inline void _patch(Ctx* c, int y, int x, double d, double* n, Patch* pt) noexcept nogil:
    """Reference samples of the window and the plane offset of hypothesis ``(d, n)``."""
    cdef int H = c.H, W = c.W, s, qx, qy
    cdef double fx = c.fx, fy = c.fy, cx = c.cx, cy = c.cy
    cdef double u, v
    pt.cpl = -d * (n[0] * (x + 0.5 - cx) / fx + n[1] * (y + 0.5 - cy) / fy + n[2])
    for s in range(c.S):
        qx = x + <int> c.offsets[2 * s]
        qy = y + <int> c.offsets[2 * s + 1]
        u = qx + 0.5
        v = qy + 0.5
        pt.u[s] = u
        pt.v[s] = v
        pt.ok[s] = (qx >= 0) and (qx < W) and (qy >= 0) and (qy < H)
        if pt.ok[s]:
            pt.r[s] = c.ref[qy * W + qx]
        else:
            pt.r[s] = 0.0
        if not (n[0] * (u - cx) / fx + n[1] * (v - cy) / fy + n[2]) < 0:
            pt.ok[s] = 0


cdef double _view_cost(Ctx* c, Patch* pt, double* n, int k) noexcept nogil:
    """``1 - NCC`` of the window warped into source ``k``."""
    cdef int H = c.H, W = c.W, S = c.S, s, sv
    cdef double fx = c.fx, fy = c.fy, cx = c.cx, cy = c.cy
    cdef double cpl = pt.cpl
    cdef double m00, m01, m02, m10, m11, m12, m20, m21, m22
    cdef double h00, h01, h02, h10, h11, h12, h20, h21, h22
    cdef double u, v, hx, hy, hw, sval, rv, cnt, sr, ss, srr, sss, srs, mr, ms, vr, vs, cov, cost
    cdef double* R = c.rot + 9 * k
    cdef double* t = c.trans + 3 * k
    cdef double* img = c.src + k * H * W
    if not cpl > 1e-12:
        return MAX_COST
    m00 = R[0] - t[0] * n[0] / cpl
    m01 = R[1] - t[0] * n[1] / cpl
    m02 = R[2] - t[0] * n[2] / cpl
    m10 = R[3] - t[1] * n[0] / cpl
    m11 = R[4] - t[1] * n[1] / cpl
    m12 = R[5] - t[1] * n[2] / cpl
    m20 = R[6] - t[2] * n[0] / cpl
    m21 = R[7] - t[2] * n[1] / cpl
    m22 = R[8] - t[2] * n[2] / cpl
    # H = K M K^-1 with K^-1 = [[1/fx, 0, -cx/fx], [0, 1/fy, -cy/fy], [0, 0, 1]]
    h00 = (fx * m00 + cx * m20) / fx
    h01 = (fx * m01 + cx * m21) / fy
    h02 = (fx * m00 + cx * m20) * (-cx / fx) + (fx * m01 + cx * m21) * (-cy / fy) + (fx * m02 + cx * m22)
    h10 = (fy * m10 + cy * m20) / fx
    h11 = (fy * m11 + cy * m21) / fy
    h12 = (fy * m10 + cy * m20) * (-cx / fx) + (fy * m11 + cy * m21) * (-cy / fy) + (fy * m12 + cy * m22)
    h20 = m20 / fx
    h21 = m21 / fy
    h22 = m20 * (-cx / fx) + m21 * (-cy / fy) + m22
    cnt = 0
    sr = 0
    ss = 0
    srr = 0
    sss = 0
    srs = 0
    for s in range(S):
        if not pt.ok[s]:
            continue
        u = pt.u[s]
        v = pt.v[s]
        hw = h20 * u + h21 * v + h22
        if not hw > 1e-12:
            continue
        hx = h00 * u + h01 * v + h02
        hy = h10 * u + h11 * v + h12
        sval = _bilinear(img, H, W, hx / hw - 0.5, hy / hw - 0.5, &sv)
        if not sv:
            continue
        rv = pt.r[s]
        cnt += 1
        sr += rv
        ss += sval
        srr += rv * rv
        sss += sval * sval
        srs += rv * sval
    if cnt <= 0 or 2 * cnt < S:
        return MAX_COST
    mr = sr / cnt
    ms = ss / cnt
    vr = srr / cnt - mr * mr
    vs = sss / cnt - ms * ms
    cov = srs / cnt - mr * ms
    if not (vr > VAR_EPS and vs > VAR_EPS):
        return MAX_COST
    cost = 1.0 - cov / sqrt(vr * vs)
    if cost < 0:
        cost = 0
    elif cost > MAX_COST:
        cost = MAX_COST
    return cost


cdef void _photo_views(Ctx* c, int y, int x, double d, double* n, double* out) noexcept nogil:
    cdef Patch pt
    cdef int k
    _patch(c, y, x, d, n, &pt)
    for k in range(c.K):
        out[k] = _view_cost(c, &pt, n, k)


cdef inline double _aggregate(double* v, double* w, int K) noexcept nogil:
    cdef double s = 0, sw = 0
    cdef int k
    for k in range(K):
        s += w[k] * v[k]
        sw += w[k]
    if sw > 0:
        return s / sw
    return MAX_COST


cdef void _lrep(Ctx* c, int y, int x, double d, double* out) noexcept nogil:
    cdef int H = c.H, W = c.W, k, inb
    cdef double fx = c.fx, fy = c.fy, cx = c.cx, cy = c.cy
    cdef double pu = x + 0.5, pv = y + 0.5
    cdef double X0 = d * (pu - cx) / fx, X1 = d * (pv - cy) / fy, X2 = d
    cdef double xs0, xs1, xs2, us, vs, ds, r0, r1, xr0, xr1, xr2, ru, rv, err
    cdef double* R
    cdef double* t
    for k in range(c.K):
        out[k] = c.tau
        R = c.rot + 9 * k
        t = c.trans + 3 * k
        xs0 = R[0] * X0 + R[1] * X1 + R[2] * X2 + t[0]
        xs1 = R[3] * X0 + R[4] * X1 + R[5] * X2 + t[1]
        xs2 = R[6] * X0 + R[7] * X1 + R[8] * X2 + t[2]
        if not xs2 > 0:
            continue
        us = fx * xs0 / xs2 + cx
        vs = fy * xs1 / xs2 + cy
        ds = _bilinear(c.src_depth + k * H * W, H, W, us - 0.5, vs - 0.5, &inb)
        if not inb or not ds > 0:
            continue
        r0 = ds * (us - cx) / fx
        r1 = ds * (vs - cy) / fy
        R = c.rot_inv + 9 * k
        t = c.trans_inv + 3 * k
        xr0 = R[0] * r0 + R[1] * r1 + R[2] * ds + t[0]
        xr1 = R[3] * r0 + R[4] * r1 + R[5] * ds + t[1]
        xr2 = R[6] * r0 + R[7] * r1 + R[8] * ds + t[2]
        if not xr2 > 0:
            continue
        ru = fx * xr0 / xr2 + cx
        rv = fy * xr1 / xr2 + cy
        err = hypot(ru - pu, rv - pv)
        if err < c.tau:
            out[k] = err


cdef double _lcons(Ctx* c, int y, int x, double d, double* n) noexcept nogil:
    cdef int H = c.H, W = c.W, R = c.omega, dx, dy, qx, qy
    cdef double fx = c.fx, fy = c.fy, cx = c.cx, cy = c.cy
    cdef double X0 = d * (x + 0.5 - cx) / fx, X1 = d * (y + 0.5 - cy) / fy, X2 = d
    cdef double* cp = c.ref_color + 3 * (y * W + x)
    cdef double* cq
    cdef double total = 0, count = 0, dq, e0, e1, e2, w, q0, q1
    for dy in range(-R, R + 1):
        for dx in range(-R, R + 1):
            if dx == 0 and dy == 0:
                continue
            qx = x + dx
            qy = y + dy
            if qx < 0 or qx >= W or qy < 0 or qy >= H:
                continue
            dq = c.cons_depth[qy * W + qx]
            if not dq > 0:
                continue
            cq = c.ref_color + 3 * (qy * W + qx)
            e0 = cq[0] - cp[0]
            e1 = cq[1] - cp[1]
            e2 = cq[2] - cp[2]
            w = exp(-sqrt(e0 * e0 + e1 * e1 + e2 * e2))
            q0 = dq * (qx + 0.5 - cx) / fx
            q1 = dq * (qy + 0.5 - cy) / fy
            total += w * fabs((q0 - X0) * n[0] + (q1 - X1) * n[1] + (dq - X2) * n[2])
            count += 1
    if count > 0:
        return total / (count * d)
    return 0.0


cdef double _extra(Ctx* c, int y, int x, double d, double* n, double* w) noexcept nogil:
    cdef double pd, rel, ang, dot, lc
    cdef double* pn
    cdef double per[MAXK]
    cdef int k
    if c.mode == 1:
        pd = c.prior_depth[y * c.W + x]
        if not isfinite(pd):
            return 0.0
        pn = c.prior_normal + 3 * (y * c.W + x)
        rel = fabs(d - pd) / pd
        if rel > c.planar_td:
            rel = c.planar_td
        dot = n[0] * pn[0] + n[1] * pn[1] + n[2] * pn[2]
        if dot > 1:
            dot = 1
        elif dot < -1:
            dot = -1
        ang = acos(dot)
        if ang > c.planar_ta:
            ang = c.planar_ta
        return c.lam_planar * (rel / c.planar_td + ang / c.planar_ta)
    if c.mode == 2:
        _lrep(c, y, x, d, per)
        lc = _lcons(c, y, x, d, n)
        for k in range(c.K):
            per[k] = c.lam_rep * per[k] + c.lam_cons * lc
        return _aggregate(per, w, c.K)
    return 0.0


cdef inline void _sphere(double u1, double u2, double* out) noexcept nogil:
    cdef double z = 2.0 * u1 - 1.0
    cdef double r = 1.0 - z * z
    cdef double phi = 2.0 * M_PI * u2
    if r < 0:
        r = 0
    r = sqrt(r)
    out[0] = r * cos(phi)
    out[1] = r * sin(phi)
    out[2] = z


cdef inline void _face(double* n, double r0, double r1, double r2) noexcept nogil:
    cdef double s = n[0] * r0 + n[1] * r1 + n[2] * r2
    cdef double rn
    if s > 0:
        n[0] = -n[0]
        n[1] = -n[1]
        n[2] = -n[2]
    elif s == 0:
        rn = sqrt(r0 * r0 + r1 * r1 + r2 * r2)
        n[0] = -r0 / rn
        n[1] = -r1 / rn
        n[2] = -r2 / rn


cdef struct Best:
    double d
    double n[3]
    double c
    double p
    double v[MAXK]


cdef inline void _consider(Ctx* c, int y, int x, double d, double* n, double* w, Best* b) noexcept nogil:
    # Views are scored one at a time; since every cost is >= 0, the partial
    # weighted sum bounds the aggregate from below and a candidate that can
    # no longer beat the incumbent is dropped early (same decision as a full
    # evaluation).
    cdef double views[MAXK]
    cdef double photo, tot, extra, sw = 0, acc = 0
    cdef int k
    cdef Patch pt
    for k in range(c.K):
        sw += w[k]
    extra = _extra(c, y, x, d, n, w)
    if sw > 0 and not extra < b.c:
        return
    _patch(c, y, x, d, n, &pt)
    for k in range(c.K):
        views[k] = _view_cost(c, &pt, n, k)
        acc += w[k] * views[k]
        if sw > 0 and not (acc / sw + extra < b.c):
            return
    photo = _aggregate(views, w, c.K)
    tot = photo + extra
    if tot < b.c:
        b.c = tot
        b.p = photo
        b.d = d
        b.n[0] = n[0]
        b.n[1] = n[1]
        b.n[2] = n[2]
        for k in range(c.K):
            b.v[k] = views[k]


cdef void _update_pixel(Ctx* c, int y, int x, double* depth, double* normal, double* cost,
                        double* photo_cost, double* view_cost, double* weights,
                        int64_t* reg_off, int64_t* reg_cnt, int reg_w,
                        uint64_t iteration, double delta_d, double delta_n,
                        int propagate, int perturb) noexcept nogil:
    cdef int H = c.H, W = c.W, K = c.K, r, j, qx, qy, bx, by, k, i, jj
    cdef int64_t p = y * W + x
    cdef double fx = c.fx, fy = c.fy, cx = c.cx, cy = c.cy
    cdef double rx = (x + 0.5 - cx) / fx, ry = (y + 0.5 - cy) / fy, rz = 1.0
    cdef double* w = weights + p * K
    cdef Best b
    cdef double qcost, bestq, dq, den, num, dc
    cdef double nq[3]
    cdef double cd[3]
    cdef double cn[9]
    cdef double axis[3]
    cdef double u_d, u_r, u_a, ang, cs, sn, dot, nrm
    cdef uint64_t seed = c.seed, upix = <uint64_t> p
    b.d = depth[p]
    b.n[0] = normal[3 * p]
    b.n[1] = normal[3 * p + 1]
    b.n[2] = normal[3 * p + 2]
    b.c = cost[p]
    b.p = photo_cost[p]
    for k in range(K):
        b.v[k] = view_cost[p * K + k]
    if propagate:
        for r in range(8):
            bestq = 1e300
            bx = -1
            by = -1
            for j in range(<int> reg_cnt[r]):
                qx = x + <int> reg_off[(r * reg_w + j) * 2]
                qy = y + <int> reg_off[(r * reg_w + j) * 2 + 1]
                if qx < 0 or qx >= W or qy < 0 or qy >= H:
                    continue
                qcost = cost[qy * W + qx]
                if qcost < bestq:
                    bestq = qcost
                    bx = qx
                    by = qy
            if bx < 0:
                continue
            nq[0] = normal[3 * (by * W + bx)]
            nq[1] = normal[3 * (by * W + bx) + 1]
            nq[2] = normal[3 * (by * W + bx) + 2]
            dq = depth[by * W + bx]
            den = nq[0] * rx + nq[1] * ry + nq[2] * rz
            num = (nq[0] * (bx + 0.5 - cx) / fx + nq[1] * (by + 0.5 - cy) / fy + nq[2]) * dq
            if not den < 0:
                continue
            dc = num / den
            if not (dc >= c.d_min and dc <= c.d_max):
                continue
            _consider(c, y, x, dc, nq, w, &b)
    if perturb:
        u_d = _uniform(seed, TAG_PERTURB, iteration, upix, 0)
        u_r = _uniform(seed, TAG_PERTURB, iteration, upix, 1)
        _sphere(_uniform(seed, TAG_PERTURB, iteration, upix, 2),
                _uniform(seed, TAG_PERTURB, iteration, upix, 3), axis)
        u_a = _uniform(seed, TAG_PERTURB, iteration, upix, 4)
        cd[0] = b.d
        cd[1] = b.d * (1.0 + delta_d * (2.0 * u_d - 1.0))
        if cd[1] < c.d_min:
            cd[1] = c.d_min
        elif cd[1] > c.d_max:
            cd[1] = c.d_max
        cd[2] = c.d_min + (c.d_max - c.d_min) * u_r
        cn[0] = b.n[0]
        cn[1] = b.n[1]
        cn[2] = b.n[2]
        ang = delta_n * (2.0 * u_a - 1.0)
        cs = cos(ang)
        sn = sin(ang)
        dot = axis[0] * cn[0] + axis[1] * cn[1] + axis[2] * cn[2]
        cn[3] = cn[0] * cs + (axis[1] * cn[2] - axis[2] * cn[1]) * sn + axis[0] * dot * (1.0 - cs)
        cn[4] = cn[1] * cs + (axis[2] * cn[0] - axis[0] * cn[2]) * sn + axis[1] * dot * (1.0 - cs)
        cn[5] = cn[2] * cs + (axis[0] * cn[1] - axis[1] * cn[0]) * sn + axis[2] * dot * (1.0 - cs)
        nrm = sqrt(cn[3] * cn[3] + cn[4] * cn[4] + cn[5] * cn[5])
        cn[3] /= nrm
        cn[4] /= nrm
        cn[5] /= nrm
        if not (cn[3] * rx + cn[4] * ry + cn[5] * rz < 0):
            cn[3] = cn[0]
            cn[4] = cn[1]
            cn[5] = cn[2]
        _sphere(_uniform(seed, TAG_PERTURB, iteration, upix, 5),
                _uniform(seed, TAG_PERTURB, iteration, upix, 6), &cn[6])
        _face(&cn[6], rx, ry, rz)
        for i in range(3):
            for jj in range(3):
                if i == 0 and jj == 0:
                    continue
                _consider(c, y, x, cd[i], &cn[3 * jj], w, &b)
    depth[p] = b.d
    normal[3 * p] = b.n[0]
    normal[3 * p + 1] = b.n[1]
    normal[3 * p + 2] = b.n[2]
    cost[p] = b.c
    photo_cost[p] = b.p
    for k in range(K):
        view_cost[p * K + k] = b.v[k]


def sweep_phase(args, double[:, ::1] depth, double[:, :, ::1] normal, double[:, ::1] cost,
                double[:, ::1] photo_cost, double[:, :, ::1] view_cost, double[:, :, ::1] weights,
                int phase, uint64_t iteration, double delta_d, double delta_n,
                bint propagate=True, bint perturb=True):
    from ._kernelargs import REGION_COUNTS, REGION_OFFSETS
    cdef _Holder h = _make(args)
    cdef Ctx* c = &h.ctx
    cdef cnp.ndarray ro = np.ascontiguousarray(REGION_OFFSETS, dtype=np.int64)
    cdef cnp.ndarray rc = np.ascontiguousarray(REGION_COUNTS, dtype=np.int64)
    cdef int64_t* reg_off = <int64_t*> cnp.PyArray_DATA(ro)
    cdef int64_t* reg_cnt = <int64_t*> cnp.PyArray_DATA(rc)
    cdef int reg_w = ro.shape[1]
    cdef int H = c.H, W = c.W
    cdef int half = (W + 1) // 2
    cdef int64_t n_slots = <int64_t> H * half
    cdef int64_t i
    cdef int y, x
    cdef int nthreads = max(1, int(args.threads))
    cdef int do_prop = propagate, do_pert = perturb
    for i in prange(n_slots, nogil=True, num_threads=nthreads, schedule="static"):
        y = <int> (i // half)
        x = <int> (2 * (i % half) + ((y + phase) % 2))
        if x < W:
            _update_pixel(c, y, x, &depth[0, 0], &normal[0, 0, 0], &cost[0, 0], &photo_cost[0, 0],
                          &view_cost[0, 0, 0], &weights[0, 0, 0], reg_off, reg_cnt, reg_w,
                          iteration, delta_d, delta_n, do_prop, do_pert)


def photo_costs(args, ys, xs, depth, normal):
    cdef _Holder h = _make(args)
    cdef Ctx* c = &h.ctx
    cdef const int64_t[::1] yv = np.ascontiguousarray(ys, dtype=np.int64)
    cdef const int64_t[::1] xv = np.ascontiguousarray(xs, dtype=np.int64)
    cdef const double[::1] dv = np.ascontiguousarray(depth, dtype=np.float64)
    cdef const double[:, ::1] nv = np.ascontiguousarray(np.reshape(normal, (-1, 3)), dtype=np.float64)
    cdef int64_t N = yv.shape[0], i
    out_arr = np.empty((N, c.K))
    cdef double[:, ::1] out = out_arr
    cdef int nthreads = max(1, int(args.threads))
    if N == 0:
        return out_arr
    for i in prange(N, nogil=True, num_threads=nthreads, schedule="static"):
        _photo_views(c, <int> yv[i], <int> xv[i], dv[i], <double*> &nv[i, 0], &out[i, 0])
    return out_arr


def geom_terms(args, ys, xs, depth, normal):
    cdef _Holder h = _make(args)
    cdef Ctx* c = &h.ctx
    cdef const int64_t[::1] yv = np.ascontiguousarray(ys, dtype=np.int64)
    cdef const int64_t[::1] xv = np.ascontiguousarray(xs, dtype=np.int64)
    cdef const double[::1] dv = np.ascontiguousarray(depth, dtype=np.float64)
    cdef const double[:, ::1] nv = np.ascontiguousarray(np.reshape(normal, (-1, 3)), dtype=np.float64)
    cdef int64_t N = yv.shape[0], i
    lrep_arr = np.empty((N, c.K))
    lcons_arr = np.empty(N)
    cdef double[:, ::1] lrep = lrep_arr
    cdef double[::1] lcons = lcons_arr
    cdef int nthreads = max(1, int(args.threads))
    if N == 0:
        return lrep_arr, lcons_arr
    for i in prange(N, nogil=True, num_threads=nthreads, schedule="static"):
        _lrep(c, <int> yv[i], <int> xv[i], dv[i], &lrep[i, 0])
        lcons[i] = _lcons(c, <int> yv[i], <int> xv[i], dv[i], <double*> &nv[i, 0])
    return lrep_arr, lcons_arr


def refine_half_sweep(double[:, ::1] depth, const double[:, ::1] d0, const double[:, ::1] conf,
                      const double[:, ::1] wr, const double[:, ::1] wd, double lam, int phase, int threads=1):
    cdef int H = depth.shape[0], W = depth.shape[1], y, x
    cdef double num, den, w
    for y in prange(H, nogil=True, num_threads=max(1, threads), schedule="static"):
        for x in range((y + phase) % 2, W, 2):
            num = conf[y, x] * d0[y, x]
            den = conf[y, x]
            if lam > 0:
                if x + 1 < W:
                    w = lam * wr[y, x]
                    num = num + w * depth[y, x + 1]
                    den = den + w
                if x > 0:
                    w = lam * wr[y, x - 1]
                    num = num + w * depth[y, x - 1]
                    den = den + w
                if y + 1 < H:
                    w = lam * wd[y, x]
                    num = num + w * depth[y + 1, x]
                    den = den + w
                if y > 0:
                    w = lam * wd[y - 1, x]
                    num = num + w * depth[y - 1, x]
                    den = den + w
            if den > 0:
                depth[y, x] = num / den


def fuse_claim(consistent, src_frames, src_lin, int ref_frame, ref_lin, consumed, int n_min):
    cdef const cnp.uint8_t[:, ::1] cons = np.ascontiguousarray(consistent, dtype=np.uint8)
    cdef const int64_t[::1] sf = np.ascontiguousarray(src_frames, dtype=np.int64)
    cdef const int64_t[:, ::1] sl = np.ascontiguousarray(src_lin, dtype=np.int64)
    cdef const int64_t[::1] rl = np.ascontiguousarray(ref_lin, dtype=np.int64)
    cdef cnp.uint8_t[:, ::1] used_flag = consumed
    cdef int64_t N = cons.shape[0], i
    cdef int K = cons.shape[1], k, navail
    emit_arr = np.zeros(N, dtype=bool)
    used_arr = np.zeros((N, K), dtype=bool)
    cdef cnp.uint8_t[::1] emit = emit_arr.view(np.uint8)
    cdef cnp.uint8_t[:, ::1] used = used_arr.view(np.uint8)
    for i in range(N):
        if used_flag[ref_frame, rl[i]]:
            continue
        navail = 0
        for k in range(K):
            if cons[i, k]:
                navail += 1
        if navail < n_min:
            continue
        emit[i] = 1
        used_flag[ref_frame, rl[i]] = 1
        for k in range(K):
            if cons[i, k] and not used_flag[sf[k], sl[i, k]]:
                used[i, k] = 1
                used_flag[sf[k], sl[i, k]] = 1
    return emit_arr, used_arr
