"""Numba twins of the numpy kernels. Same signatures, same semantics.

Loop bodies are written with scalar math ra­ther than small temporaries where
it matters; everything is cached so the JIT cost is paid once per machine.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _canonical_sign_inplace(vec):
    for f in range(vec.shape[0]):
        s = 0.0
        for k in range(vec.shape[1]):
            if abs(vec[f, k]) > 1e-12:
                s = -1.0 if vec[f, k] < 0.0 else 1.0
                break
        if s < 0.0:
            for k in range(vec.shape[1]):
                vec[f, k] = -vec[f, k]


@njit(cache=True)
def linearize_plane_factors(Rs, ts, qs, ms, sqrt_infos):
    F = Rs.shape[0]
    res = np.zeros((F, 3))
    Jp = np.zeros((F, 3, 6))
    Jl = np.zeros((F, 3, 3))
    for f in range(F):
        R = Rs[f]
        t = ts[f]
        q = qs[f]
        m = ms[f]

        # g = A(T) q
        g = np.zeros(4)
        for i in range(3):
            g[i] = R[0, i] * q[0] + R[1, i] * q[1] + R[2, i] * q[2]
        g[3] = t[0] * q[0] + t[1] * q[1] + t[2] * q[2] + q[3]
        nrm = np.sqrt(g[0] ** 2 + g[1] ** 2 + g[2] ** 2 + g[3] ** 2)
        ghat = g / nrm

        # L(m^-1)
        Lm = np.zeros((4, 4))
        mv0, mv1, mv2, mw = -m[0], -m[1], -m[2], m[3]
        Lm[0, 0] = mw
        Lm[0, 1] = -mv2
        Lm[0, 2] = mv1
        Lm[1, 0] = mv2
        Lm[1, 1] = mw
        Lm[1, 2] = -mv0
        Lm[2, 0] = -mv1
        Lm[2, 1] = mv0
        Lm[2, 2] = mw
        Lm[0, 3] = mv0
        Lm[1, 3] = mv1
        Lm[2, 3] = mv2
        Lm[3, 0] = -mv0
        Lm[3, 1] = -mv1
        Lm[3, 2] = -mv2
        Lm[3, 3] = mw

        Q = Lm @ ghat
        s = -1.0 if Q[3] < 0.0 else 1.0
        Q = Q * s

        vn = np.sqrt(Q[0] ** 2 + Q[1] ** 2 + Q[2] ** 2)
        wq = Q[3]
        if vn < 1e-8:
            k = (2.0 / wq) * (1.0 - vn * vn / (3.0 * wq * wq))
        else:
            k = 2.0 * np.arctan2(vn, wq) / vn
        r_raw = k * Q[:3]

        Dlog = np.zeros((3, 4))
        if vn < 1e-8:
            for i in range(3):
                Dlog[i, i] = 2.0
        else:
            u = Q[:3] / vn
            for i in range(3):
                for j in range(3):
                    uu = u[i] * u[j]
                    Dlog[i, j] = k * ((1.0 if i == j else 0.0) - uu) + 2.0 * wq * uu
        for i in range(3):
            Dlog[i, 3] = -2.0 * Q[i]

        # C = Dlog @ (s * Lm) @ (I - ghat ghat^T)/nrm
        N = np.zeros((4, 4))
        for i in range(4):
            for j in range(4):
                N[i, j] = ((1.0 if i == j else 0.0) - ghat[i] * ghat[j]) / nrm
        C = Dlog @ (s * Lm) @ N

        # pose blocks: dg/dw = [skew(gv); 0], dg/dv = [0; qv^T]
        gv0, gv1, gv2 = g[0], g[1], g[2]
        dg_dw = np.zeros((4, 3))
        dg_dw[0, 1] = -gv2
        dg_dw[0, 2] = gv1
        dg_dw[1, 0] = gv2
        dg_dw[1, 2] = -gv0
        dg_dw[2, 0] = -gv1
        dg_dw[2, 1] = gv0
        dg_dv = np.zeros((4, 3))
        dg_dv[3, 0] = q[0]
        dg_dv[3, 1] = q[1]
        dg_dv[3, 2] = q[2]

        A = np.zeros((4, 4))
        for i in range(3):
            for j in range(3):
                A[i, j] = R[j, i]
        A[3, 0] = t[0]
        A[3, 1] = t[1]
        A[3, 2] = t[2]
        A[3, 3] = 1.0

        Lq3 = np.zeros((4, 3))
        Lq3[0, 0] = q[3]
        Lq3[0, 1] = -q[2]
        Lq3[0, 2] = q[1]
        Lq3[1, 0] = q[2]
        Lq3[1, 1] = q[3]
        Lq3[1, 2] = -q[0]
        Lq3[2, 0] = -q[1]
        Lq3[2, 1] = q[0]
        Lq3[2, 2] = q[3]
        Lq3[3, 0] = -q[0]
        Lq3[3, 1] = -q[1]
        Lq3[3, 2] = -q[2]

        Jp_f = np.zeros((3, 6))
        JW = C @ dg_dw
        JV = C @ dg_dv
        for i in range(3):
            for j in range(3):
                Jp_f[i, j] = JW[i, j]
                Jp_f[i, 3 + j] = JV[i, j]
        Jl_f = C @ A @ (0.5 * Lq3)

        S = sqrt_infos[f]
        res[f] = S @ r_raw
        Jp[f] = S @ Jp_f
        Jl[f] = S @ Jl_f
    return res, Jp, Jl


@njit(cache=True)
def popup_walls_batch(Rs, ts, px0, px1, fx, fy, cx, cy, ground_w):
    F = Rs.shape[0]
    walls = np.zeros((F, 4))
    ok = np.zeros(F, dtype=np.bool_)
    gn0, gn1, gn2, gd = ground_w[0], ground_w[1], ground_w[2], ground_w[3]
    for f in range(F):
        R = Rs[f]
        t = ts[f]
        n0 = R[0, 0] * gn0 + R[1, 0] * gn1 + R[2, 0] * gn2
        n1 = R[0, 1] * gn0 + R[1, 1] * gn1 + R[2, 1] * gn2
        n2 = R[0, 2] * gn0 + R[1, 2] * gn1 + R[2, 2] * gn2
        dc = t[0] * gn0 + t[1] * gn1 + t[2] * gn2 + gd

        r0x = (px0[f, 0] - cx) / fx
        r0y = (px0[f, 1] - cy) / fy
        r1x = (px1[f, 0] - cx) / fx
        r1y = (px1[f, 1] - cy) / fy
        den0 = n0 * r0x + n1 * r0y + n2
        den1 = n0 * r1x + n1 * r1y + n2
        if abs(den0) < 1e-8 or abs(den1) < 1e-8:
            continue
        z0 = -dc / den0
        z1 = -dc / den1
        if z0 <= 0.0 or z1 <= 0.0:
            continue
        p0x, p0y, p0z = z0 * r0x, z0 * r0y, z0
        p1x, p1y, p1z = z1 * r1x, z1 * r1y, z1
        ex, ey, ez = p1x - p0x, p1y - p0y, p1z - p0z
        elen = np.sqrt(ex * ex + ey * ey + ez * ez)
        if elen < 1e-6:
            continue
        wx = n1 * ez - n2 * ey
        wy = n2 * ex - n0 * ez
        wz = n0 * ey - n1 * ex
        nn = np.sqrt(wx * wx + wy * wy + wz * wz)
        if nn < 1e-6 * elen:
            continue
        wx, wy, wz = wx / nn, wy / nn, wz / nn
        dw = -(wx * p0x + wy * p0y + wz * p0z)
        walls[f, 0] = wx
        walls[f, 1] = wy
        walls[f, 2] = wz
        walls[f, 3] = dw
        ok[f] = True
    _canonical_sign_inplace(walls)
    for f in range(F):
        if not ok[f]:
            for k in range(4):
                walls[f, k] = 0.0
    return walls, ok


@njit(cache=True)
def render_scene_depth(planes, origins, axes_u, axes_v, extents, R, t, fx, fy, cx, cy, width, height, stride):
    nu = (width + stride - 1) // stride
    nv = (height + stride - 1) // stride
    best = np.full((nv, nu), np.inf)
    hit = np.full((nv, nu), -1, dtype=np.int32)
    P = planes.shape[0]
    for iv in range(nv):
        v = float(iv * stride)
        ry = (v - cy) / fy
        for iu in range(nu):
            u = float(iu * stride)
            rx = (u - cx) / fx
            rnorm = np.sqrt(rx * rx + ry * ry + 1.0)
            dx = R[0, 0] * rx + R[0, 1] * ry + R[0, 2]
            dy = R[1, 0] * rx + R[1, 1] * ry + R[1, 2]
            dz = R[2, 0] * rx + R[2, 1] * ry + R[2, 2]
            for p in range(P):
                n0, n1, n2, d = planes[p, 0], planes[p, 1], planes[p, 2], planes[p, 3]
                denom = n0 * dx + n1 * dy + n2 * dz
                if abs(denom) <= 1e-12:
                    continue
                t_hit = -(d + n0 * t[0] + n1 * t[1] + n2 * t[2]) / denom
                if t_hit <= 1e-6:
                    continue
                rng = t_hit * rnorm
                if rng >= best[iv, iu]:
                    continue
                if extents[p, 0] >= 0.0:
                    qx = t[0] + t_hit * dx - origins[p, 0]
                    qy = t[1] + t_hit * dy - origins[p, 1]
                    qz = t[2] + t_hit * dz - origins[p, 2]
                    pu = qx * axes_u[p, 0] + qy * axes_u[p, 1] + qz * axes_u[p, 2]
                    if pu < 0.0 or pu > extents[p, 0]:
                        continue
                    pv = qx * axes_v[p, 0] + qy * axes_v[p, 1] + qz * axes_v[p, 2]
                    if pv < 0.0 or pv > extents[p, 1]:
                        continue
                best[iv, iu] = rng
                hit[iv, iu] = p
    return best, hit


@njit(cache=True)
def fuse_depth_maps(d_ext, v_ext, d_pop, v_pop, var_max):
    h, w = d_ext.shape
    d = np.full((h, w), np.nan)
    v = np.full((h, w), np.inf)
    for i in range(h):
        for j in range(w):
            de, ve = d_ext[i, j], v_ext[i, j]
            dp, vp = d_pop[i, j], v_pop[i, j]
            ext_ok = np.isfinite(de) and de > 0.0 and np.isfinite(ve) and ve > 0.0 and ve <= var_max
            pop_ok = np.isfinite(dp) and dp > 0.0 and np.isfinite(vp) and vp > 0.0
            if ext_ok and pop_ok:
                vsum = ve + vp
                d[i, j] = (ve * dp + vp * de) / vsum
                v[i, j] = ve * vp / vsum
            elif ext_ok:
                d[i, j] = de
                v[i, j] = ve
            elif pop_ok:
                d[i, j] = dp
                v[i, j] = vp
    return d, v
