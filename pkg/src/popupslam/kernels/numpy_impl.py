"""Vectorized numpy implementations of the hot kernels.

These are the reference semantics; the numba twins in numba_impl.py must
agree to floating-point noise. Shapes use F = number of factors, P = number
of planes. Quaternions are (x, y, z, w); planes are (nx, ny, nz, d).
"""

from __future__ import annotations

import numpy as np

_SIGN_EPS = 1e-12


def _skew_batch(v: np.ndarray) -> np.ndarray:
    n = v.shape[0]
    W = np.zeros((n, 3, 3))
    W[:, 0, 1] = -v[:, 2]
    W[:, 0, 2] = v[:, 1]
    W[:, 1, 0] = v[:, 2]
    W[:, 1, 2] = -v[:, 0]
    W[:, 2, 0] = -v[:, 1]
    W[:, 2, 1] = v[:, 0]
    return W


def _quat_left_batch(q: np.ndarray) -> np.ndarray:
    """L(q) with q (x) p == L(q) @ p."""
    n = q.shape[0]
    L = np.zeros((n, 4, 4))
    v, w = q[:, :3], q[:, 3]
    L[:, :3, :3] = w[:, None, None] * np.eye(3)[None] + _skew_batch(v)
    L[:, :3, 3] = v
    L[:, 3, :3] = -v
    L[:, 3, 3] = w
    return L


def canonical_sign_batch(vec: np.ndarray) -> np.ndarray:
    """Rows flipped so their first component above 1e-12 is positive."""
    mask = np.abs(vec) > _SIGN_EPS
    first = np.argmax(mask, axis=1)
    lead = vec[np.arange(len(vec)), first]
    sign = np.where(lead < 0, -1.0, 1.0)
    return vec * sign[:, None]


def linearize_plane_factors(
    Rs: np.ndarray,
    ts: np.ndarray,
    qs: np.ndarray,
    ms: np.ndarray,
    sqrt_infos: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Residuals and Jacobians of plane measurement factors.

    Rs/ts: camera-to-world poses gathered per factor (F,3,3)/(F,3).
    qs: landmark minimal-plane quaternions (F,4).
    ms: measured minimal-plane quaternions, camera frame (F,4).
    sqrt_infos: (F,3,3) whitening blocks.

    Returns (residual (F,3), J_pose (F,3,6), J_plane (F,3,3)), all whitened.
    The pose chart is (rotvec in body frame, translation in world); the plane
    chart is the right-action quaternion retraction.
    """
    F = Rs.shape[0]
    qv, qw = qs[:, :3], qs[:, 3]

    gv = np.einsum("fji,fj->fi", Rs, qv)
    gw = np.einsum("fi,fi->f", ts, qv) + qw
    g = np.concatenate([gv, gw[:, None]], axis=1)
    nrm = np.linalg.norm(g, axis=1)
    ghat = g / nrm[:, None]

    minv = ms * np.array([-1.0, -1.0, -1.0, 1.0])
    Lm = _quat_left_batch(minv)
    Q = np.einsum("fij,fj->fi", Lm, ghat)
    s = np.where(Q[:, 3] < 0.0, -1.0, 1.0)
    Qs = Q * s[:, None]

    vn = np.linalg.norm(Qs[:, :3], axis=1)
    wq = Qs[:, 3]
    small = vn < 1e-8
    theta = 2.0 * np.arctan2(vn, wq)
    k = np.empty(F)
    k[small] = (2.0 / wq[small]) * (1.0 - vn[small] ** 2 / (3.0 * wq[small] ** 2))
    nz = ~small
    k[nz] = theta[nz] / vn[nz]
    res_raw = k[:, None] * Qs[:, :3]

    # d log / d Q at the sign-fixed unit quaternion
    Dlog = np.zeros((F, 3, 4))
    u = np.zeros((F, 3))
    u[nz] = Qs[nz, :3] / vn[nz, None]
    uu = np.einsum("fi,fj->fij", u, u)
    eye3 = np.eye(3)[None]
    Dlog[:, :, :3] = k[:, None, None] * (eye3 - uu) + 2.0 * wq[:, None, None] * uu
    Dlog[small, :, :3] = 2.0 * eye3
    Dlog[:, :, 3] = -2.0 * Qs[:, :3]

    G4 = s[:, None, None] * Lm
    N = (np.eye(4)[None] - np.einsum("fi,fj->fij", ghat, ghat)) / nrm[:, None, None]
    C = np.einsum("fij,fjk,fkl->fil", Dlog, G4, N)

    # d g / d pose chart
    dg_dw = np.zeros((F, 4, 3))
    dg_dw[:, :3, :] = _skew_batch(gv)
    dg_dv = np.zeros((F, 4, 3))
    dg_dv[:, 3, :] = qv

    # d g / d plane chart: A(T) @ (1/2) L(q)[:, :3]
    A = np.zeros((F, 4, 4))
    A[:, :3, :3] = np.swapaxes(Rs, 1, 2)
    A[:, 3, :3] = ts
    A[:, 3, 3] = 1.0
    Lq = _quat_left_batch(qs)
    dq_dd = 0.5 * Lq[:, :, :3]

    Jp = np.concatenate([C @ dg_dw, C @ dg_dv], axis=2)
    Jl = C @ A @ dq_dd

    res = np.einsum("fij,fj->fi", sqrt_infos, res_raw)
    Jp = sqrt_infos @ Jp
    Jl = sqrt_infos @ Jl
    return res, Jp, Jl


def popup_walls_batch(
    Rs: np.ndarray,
    ts: np.ndarray,
    px0: np.ndarray,
    px1: np.ndarray,
    fx: float,
    fy: float,
    cx: float,
    cy: float,
    ground_w: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Wall planes (camera frame, canonical sign) from edge pixels at given poses.

    Returns (walls (F,4), ok (F,)). Failed rows (parallel ray, non-positive
    depth, degenerate edge) are zero with ok False.
    """
    F = Rs.shape[0]
    gn, gd = ground_w[:3], float(ground_w[3])
    n_gc = np.einsum("fji,j->fi", Rs, gn)
    d_gc = ts @ gn + gd

    def rays(px):
        return np.stack([(px[:, 0] - cx) / fx, (px[:, 1] - cy) / fy, np.ones(F)], axis=1)

    r0, r1 = rays(px0), rays(px1)
    den0 = np.einsum("fi,fi->f", n_gc, r0)
    den1 = np.einsum("fi,fi->f", n_gc, r1)
    ok = (np.abs(den0) >= 1e-8) & (np.abs(den1) >= 1e-8)
    den0_safe = np.where(ok, den0, 1.0)
    den1_safe = np.where(ok, den1, 1.0)
    z0 = -d_gc / den0_safe
    z1 = -d_gc / den1_safe
    ok &= (z0 > 0.0) & (z1 > 0.0)
    p0 = z0[:, None] * r0
    p1 = z1[:, None] * r1
    edge = p1 - p0
    elen = np.linalg.norm(edge, axis=1)
    ok &= elen >= 1e-6
    nw = np.cross(n_gc, edge)
    nn = np.linalg.norm(nw, axis=1)
    ok &= nn >= 1e-6 * np.maximum(elen, 1e-30)
    nn_safe = np.where(nn > 0, nn, 1.0)
    nw = nw / nn_safe[:, None]
    dw = -np.einsum("fi,fi->f", nw, p0)
    walls = canonical_sign_batch(np.concatenate([nw, dw[:, None]], axis=1))
    walls[~ok] = 0.0
    return walls, ok


def render_scene_depth(
    planes: np.ndarray,
    origins: np.ndarray,
    axes_u: np.ndarray,
    axes_v: np.ndarray,
    extents: np.ndarray,
    R: np.ndarray,
    t: np.ndarray,
    fx: float,
    fy: float,
    cx: float,
    cy: float,
    width: int,
    height: int,
    stride: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Range map (distance along the ray) of bounded planar patches.

    planes (P,4) in world coordinates; each patch spans origin + [0,len_u]*u
    + [0,len_v]*v in its plane; a negative len_u marks an unbounded plane.
    Pixels sampled on a stride grid. Returns (range, plane index); misses are
    +inf range with index -1.
    """
    us = np.arange(0, width, stride, dtype=np.float64)
    vs = np.arange(0, height, stride, dtype=np.float64)
    uu, vv = np.meshgrid(us, vs)
    r = np.stack([(uu - cx) / fx, (vv - cy) / fy, np.ones_like(uu)], axis=-1)
    rnorm = np.linalg.norm(r, axis=-1)
    dir_w = r @ R.T

    best = np.full(uu.shape, np.inf)
    hit = np.full(uu.shape, -1, dtype=np.int32)
    for p in range(planes.shape[0]):
        n, d = planes[p, :3], planes[p, 3]
        denom = dir_w @ n
        num = -(d + float(n @ t))
        with np.errstate(divide="ignore", invalid="ignore"):
            t_hit = num / denom
        valid = (np.abs(denom) > 1e-12) & (t_hit > 1e-6)
        if not valid.any():
            continue
        t_hit = np.where(valid, t_hit, 0.0)
        pts = t[None, None, :] + t_hit[..., None] * dir_w
        if extents[p, 0] >= 0.0:
            q = pts - origins[p]
            pu = q @ axes_u[p]
            pv = q @ axes_v[p]
            valid &= (pu >= 0.0) & (pu <= extents[p, 0]) & (pv >= 0.0) & (pv <= extents[p, 1])
        rng = t_hit * rnorm
        win = valid & (rng < best)
        best = np.where(win, rng, best)
        hit = np.where(win, np.int32(p), hit)
    return best, hit


def fuse_depth_maps(
    d_ext: np.ndarray,
    v_ext: np.ndarray,
    d_pop: np.ndarray,
    v_pop: np.ndarray,
    var_max: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel inverse-variance fusion with fallback rules.

    External pixels that are missing (NaN/inf/<=0 depth or variance) or whose
    variance exceeds var_max are replaced by the pop-up value; pixels missing
    in both are NaN depth / inf variance.
    """
    ext_ok = (
        np.isfinite(d_ext) & (d_ext > 0) & np.isfinite(v_ext) & (v_ext > 0) & (v_ext <= var_max)
    )
    pop_ok = np.isfinite(d_pop) & (d_pop > 0) & np.isfinite(v_pop) & (v_pop > 0)

    d = np.full(d_ext.shape, np.nan)
    v = np.full(d_ext.shape, np.inf)

    both = ext_ok & pop_ok
    vsum = np.where(both, v_ext + v_pop, 1.0)
    d = np.where(both, (v_ext * d_pop + v_pop * d_ext) / vsum, d)
    v = np.where(both, v_ext * v_pop / vsum, v)

    only_ext = ext_ok & ~pop_ok
    d = np.where(only_ext, d_ext, d)
    v = np.where(only_ext, v_ext, v)

    only_pop = pop_ok & ~ext_ok
    d = np.where(only_pop, d_pop, d)
    v = np.where(only_pop, v_pop, v)
    return d, v
