"""Factor types and their residuals/Jacobians.

Residual conventions
--------------------
* Pose chart: delta = (rotvec in body frame, translation in world); a pose
  updates as (R exp(w), t + v).
* Prior on pose T with prior value T_p:
      r = [ Log(R_p^T R), t - t_p ]
* Odometry between poses i and j with measured delta Z (camera i -> camera j):
      r = [ Log(R_z^T R_i^T R_j), R_i^T (t_j - t_i) - t_z ]
* Plane measurement of landmark q (world, minimal form) from pose T with
  measured camera-frame plane m:
      q_pred = normalize(A(T) q),  A(T) = [[R^T, 0], [t^T, 1]]
      r = log(m^-1 (x) q_pred)
  where the quaternion product is sign-fixed to the shortest arc. A(T) is the
  plane transport world -> camera written on the quaternion 4-vector.

All factors carry diagonal noise as per-axis standard deviations; the
whitened residual is r / sigma per axis, so chi^2 sums squared whitened
residuals.

The scalar functions here are the readable reference; the batch versions
(linearize_* below and the kernels module) are what the optimizer calls.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import HomogeneousPlane, Pose
from .minimal import MinimalPlane, quat_conj, quat_log_shortest, quat_mul
from .rotations import skew, so3_log, so3_log_batch, so3_right_jacobian_inv_batch


@dataclass
class PopupSource:
    """Provenance of a plane measurement, enough to re-pop-up later.

    kind "ground" needs no pixels; kind "wall" stores the image edge
    endpoints ((u0, v0), (u1, v1)).
    """

    frame_id: int
    kind: str
    pixels: Optional[np.ndarray] = None


@dataclass
class PriorPoseFactor:
    pose_id: int
    prior: Pose
    sigmas: np.ndarray  # (6,) rot then trans


@dataclass
class OdometryFactor:
    i: int
    j: int
    delta: Pose
    sigmas: np.ndarray  # (6,)


@dataclass
class PlaneMeasurementFactor:
    pose_id: int
    landmark_id: int
    measured: MinimalPlane
    sigmas: np.ndarray  # (3,)
    source: Optional[PopupSource] = None


def _check_sigmas(sigmas, k):
    s = np.asarray(sigmas, dtype=float).reshape(k)
    if not np.all(s > 0):
        raise ValueError("noise sigmas must be positive")
    return s


def prior_residual(pose: Pose, factor: PriorPoseFactor) -> np.ndarray:
    return np.concatenate(
        [so3_log(factor.prior.R.T @ pose.R), pose.t - factor.prior.t]
    )


def odometry_residual(pose_i: Pose, pose_j: Pose, factor: OdometryFactor) -> np.ndarray:
    Rz, tz = factor.delta.R, factor.delta.t
    r_rot = so3_log(Rz.T @ pose_i.R.T @ pose_j.R)
    r_t = pose_i.R.T @ (pose_j.t - pose_i.t) - tz
    return np.concatenate([r_rot, r_t])


def predict_plane(pose: Pose, landmark: MinimalPlane) -> np.ndarray:
    """Landmark transported into the camera frame, as a unit 4-vector."""
    q = landmark.q
    gv = pose.R.T @ q[:3]
    gw = float(pose.t @ q[:3]) + q[3]
    g = np.append(gv, gw)
    return g / np.linalg.norm(g)


def plane_factor_error(pose: Pose, landmark: MinimalPlane, measured: MinimalPlane) -> np.ndarray:
    """Raw (unwhitened) 3-vector residual log(m^-1 (x) q_pred)."""
    q_pred = predict_plane(pose, landmark)
    return quat_log_shortest(quat_mul(quat_conj(measured.q), q_pred))


def plane_factor_jacobians(
    pose: Pose, landmark: MinimalPlane, measured: MinimalPlane
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic (J_pose (3,6), J_plane (3,3)), unwhitened.

    Mirrors the batched kernel; kept scalar for finite-difference checks.
    """
    R, t = pose.R, pose.t
    q = landmark.q
    qv = q[:3]
    gv = R.T @ qv
    gw = float(t @ qv) + q[3]
    g = np.append(gv, gw)
    nrm = float(np.linalg.norm(g))
    ghat = g / nrm

    m = measured.q
    minv = np.array([-m[0], -m[1], -m[2], m[3]])
    Lm = _quat_left(minv)
    Q = Lm @ ghat
    s = -1.0 if Q[3] < 0 else 1.0
    Q = s * Q

    vn = float(np.linalg.norm(Q[:3]))
    wq = float(Q[3])
    Dlog = np.zeros((3, 4))
    if vn < 1e-8:
        Dlog[:, :3] = 2.0 * np.eye(3)
    else:
        u = Q[:3] / vn
        k = 2.0 * np.arctan2(vn, wq) / vn
        Dlog[:, :3] = k * (np.eye(3) - np.outer(u, u)) + 2.0 * wq * np.outer(u, u)
    Dlog[:, 3] = -2.0 * Q[:3]

    N = (np.eye(4) - np.outer(ghat, ghat)) / nrm
    C = Dlog @ (s * Lm) @ N

    dg_dw = np.zeros((4, 3))
    dg_dw[:3, :] = skew(gv)
    dg_dv = np.zeros((4, 3))
    dg_dv[3, :] = qv
    J_pose = np.hstack([C @ dg_dw, C @ dg_dv])

    A = np.zeros((4, 4))
    A[:3, :3] = R.T
    A[3, :3] = t
    A[3, 3] = 1.0
    J_plane = C @ A @ (0.5 * _quat_left(q)[:, :3])
    return J_pose, J_plane


def _quat_left(q: np.ndarray) -> np.ndarray:
    v, w = q[:3], q[3]
    L = np.zeros((4, 4))
    L[:3, :3] = w * np.eye(3) + skew(v)
    L[:3, 3] = v
    L[3, :3] = -v
    L[3, 3] = w
    return L


def measured_from_plane(plane: HomogeneousPlane) -> MinimalPlane:
    return plane.to_minimal()


# ---------------------------------------------------------------------------
# batched pose-factor linearization (numpy, shared by both kernel backends)


def linearize_pose_pair_factors(Ri, ti, Rj, tj, Rz, tz, sqrt_diag):
    """Odometry factors: whitened residuals (O,6) and Jacobians (O,6,6) x 2."""
    O = Ri.shape[0]
    M = np.einsum("oji,ojk->oik", Ri, Rj)  # R_i^T R_j
    E = np.einsum("oji,ojk->oik", Rz, M)  # R_z^T R_i^T R_j
    r_rot = so3_log_batch(E)
    a = np.einsum("oji,oj->oi", Ri, tj - ti)
    r_t = a - tz
    Jr_inv = so3_right_jacobian_inv_batch(r_rot)

    Ji = np.zeros((O, 6, 6))
    Jj = np.zeros((O, 6, 6))
    Jj[:, :3, :3] = Jr_inv
    Ji[:, :3, :3] = -(Jr_inv @ np.swapaxes(M, 1, 2))  # -Jr_inv @ R_j^T R_i
    RiT = np.swapaxes(Ri, 1, 2)
    Jj[:, 3:, 3:] = RiT
    Ji[:, 3:, 3:] = -RiT
    Sk = np.zeros((O, 3, 3))
    Sk[:, 0, 1] = -a[:, 2]
    Sk[:, 0, 2] = a[:, 1]
    Sk[:, 1, 0] = a[:, 2]
    Sk[:, 1, 2] = -a[:, 0]
    Sk[:, 2, 0] = -a[:, 1]
    Sk[:, 2, 1] = a[:, 0]
    Ji[:, 3:, :3] = Sk

    res = np.concatenate([r_rot, r_t], axis=1)
    w = 1.0 / sqrt_diag  # sqrt information from per-axis sigmas
    res = res * w
    Ji = Ji * w[:, :, None]
    Jj = Jj * w[:, :, None]
    return res, Ji, Jj


def linearize_prior_factors(R, t, Rp, tp, sqrt_diag):
    """Pose priors: whitened residuals (P,6) and Jacobians (P,6,6)."""
    P = R.shape[0]
    E = np.einsum("pji,pjk->pik", Rp, R)
    r_rot = so3_log_batch(E)
    r_t = t - tp
    J = np.zeros((P, 6, 6))
    J[:, :3, :3] = so3_right_jacobian_inv_batch(r_rot)
    J[:, 3:, 3:] = np.eye(3)[None]
    res = np.concatenate([r_rot, r_t], axis=1)
    w = 1.0 / sqrt_diag
    return res * w, J * w[:, :, None]
