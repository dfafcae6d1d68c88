"""SO(3) helpers shared by poses, factors and the simulator.

Conventions
-----------
* Rotation matrices are world_R_camera style "apply to column vectors".
* Rotation vectors (axis * angle) live in the body frame and act on the right:
  retract(R, w) = R @ exp(w).
* Quaternions are (x, y, z, w), scalar last, matching the TUM trajectory
  layout used by the exporters.

The closed forms below keep explicit small-angle series so they stay exact
under finite differencing; scipy's Rotation is deliberately not used here to
keep these callable from tight loops with plain ndarrays.
"""

from __future__ import annotations

import numpy as np

_SMALL = 1e-8


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(v) @ u == cross(v, u)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues formula with series fallback near zero."""
    w = np.asarray(w, dtype=float)
    theta = float(np.linalg.norm(w))
    W = skew(w)
    if theta < _SMALL:
        # second order series keeps exp/log round trips at machine precision
        return np.eye(3) + W + 0.5 * (W @ W)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * W + b * (W @ W)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Inverse of so3_exp. Handles the near-pi branch via the symmetric part."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    cos_theta = np.clip(0.5 * (tr - 1.0), -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta < _SMALL:
        return 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta > np.pi - 1e-6:
        # axis from the dominant diagonal of (R + I)/2
        B = 0.5 * (R + np.eye(3))
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / np.sqrt(max(B[k, k], 1e-18))
        axis = axis / np.linalg.norm(axis)
        # fix sign using the skew part (vanishes exactly at pi, any sign works)
        s = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        if s @ axis < 0:
            axis = -axis
        return theta * axis
    s = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return theta / (2.0 * np.sin(theta)) * s


def so3_right_jacobian_inv(w: np.ndarray) -> np.ndarray:
    """Inverse right Jacobian of SO(3); maps residual perturbations to charts."""
    theta = float(np.linalg.norm(w))
    W = skew(w)
    if theta < 1e-5:
        c = 1.0 / 12.0 + theta * theta / 720.0
    else:
        c = 1.0 / (theta * theta) - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * W + c * (W @ W)


def so3_log_batch(Rs: np.ndarray) -> np.ndarray:
    """Vectorized so3_log for an (N, 3, 3) stack. Angles must stay below ~pi - 1e-6."""
    Rs = np.asarray(Rs, dtype=float)
    tr = np.trace(Rs, axis1=1, axis2=2)
    cos_theta = np.clip(0.5 * (tr - 1.0), -1.0, 1.0)
    theta = np.arccos(cos_theta)
    s = 0.5 * np.stack(
        [
            Rs[:, 2, 1] - Rs[:, 1, 2],
            Rs[:, 0, 2] - Rs[:, 2, 0],
            Rs[:, 1, 0] - Rs[:, 0, 1],
        ],
        axis=1,
    )
    small = theta < _SMALL
    scale = np.empty_like(theta)
    scale[small] = 1.0  # sin(t)/t ~ 1
    nz = ~small
    scale[nz] = theta[nz] / np.sin(theta[nz])
    return s * scale[:, None]


def so3_exp_batch(ws: np.ndarray) -> np.ndarray:
    ws = np.asarray(ws, dtype=float)
    n = ws.shape[0]
    theta = np.linalg.norm(ws, axis=1)
    W = np.zeros((n, 3, 3))
    W[:, 0, 1] = -ws[:, 2]
    W[:, 0, 2] = ws[:, 1]
    W[:, 1, 0] = ws[:, 2]
    W[:, 1, 2] = -ws[:, 0]
    W[:, 2, 0] = -ws[:, 1]
    W[:, 2, 1] = ws[:, 0]
    small = theta < _SMALL
    a = np.empty(n)
    b = np.empty(n)
    a[small] = 1.0
    b[small] = 0.5
    nz = ~small
    a[nz] = np.sin(theta[nz]) / theta[nz]
    b[nz] = (1.0 - np.cos(theta[nz])) / theta[nz] ** 2
    return np.eye(3)[None] + a[:, None, None] * W + b[:, None, None] * (W @ W)


def so3_right_jacobian_inv_batch(ws: np.ndarray) -> np.ndarray:
    ws = np.asarray(ws, dtype=float)
    n = ws.shape[0]
    theta = np.linalg.norm(ws, axis=1)
    W = np.zeros((n, 3, 3))
    W[:, 0, 1] = -ws[:, 2]
    W[:, 0, 2] = ws[:, 1]
    W[:, 1, 0] = ws[:, 2]
    W[:, 1, 2] = -ws[:, 0]
    W[:, 2, 0] = -ws[:, 1]
    W[:, 2, 1] = ws[:, 0]
    c = np.empty(n)
    small = theta < 1e-5
    c[small] = 1.0 / 12.0 + theta[small] ** 2 / 720.0
    nz = ~small
    t = theta[nz]
    c[nz] = 1.0 / t**2 - (1.0 + np.cos(t)) / (2.0 * t * np.sin(t))
    return np.eye(3)[None] + 0.5 * W + c[:, None, None] * (W @ W)


def rot_to_quat(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion (x, y, z, w), w >= 0."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        w = 0.25 * s
        x = (R[2, 1] - R[1, 2]) / s
        y = (R[0, 2] - R[2, 0]) / s
        z = (R[1, 0] - R[0, 1]) / s
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        w = (R[2, 1] - R[1, 2]) / s
        x = 0.25 * s
        y = (R[0, 1] + R[1, 0]) / s
        z = (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        w = (R[0, 2] - R[2, 0]) / s
        x = (R[0, 1] + R[1, 0]) / s
        y = 0.25 * s
        z = (R[1, 2] + R[2, 1]) / s
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        w = (R[1, 0] - R[0, 1]) / s
        x = (R[0, 2] + R[2, 0]) / s
        y = (R[1, 2] + R[2, 1]) / s
        z = 0.25 * s
    q = np.array([x, y, z, w])
    q /= np.linalg.norm(q)
    if q[3] < 0:
        q = -q
    return q


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    """Unit quaternion (x, y, z, w) to rotation matrix."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    x, y, z, w = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )
