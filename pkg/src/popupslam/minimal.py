"""Minimal 3-dof plane parametrization as unit quaternions.

A homogeneous plane (n, d) with |n| = 1 maps to the unit 4-vector
q = (n, d) / sqrt(1 + d^2), read as a quaternion (x, y, z, w) with the
d-part in the scalar slot. q and -q denote the same plane; the stored
representative has its first nonzero component positive.

The optimizer moves planes through the right-action chart

    retract(q, delta) = q (x) exp(delta),    delta in R^3,

with exp(delta) the half-angle quaternion exponential. The factor residual
log(q_meas^-1 (x) q_pred) then recovers delta exactly when the prediction is
a retraction of the measurement, which is what ties the chart to the
Levenberg-Marquardt update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_SIGN_EPS = 1e-12


def canonical_sign(vec: np.ndarray) -> np.ndarray:
    """Flip so the first component with magnitude > 1e-12 is positive."""
    for x in vec:
        if abs(x) > _SIGN_EPS:
            return -vec if x < 0 else vec
    return vec


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product, (x, y, z, w) layout."""
    av, aw = a[:3], a[3]
    bv, bw = b[:3], b[3]
    v = aw * bv + bw * av + np.cross(av, bv)
    return np.array([v[0], v[1], v[2], aw * bw - av @ bv])


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([-q[0], -q[1], -q[2], q[3]])


def quat_exp_tangent(delta: np.ndarray) -> np.ndarray:
    """exp: R^3 -> S^3, half-angle convention."""
    delta = np.asarray(delta, dtype=float)
    theta = float(np.linalg.norm(delta))
    if theta < 1e-8:
        k = 0.5 - theta * theta / 48.0
    else:
        k = np.sin(0.5 * theta) / theta
    v = k * delta
    return np.array([v[0], v[1], v[2], np.cos(0.5 * theta)])


def quat_log_shortest(q: np.ndarray) -> np.ndarray:
    """log: S^3 -> R^3 picking the representative with nonnegative scalar."""
    q = np.asarray(q, dtype=float)
    if q[3] < 0:
        q = -q
    vn = float(np.linalg.norm(q[:3]))
    w = float(q[3])
    if vn < 1e-8:
        # theta/vn -> 2/w for unit quaternions near identity
        return (2.0 / w) * (1.0 - vn * vn / (3.0 * w * w)) * q[:3]
    theta = 2.0 * np.arctan2(vn, w)
    return (theta / vn) * q[:3]


@dataclass(frozen=True)
class MinimalPlane:
    """Unit-quaternion plane representative (canonical sign)."""

    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(4).copy()
        nrm = np.linalg.norm(q)
        if not np.isfinite(nrm) or nrm < 1e-12:
            raise ValueError("minimal plane must be a nonzero finite 4-vector")
        q = canonical_sign(q / nrm)
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    def retract(self, delta: np.ndarray) -> "MinimalPlane":
        return MinimalPlane(quat_mul(self.q, quat_exp_tangent(delta)))

    def local(self, other: "MinimalPlane") -> np.ndarray:
        """delta such that self.retract(delta) equals other (up to sign)."""
        return quat_log_shortest(quat_mul(quat_conj(self.q), other.q))

    def angle_to(self, other: "MinimalPlane") -> float:
        """Chart distance: 2 arccos |<q1, q2>|."""
        return 2.0 * np.arccos(min(1.0, abs(float(self.q @ other.q))))
