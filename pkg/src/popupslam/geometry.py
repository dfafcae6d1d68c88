"""Planes, poses, camera model and the pop-up plane construction.

Coordinate conventions
----------------------
* World frame: x/y horizontal, z up. The ground is the fixed plane
  z = 0 with upward normal, GROUND_WORLD = (0, 0, 1, 0).
* Camera frame: +z forward (optical axis), +x right, +y down. Pixel v grows
  downward, so "up in the image" means negative v.
* A Pose (R, t) maps camera coordinates to world coordinates,
  p_world = R @ p_cam + t; t is the camera center in the world.
* A homogeneous plane (n, d) satisfies n . p + d = 0 with |n| = 1. The sign
  of (n, d) is fixed so the first component with magnitude > 1e-12 is
  positive; (n, d) and (-n, -d) are the same plane.

Plane transport: if points map as p_B = R p_A + t, then a plane (n, d) in
frame A becomes (R n, d - t . (R n)) in frame B (the inverse-transpose action
of the rigid transform on plane coordinates).

Pop-up construction: a ground-wall boundary segment detected in the image is
back-projected onto the known ground plane; the two 3D endpoints plus the
ground normal determine a vertical wall plane n_wall = n_ground x (p1 - p0).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

from .errors import (
    BehindCamera,
    CameraBelowGround,
    DegenerateEdge,
    DegenerateVanishingPoints,
    EmptyFrame,
    RayParallelToPlane,
)
from .minimal import MinimalPlane, canonical_sign
from .polygons import convex_hull_2d, from_plane_coords, plane_basis, to_plane_coords
from .rotations import quat_to_rot, rot_to_quat, skew, so3_exp, so3_log

if TYPE_CHECKING:
    from .boundary import EdgeSegment

logger = logging.getLogger(__name__)

GROUND = "ground"
WALL = "wall"

RAY_PARALLEL_EPS = 1e-8  # threshold on |n . K^-1 u|
POINT_MERGE_EPS = 1e-6  # endpoints closer than this are degenerate
VP_MIN_ANGLE_RAD = np.deg2rad(1.0)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; width/height describe the pixel grid."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def ray(self, pixel: np.ndarray) -> np.ndarray:
        """K^-1 applied to a pixel; accepts (u, v) or homogeneous (u, v, w)."""
        p = np.asarray(pixel, dtype=float).reshape(-1)
        if p.shape[0] == 2:
            u, v, w = p[0], p[1], 1.0
        else:
            u, v, w = p
        return np.array([(u - self.cx * w) / self.fx, (v - self.cy * w) / self.fy, w])

    @staticmethod
    def from_hfov(hfov_deg: float = 90.0, width: int = 640, height: int = 480) -> "CameraIntrinsics":
        f = 0.5 * width / np.tan(0.5 * np.deg2rad(hfov_deg))
        return CameraIntrinsics(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0, width=width, height=height)


@dataclass(frozen=True)
class HomogeneousPlane:
    """Plane n . p + d = 0 with |n| = 1 and canonical sign."""

    n: np.ndarray
    d: float

    def __post_init__(self):
        n = np.asarray(self.n, dtype=float).reshape(3)
        nrm = np.linalg.norm(n)
        if not np.isfinite(nrm) or nrm < 1e-12:
            raise ValueError("plane normal must be nonzero and finite")
        vec = canonical_sign(np.append(n / nrm, float(self.d) / nrm))
        nn = vec[:3].copy()
        nn.setflags(write=False)
        object.__setattr__(self, "n", nn)
        object.__setattr__(self, "d", float(vec[3]))

    @property
    def vec4(self) -> np.ndarray:
        return np.append(self.n, self.d)

    @staticmethod
    def from_vec4(v: np.ndarray) -> "HomogeneousPlane":
        v = np.asarray(v, dtype=float).reshape(4)
        return HomogeneousPlane(v[:3], float(v[3]))

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Signed plane equation residual n . p + d for (..., 3) points."""
        return np.asarray(points, dtype=float) @ self.n + self.d

    def to_minimal(self) -> MinimalPlane:
        return MinimalPlane(self.vec4)

    @staticmethod
    def from_minimal(m: MinimalPlane) -> "HomogeneousPlane":
        s = float(np.linalg.norm(m.q[:3]))
        if s < 1e-9:
            raise ValueError("minimal plane is at infinity (zero normal part)")
        return HomogeneousPlane(m.q[:3] / s, float(m.q[3]) / s)

    def same_plane_as(self, other: "HomogeneousPlane", tol: float = 1e-9) -> bool:
        a, b = self.vec4, other.vec4
        return bool(np.allclose(a, b, atol=tol) or np.allclose(a, -b, atol=tol))


GROUND_WORLD = HomogeneousPlane(np.array([0.0, 0.0, 1.0]), 0.0)


@dataclass(frozen=True)
class Pose:
    """Rigid camera-to-world transform (R, t)."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float).reshape(3, 3).copy()
        t = np.asarray(self.t, dtype=float).reshape(3).copy()
        if np.linalg.norm(R.T @ R - np.eye(3)) > 1e-9 or np.linalg.det(R) < 0:
            raise ValueError("R must be a proper rotation (orthonormal, det +1)")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_quat_t(q: np.ndarray, t: np.ndarray) -> "Pose":
        return Pose(quat_to_rot(np.asarray(q, dtype=float)), t)

    def quat(self) -> np.ndarray:
        return rot_to_quat(self.R)

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.R @ other.R, self.R @ other.t + self.t)

    def inverse(self) -> "Pose":
        return Pose(self.R.T, -(self.R.T @ self.t))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.R.T + self.t

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def retract(self, delta: np.ndarray) -> "Pose":
        """Chart update: rotation perturbed in the body frame, translation in world."""
        d = np.asarray(delta, dtype=float).reshape(6)
        return Pose(self.R @ so3_exp(d[:3]), self.t + d[3:])

    def local(self, other: "Pose") -> np.ndarray:
        """Chart coordinates of other relative to self (inverse of retract)."""
        return np.concatenate([so3_log(self.R.T @ other.R), other.t - self.t])


def transform_plane(plane: HomogeneousPlane, T: Pose) -> HomogeneousPlane:
    """Re-express a plane under the point map p' = R p + t."""
    n2 = T.R @ plane.n
    return HomogeneousPlane(n2, plane.d - float(T.t @ n2))


def backproject_to_plane(pixel: np.ndarray, intr: CameraIntrinsics, plane: HomogeneousPlane) -> np.ndarray:
    """Intersect the viewing ray of a pixel with a plane in the camera frame.

    Returns the 3D point p = -d / (n . r) * r with r = K^-1 (u, v, 1).
    Raises RayParallelToPlane when |n . r| < 1e-8 and BehindCamera when the
    intersection has non-positive depth.
    """
    r = intr.ray(pixel)
    denom = float(plane.n @ r)
    if abs(denom) < RAY_PARALLEL_EPS:
        raise RayParallelToPlane(f"|n.r| = {abs(denom):.2e} below {RAY_PARALLEL_EPS}")
    p = (-plane.d / denom) * r
    if p[2] <= 0.0:
        raise BehindCamera(f"intersection depth {p[2]:.4f} <= 0")
    return p


def wall_from_points(p0: np.ndarray, p1: np.ndarray, ground_normal: np.ndarray) -> HomogeneousPlane:
    """Vertical wall through two ground points: n = n_ground x (p1 - p0)."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    edge = p1 - p0
    if np.linalg.norm(edge) < POINT_MERGE_EPS:
        raise DegenerateEdge("edge endpoints coincide")
    n = np.cross(np.asarray(ground_normal, dtype=float), edge)
    nn = np.linalg.norm(n)
    if nn < POINT_MERGE_EPS * np.linalg.norm(edge):
        raise DegenerateEdge("edge direction parallel to ground normal")
    n = n / nn
    return HomogeneousPlane(n, -float(n @ p0))


def wall_from_ground_edge(
    edge: "EdgeSegment", intr: CameraIntrinsics, ground: HomogeneousPlane
) -> tuple[HomogeneousPlane, np.ndarray, np.ndarray]:
    """Back-project an image edge onto the ground and erect its wall plane.

    Returns (wall plane, p0, p1) in the camera frame.
    """
    p0 = backproject_to_plane(edge.a, intr, ground)
    p1 = backproject_to_plane(edge.b, intr, ground)
    return wall_from_points(p0, p1, ground.n), p0, p1


def rotation_from_vanishing_points(vps: Sequence[np.ndarray], intr: CameraIntrinsics) -> np.ndarray:
    """Camera-to-world rotation from three orthogonal vanishing points.

    vps are image points (homogeneous 3-vectors or (u, v)) of the world x, y, z
    directions, in that order. Sign conventions: the camera forward axis has a
    nonnegative world-x component, and the world up direction appears upward
    in the image (negative v). The assembled direction matrix is projected to
    the nearest rotation via its polar factor.
    """
    if len(vps) != 3:
        raise ValueError("need exactly three vanishing points")
    dirs = []
    for v in vps:
        m = intr.ray(v)
        nrm = np.linalg.norm(m)
        if nrm < 1e-12:
            raise DegenerateVanishingPoints("vanishing direction has zero norm")
        dirs.append(m / nrm)
    cos_min = np.cos(VP_MIN_ANGLE_RAD)
    for i in range(3):
        for j in range(i + 1, 3):
            if abs(float(dirs[i] @ dirs[j])) > cos_min:
                raise DegenerateVanishingPoints(
                    f"vanishing directions {i} and {j} closer than 1 degree"
                )
    m1, m2, m3 = dirs
    if m1[2] < 0:  # forward axis must not look down the -x world direction
        m1 = -m1
    if m3[1] > 0:  # world up must appear up in the image (v axis points down)
        m3 = -m3
    M = np.column_stack([m1, m2, m3])
    if np.linalg.det(M) < 0:
        M[:, 1] = -M[:, 1]
    U, _, Vt = np.linalg.svd(M)
    M_orth = U @ Vt
    return M_orth.T  # columns of M estimate R^T rows


@dataclass(frozen=True)
class PopupMeasurement:
    """One plane observed from a frame, in the camera frame.

    polygon is an ordered vertex loop bounding the observed patch: a quad for
    walls (base edge swept up by wall_height), a ground patch hull otherwise.
    """

    plane: HomogeneousPlane
    label: str
    polygon: np.ndarray
    edge: Optional["EdgeSegment"] = None


def popup_frame(
    edges: Sequence["EdgeSegment"],
    pose: Pose,
    intr: CameraIntrinsics,
    ground_world: HomogeneousPlane = GROUND_WORLD,
    wall_height: float = 2.5,
) -> list[PopupMeasurement]:
    """Pop up ground-wall edges of one frame into labeled plane measurements.

    The returned list always starts with the ground plane expressed in the
    camera frame, followed by one wall per edge that back-projects cleanly.
    Edges failing back-projection are skipped with a log line; if every given
    edge fails, EmptyFrame is raised. The camera center must be strictly on
    the positive side of ground_world.
    """
    height = float(ground_world.n @ pose.t + ground_world.d)
    if height <= 0.0:
        raise CameraBelowGround(f"camera height {height:.4f} not strictly positive")
    ground_c = transform_plane(ground_world, pose.inverse())
    up_c = pose.R.T @ ground_world.n  # world up in camera coords, unit

    walls: list[PopupMeasurement] = []
    base_points: list[np.ndarray] = []
    for e in edges:
        try:
            wall, p0, p1 = wall_from_ground_edge(e, intr, ground_c)
        except (RayParallelToPlane, BehindCamera, DegenerateEdge) as err:
            logger.debug("frame pop-up: skipping edge %s: %s", getattr(e, "id", "?"), err)
            continue
        quad = np.stack([p0, p1, p1 + wall_height * up_c, p0 + wall_height * up_c])
        walls.append(PopupMeasurement(plane=wall, label=WALL, polygon=quad, edge=e))
        base_points.extend([p0, p1])
    if len(edges) > 0 and not walls:
        raise EmptyFrame("no edge of the frame survived back-projection")

    # observed ground patch: wall bases plus a small pad under the camera,
    # so the hull is non-degenerate even for wall-less frames
    foot = -ground_c.d * ground_c.n
    bu, bv = plane_basis(ground_c.n)
    pad = 0.5
    base_points.extend(
        [foot + pad * bu + pad * bv, foot + pad * bu - pad * bv, foot - pad * bu + pad * bv, foot - pad * bu - pad * bv]
    )
    uv = to_plane_coords(np.array(base_points), ground_c.n, ground_c.d)
    hull_uv = convex_hull_2d(uv)
    ground_poly = from_plane_coords(hull_uv, ground_c.n, ground_c.d)
    ground_meas = PopupMeasurement(plane=ground_c, label=GROUND, polygon=ground_poly)
    return [ground_meas] + walls
