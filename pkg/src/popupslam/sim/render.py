"""Image-space observations of a corridor: boundary runs, edges, odometry.

The wall-floor boundary is resolved per pixel column: every front-facing
wall base projects to an image line, and with a level camera above the
ground the nearest wall in a column is simply the one whose boundary sits
lowest (largest v). Edge endpoints are taken exactly on the winning wall's
projected line, so a noiseless dataset backprojects onto the true planes
to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..boundary import EdgeSegment
from ..geometry import CameraIntrinsics, Pose
from ..kernels import render_scene_depth
from ..rotations import so3_exp

Z_NEAR = 0.05
SPLIT_LENGTH = 140.0  # px, long boundary runs are reported as several edges


@dataclass(frozen=True)
class NoiseModel:
    pixel_sigma: float = 1.0
    odom_t_sigma: float = 0.02
    odom_r_sigma_deg: float = 0.5
    seed: int = 0

    def noiseless(self) -> "NoiseModel":
        return NoiseModel(0.0, 0.0, 0.0, self.seed)


@dataclass
class FrameObservation:
    frame_id: int
    edges: list  # [EdgeSegment], sorted by left x, ids 0..n-1
    xi: np.ndarray  # (M, 2) noiseless boundary polyline
    odometry: Optional[Pose]  # measured delta from previous frame, None at k=0


def _project_base_line(wall, pose: Pose, intr: CameraIntrinsics):
    """Clipped image-line endpoints of a wall base, or None if not visible."""
    if float(wall.inward @ (pose.t[:2] - wall.a)) <= 1e-9:
        return None  # camera on or behind the wall
    ends = np.array([[wall.a[0], wall.a[1], 0.0], [wall.b[0], wall.b[1], 0.0]])
    cam = (ends - pose.t) @ pose.R  # R^T (p - t) for both endpoints
    z = cam[:, 2]
    if z[0] < Z_NEAR and z[1] < Z_NEAR:
        return None
    if z[0] < Z_NEAR or z[1] < Z_NEAR:
        s = (Z_NEAR - z[0]) / (z[1] - z[0])
        crossing = cam[0] + s * (cam[1] - cam[0])
        cam = np.array([crossing, cam[1]]) if z[0] < Z_NEAR else np.array([cam[0], crossing])
    u = intr.fx * cam[:, 0] / cam[:, 2] + intr.cx
    v = intr.fy * cam[:, 1] / cam[:, 2] + intr.cy
    if u[0] > u[1]:
        u, v = u[::-1], v[::-1]
    if u[1] - u[0] < 1e-9:
        return None  # edge-on, covers no full column
    return float(u[0]), float(v[0]), float(u[1]), float(v[1])


def compute_envelope(walls, pose: Pose, intr: CameraIntrinsics):
    """Per-column visibility of wall bases.

    Returns (runs, xi): runs are (wall_id, (u0, v0), (u1, v1)) for maximal
    column spans won by one wall, endpoints exact on its image line; xi
    stacks the run endpoints into an x-monotone boundary polyline. Columns
    whose boundary falls below the image are dropped.
    """
    W, H = intr.width, intr.height
    best_v = np.full(W, -np.inf)
    best_wall = np.full(W, -1, dtype=np.int64)
    lines = {}
    for wall in walls:
        proj = _project_base_line(wall, pose, intr)
        if proj is None:
            continue
        u0, v0, u1, v1 = proj
        lines[wall.id] = proj
        c0 = max(int(np.ceil(u0 - 1e-9)), 0)
        c1 = min(int(np.floor(u1 + 1e-9)), W - 1)
        if c1 < c0:
            continue
        cols = np.arange(c0, c1 + 1)
        vs = v0 + (cols - u0) / (u1 - u0) * (v1 - v0)
        better = vs > best_v[cols]
        best_v[cols[better]] = vs[better]
        best_wall[cols[better]] = wall.id

    visible = (best_wall >= 0) & (best_v <= H - 1)
    runs = []
    xi_pts = []
    c = 0
    while c < W:
        if not visible[c]:
            c += 1
            continue
        wid = best_wall[c]
        c_end = c
        while c_end + 1 < W and visible[c_end + 1] and best_wall[c_end + 1] == wid:
            c_end += 1
        if c_end > c:
            u0, v0, u1, v1 = lines[wid]

            def v_at(x):
                return v0 + (x - u0) / (u1 - u0) * (v1 - v0)

            pa = (float(c), v_at(c))
            pb = (float(c_end), v_at(c_end))
            runs.append((int(wid), pa, pb))
            xi_pts.extend([pa, pb])
        c = c_end + 1
    xi = np.array(xi_pts) if xi_pts else np.zeros((0, 2))
    return runs, xi


def _split_long(a: np.ndarray, b: np.ndarray, rng) -> list:
    """Recursively split a segment into pieces under SPLIT_LENGTH px."""
    if np.linalg.norm(b - a) <= SPLIT_LENGTH:
        return [(a, b)]
    mid = a + rng.uniform(0.4, 0.6) * (b - a)
    return _split_long(a, mid, rng) + _split_long(mid, b, rng)


def _clip_to_image(a: np.ndarray, b: np.ndarray, W: int, H: int):
    """Liang-Barsky clip of segment ab against [0, W-1] x [0, H-1]."""
    d = b - a
    t0, t1 = 0.0, 1.0
    for p, q in (
        (-d[0], a[0] - 0.0),
        (d[0], (W - 1.0) - a[0]),
        (-d[1], a[1] - 0.0),
        (d[1], (H - 1.0) - a[1]),
    ):
        if abs(p) < 1e-12:
            if q < 0:
                return None
            continue
        r = q / p
        if p < 0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
        if t0 > t1:
            return None
    return a + t0 * d, a + t1 * d


def render_frame(truth, frame_id: int, noise: Optional[NoiseModel] = None) -> FrameObservation:
    """Noisy detector output for one frame.

    Long boundary runs split at random interior points, endpoints get
    isotropic pixel noise, segments are clipped to the image. The random
    stream is keyed by (seed, frame_id) so any frame regenerates
    identically in isolation; zero sigmas reproduce the exact geometry
    while consuming the same draws.
    """
    noise = noise or NoiseModel()
    rng = np.random.default_rng([noise.seed, frame_id])
    frame = truth.frames[frame_id]
    intr = truth.intrinsics

    pieces = []
    for _, pa, pb in frame.runs:
        pieces.extend(_split_long(np.array(pa), np.array(pb), rng))
    edges = []
    for a, b in pieces:
        a = a + rng.normal(0.0, noise.pixel_sigma, 2)
        b = b + rng.normal(0.0, noise.pixel_sigma, 2)
        clipped = _clip_to_image(a, b, intr.width, intr.height)
        if clipped is None:
            continue
        ca, cb = clipped
        if np.linalg.norm(cb - ca) < 1.0 or abs(cb[0] - ca[0]) < 1e-9:
            continue
        edges.append((ca, cb))
    edges.sort(key=lambda e: (min(e[0][0], e[1][0]), min(e[0][1], e[1][1])))
    segs = [EdgeSegment(a, b, id=k) for k, (a, b) in enumerate(edges)]

    odom = None
    if frame_id > 0:
        prev = truth.trajectory[frame_id - 1]
        cur = truth.trajectory[frame_id]
        delta = prev.inverse().compose(cur)
        # rotation noise perturbs heading only: wheeled odometry drifts in
        # yaw while attitude relative to gravity stays bounded, and a pitch
        # random walk would make the popped range grow without bound
        up_cam = np.array([0.0, -1.0, 0.0])
        dr = so3_exp(up_cam * rng.normal(0.0, np.deg2rad(noise.odom_r_sigma_deg)))
        dt = rng.normal(0.0, noise.odom_t_sigma, 3)
        odom = Pose(delta.R @ dr, delta.t + dt)
    return FrameObservation(frame_id=frame_id, edges=segs, xi=frame.xi.copy(), odometry=odom)


def simulate_dataset(truth, noise: Optional[NoiseModel] = None) -> list:
    return [render_frame(truth, k, noise) for k in range(len(truth.trajectory))]


def scene_arrays(truth):
    """Pack true walls plus ground into render_scene_depth inputs."""
    n = len(truth.walls)
    planes = np.zeros((n + 1, 4))
    origins = np.zeros((n + 1, 3))
    axes_u = np.zeros((n + 1, 3))
    axes_v = np.zeros((n + 1, 3))
    extents = np.zeros((n + 1, 2))
    for k, w in enumerate(truth.walls):
        planes[k] = w.plane.vec4
        origins[k] = (w.a[0], w.a[1], 0.0)
        d = (w.b - w.a) / w.length
        axes_u[k] = (d[0], d[1], 0.0)
        axes_v[k] = (0.0, 0.0, 1.0)
        extents[k] = (w.length, w.height)
    planes[n] = (0.0, 0.0, 1.0, 0.0)
    extents[n] = (-1.0, -1.0)  # unbounded ground
    return planes, origins, axes_u, axes_v, extents


def render_true_depth(truth, pose: Pose, stride: int = 1):
    """Ground-truth range image (ray length per pixel) at a camera pose."""
    planes, origins, axes_u, axes_v, extents = scene_arrays(truth)
    intr = truth.intrinsics
    depth, hit = render_scene_depth(
        planes, origins, axes_u, axes_v, extents,
        pose.R, pose.t, intr.fx, intr.fy, intr.cx, intr.cy,
        intr.width, intr.height, stride,
    )
    return depth, hit
