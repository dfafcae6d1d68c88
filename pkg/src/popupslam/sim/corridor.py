"""Synthetic Manhattan corridor worlds.

A corridor is a chain of axis-aligned legs of given lengths joined by 90
degree turns, or a closed square circuit. The floor plan is the union of
one rectangle per leg (each extended by half the width past its endpoints
so corners come out square); every boundary edge of that union is a wall.
The camera walks the centerline at fixed height looking along the leg.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from shapely.geometry import LineString, box
from shapely.geometry.polygon import orient
from shapely.ops import unary_union

from ..errors import InvalidSpec
from ..geometry import CameraIntrinsics, HomogeneousPlane, Pose

# camera (right, down, forward) axes expressed in world when heading is +x
HEADING_X_ROTATION = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])

_DIRS = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])


@dataclass(frozen=True)
class CorridorSpec:
    """Floor-plan and camera parameters for one synthetic run.

    turns holds one entry per joint, +1 for a left turn and -1 for a right
    turn. loop=True ignores turns and builds a closed square circuit, which
    requires exactly four equal segment lengths.
    """

    segment_lengths: tuple = (15.0, 12.0)
    width: float = 3.0
    turns: tuple = (1,)
    loop: bool = False
    wall_height: float = 2.5
    camera_height: float = 1.0

    def __post_init__(self):
        lens = tuple(float(v) for v in self.segment_lengths)
        object.__setattr__(self, "segment_lengths", lens)
        object.__setattr__(self, "turns", tuple(int(v) for v in self.turns))
        if not lens or any(v <= 0 for v in lens):
            raise InvalidSpec("segment lengths must be positive")
        if self.width <= 0:
            raise InvalidSpec("width must be positive")
        if self.wall_height <= 0 or self.camera_height <= 0:
            raise InvalidSpec("heights must be positive")
        if self.camera_height >= self.wall_height:
            raise InvalidSpec("camera must sit below the wall tops")
        if self.loop:
            if len(lens) != 4 or max(lens) - min(lens) > 1e-9:
                raise InvalidSpec("a loop needs four equal segment lengths")
            if min(lens) <= 2.0 * self.width:
                raise InvalidSpec("loop legs too short for the corridor width")
        else:
            if len(self.turns) != len(lens) - 1:
                raise InvalidSpec("need one turn per joint")
            if any(t not in (-1, 1) for t in self.turns):
                raise InvalidSpec("turns must be +1 (left) or -1 (right)")


@dataclass(frozen=True)
class WallTruth:
    """One vertical wall: base segment a->b at z=0, inward unit normal."""

    id: int
    a: np.ndarray  # (2,)
    b: np.ndarray  # (2,)
    inward: np.ndarray  # (2,)
    height: float

    @property
    def plane(self) -> HomogeneousPlane:
        n = np.array([self.inward[0], self.inward[1], 0.0])
        return HomogeneousPlane(n, -float(self.inward @ self.a))

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.b - self.a))


@dataclass
class TrueFrame:
    """Noiseless per-frame ground truth produced by the column envelope.

    runs are (wall_id, (u0, v0), (u1, v1)) visible spans; xi is the
    wall-floor boundary polyline over those spans.
    """

    frame_id: int
    runs: list
    xi: np.ndarray  # (M, 2)


@dataclass
class ScenarioTruth:
    spec: CorridorSpec
    walls: list  # [WallTruth]
    ground_polygon: np.ndarray  # (V, 2) footprint exterior, CCW
    trajectory: list  # [Pose], camera to world
    intrinsics: CameraIntrinsics
    frames: list = field(default_factory=list)  # [TrueFrame]

    @property
    def ground_plane(self) -> HomogeneousPlane:
        return HomogeneousPlane(np.array([0.0, 0.0, 1.0]), 0.0)


def _centerline(spec: CorridorSpec) -> np.ndarray:
    if spec.loop:
        L = spec.segment_lengths[0]
        return np.array([[0.0, 0.0], [L, 0.0], [L, L], [0.0, L], [0.0, 0.0]])
    pts = [np.zeros(2)]
    h = 0
    for i, L in enumerate(spec.segment_lengths):
        pts.append(pts[-1] + L * _DIRS[h % 4])
        if i < len(spec.turns):
            h += spec.turns[i]
    return np.array(pts)


def _drop_collinear(coords: np.ndarray) -> np.ndarray:
    """Remove vertices whose neighbors are collinear (ring, no closing dup)."""
    n = len(coords)
    keep = []
    for k in range(n):
        p0, p1, p2 = coords[k - 1], coords[k], coords[(k + 1) % n]
        cross = (p1[0] - p0[0]) * (p2[1] - p1[1]) - (p1[1] - p0[1]) * (p2[0] - p1[0])
        if abs(cross) > 1e-9:
            keep.append(k)
    return coords[keep]


def _walls_from_footprint(footprint, height: float) -> list:
    # exterior CCW, holes CW: interior is always on the left of each edge,
    # so the inward normal of edge direction (dx, dy) is (-dy, dx)
    poly = orient(footprint, sign=1.0)
    rings = [np.asarray(poly.exterior.coords)[:-1]] + [
        np.asarray(r.coords)[:-1] for r in poly.interiors
    ]
    walls = []
    for ring in rings:
        ring = _drop_collinear(ring)
        for k in range(len(ring)):
            a, b = ring[k], ring[(k + 1) % len(ring)]
            d = b - a
            inward = np.array([-d[1], d[0]]) / np.linalg.norm(d)
            walls.append(WallTruth(id=len(walls), a=a, b=b, inward=inward, height=height))
    return walls


def _pose_at(centerline: np.ndarray, cum: np.ndarray, s: float, height: float) -> Pose:
    total = cum[-1]
    s = s % total if total > 0 else 0.0
    leg = min(bisect.bisect_right(cum, s + 1e-12) - 1, len(centerline) - 2)
    a, b = centerline[leg], centerline[leg + 1]
    d = (b - a) / np.linalg.norm(b - a)
    p = a + (s - cum[leg]) * d
    heading = np.arctan2(d[1], d[0])
    c, sn = np.cos(heading), np.sin(heading)
    Rz = np.array([[c, -sn, 0.0], [sn, c, 0.0], [0.0, 0.0, 1.0]])
    return Pose(Rz @ HEADING_X_ROTATION, np.array([p[0], p[1], height]))


def generate_corridor(
    spec: CorridorSpec,
    frame_spacing: float = 0.25,
    intrinsics: Optional[CameraIntrinsics] = None,
    loop_overrun: float = 2.0,
) -> ScenarioTruth:
    """Build walls, trajectory and noiseless per-frame observations.

    For loops the path runs the full circuit plus loop_overrun meters so
    the last frames revisit the start. Frames are spaced frame_spacing
    meters apart along the centerline.
    """
    from .render import compute_envelope

    if frame_spacing <= 0:
        raise InvalidSpec("frame spacing must be positive")
    intr = intrinsics or CameraIntrinsics.from_hfov(90.0, 640, 480)

    center = _centerline(spec)
    legs = [LineString([center[i], center[i + 1]]) for i in range(len(center) - 1)]
    e = spec.width / 2.0
    boxes = [
        box(min(a[0], b[0]) - e, min(a[1], b[1]) - e, max(a[0], b[0]) + e, max(a[1], b[1]) + e)
        for a, b in zip(center[:-1], center[1:])
    ]
    footprint = unary_union(boxes)
    if footprint.geom_type != "Polygon":
        raise InvalidSpec("corridor legs do not form a connected floor plan")
    walls = _walls_from_footprint(footprint, spec.wall_height)
    ground = _drop_collinear(np.asarray(orient(footprint, 1.0).exterior.coords)[:-1])

    seg = np.linalg.norm(np.diff(center, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    travel = total + loop_overrun if spec.loop else total
    n_frames = int(np.floor(travel / frame_spacing + 1e-9)) + 1
    trajectory = [
        _pose_at(center, cum, k * frame_spacing, spec.camera_height) for k in range(n_frames)
    ]

    truth = ScenarioTruth(
        spec=spec,
        walls=walls,
        ground_polygon=ground,
        trajectory=trajectory,
        intrinsics=intr,
    )
    for k, pose in enumerate(trajectory):
        runs, xi = compute_envelope(walls, pose, intr)
        truth.frames.append(TrueFrame(frame_id=k, runs=runs, xi=xi))
    return truth
