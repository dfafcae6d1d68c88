"""Metrics against simulator ground truth.

Trajectory error aligns the estimate to truth by the first pose only, so
accumulated drift stays visible. Loop error is the endpoint gap as a
percentage of true path length. Plane metrics match estimated landmarks to
true planes of the same label by normal angle plus offset difference.
Depth compares ground-truth range images against ones rendered from the
estimated planes at the aligned estimated poses.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Optional, Sequence

import numpy as np

from ..errors import LengthMismatch
from ..geometry import GROUND, HomogeneousPlane, Pose
from ..kernels import render_scene_depth
from ..polygons import plane_basis
from .render import scene_arrays


@dataclass(frozen=True)
class TrajectoryMetrics:
    ate_mean: float
    ate_std: float
    ate_max: float
    endpoint_error: float
    path_length: float
    loop_error_pct: float


@dataclass(frozen=True)
class PlaneMetrics:
    n_true: int
    n_est: int
    n_matched: int
    normal_err_mean_deg: float
    normal_err_max_deg: float
    offset_err_mean: float


@dataclass(frozen=True)
class DepthMetrics:
    mae: float
    frac_within_10cm: float
    n_pixels: int


@dataclass(frozen=True)
class EvalReport:
    trajectory: TrajectoryMetrics
    planes: Optional[PlaneMetrics] = None
    depth: Optional[DepthMetrics] = None

    def as_dict(self) -> dict:
        return asdict(self)


def align_to_first_pose(truth_poses: Sequence[Pose], est_poses: Sequence[Pose]) -> list:
    """Apply the rigid transform that maps the first estimate onto truth."""
    G = truth_poses[0].compose(est_poses[0].inverse())
    return [G.compose(T) for T in est_poses]


def evaluate_trajectory(truth_poses: Sequence[Pose], est_poses: Sequence[Pose]) -> TrajectoryMetrics:
    if len(truth_poses) != len(est_poses):
        raise LengthMismatch(
            f"trajectory lengths differ: truth {len(truth_poses)}, estimate {len(est_poses)}"
        )
    aligned = align_to_first_pose(truth_poses, est_poses)
    t_true = np.array([p.t for p in truth_poses])
    t_est = np.array([p.t for p in aligned])
    errs = np.linalg.norm(t_est - t_true, axis=1)
    path = float(np.sum(np.linalg.norm(np.diff(t_true, axis=0), axis=1)))
    endpoint = float(errs[-1])
    loop_pct = 100.0 * endpoint / path if path > 0 else 0.0
    return TrajectoryMetrics(
        ate_mean=float(errs.mean()),
        ate_std=float(errs.std()),
        ate_max=float(errs.max()),
        endpoint_error=endpoint,
        path_length=path,
        loop_error_pct=loop_pct,
    )


def _true_planes(truth) -> list:
    out = [(w.plane, "wall") for w in truth.walls]
    out.append((truth.ground_plane, GROUND))
    return out


def evaluate_planes(truth, landmarks, max_angle_deg: float = 30.0, max_offset: float = 1.0) -> PlaneMetrics:
    """Match each estimated landmark to its best same-label true plane.

    The match score adds normal angle in radians and offset difference in
    meters (after aligning normal signs); a landmark counts as matched when
    both stay under the loose thresholds.
    """
    true_planes = _true_planes(truth)
    angles, offsets, matched = [], [], 0
    for lm in landmarks:
        est = HomogeneousPlane.from_minimal(lm.plane)
        best = None
        for tp, label in true_planes:
            if label != lm.label:
                continue
            dot = float(est.n @ tp.n)
            ang = float(np.arccos(min(1.0, abs(dot))))
            doff = abs(est.d - np.sign(dot) * tp.d) if dot != 0 else abs(abs(est.d) - abs(tp.d))
            score = ang + doff
            if best is None or score < best[0]:
                best = (score, ang, doff)
        if best and best[1] <= np.deg2rad(max_angle_deg) and best[2] <= max_offset:
            matched += 1
            angles.append(np.rad2deg(best[1]))
            offsets.append(best[2])
    return PlaneMetrics(
        n_true=len(true_planes),
        n_est=len(landmarks),
        n_matched=matched,
        normal_err_mean_deg=float(np.mean(angles)) if angles else float("nan"),
        normal_err_max_deg=float(np.max(angles)) if angles else float("nan"),
        offset_err_mean=float(np.mean(offsets)) if offsets else float("nan"),
    )


def _landmark_arrays(landmarks):
    """Bounding rectangles of landmark polygons as render inputs."""
    n = len(landmarks)
    planes = np.zeros((n, 4))
    origins = np.zeros((n, 3))
    axes_u = np.zeros((n, 3))
    axes_v = np.zeros((n, 3))
    extents = np.zeros((n, 2))
    for k, lm in enumerate(landmarks):
        pl = HomogeneousPlane.from_minimal(lm.plane)
        planes[k] = pl.vec4
        if lm.label == GROUND:
            extents[k] = (-1.0, -1.0)
            continue
        bu, bv = plane_basis(pl.n)
        pts = np.asarray(lm.polygon, dtype=float).reshape(-1, 3)
        u = pts @ bu
        v = pts @ bv
        origin_uv = np.array([u.min(), v.min()])
        origins[k] = origin_uv[0] * bu + origin_uv[1] * bv - pl.d * pl.n
        axes_u[k] = bu
        axes_v[k] = bv
        extents[k] = (u.max() - u.min(), v.max() - v.min())
    return planes, origins, axes_u, axes_v, extents


def evaluate_depth(
    truth,
    landmarks,
    aligned_poses: Sequence[Pose],
    frame_indices: Optional[Sequence[int]] = None,
    stride: int = 8,
) -> DepthMetrics:
    """Range-image agreement over sampled frames.

    Truth renders the true scene at true poses; the estimate renders the
    landmark planes at the aligned estimated poses. Only pixels finite in
    both contribute.
    """
    if frame_indices is None:
        frame_indices = range(0, len(truth.trajectory), max(1, len(truth.trajectory) // 10))
    tp, to, tu, tv, te = scene_arrays(truth)
    ep, eo, eu, ev, ee = _landmark_arrays(landmarks)
    intr = truth.intrinsics
    abs_err = []
    for k in frame_indices:
        dt, _ = render_scene_depth(
            tp, to, tu, tv, te,
            truth.trajectory[k].R, truth.trajectory[k].t,
            intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height, stride,
        )
        de, _ = render_scene_depth(
            ep, eo, eu, ev, ee,
            aligned_poses[k].R, aligned_poses[k].t,
            intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height, stride,
        )
        both = np.isfinite(dt) & np.isfinite(de)
        if both.any():
            abs_err.append(np.abs(dt[both] - de[both]))
    if not abs_err:
        return DepthMetrics(mae=float("nan"), frac_within_10cm=0.0, n_pixels=0)
    err = np.concatenate(abs_err)
    return DepthMetrics(
        mae=float(err.mean()),
        frac_within_10cm=float(np.mean(err <= 0.1)),
        n_pixels=int(err.size),
    )


def evaluate(
    truth,
    est_poses: Sequence[Pose],
    landmarks=None,
    with_depth: bool = False,
    depth_stride: int = 8,
) -> EvalReport:
    traj = evaluate_trajectory(truth.trajectory, est_poses)
    planes = evaluate_planes(truth, list(landmarks)) if landmarks is not None else None
    depth = None
    if with_depth and landmarks is not None:
        aligned = align_to_first_pose(truth.trajectory, est_poses)
        depth = evaluate_depth(truth, list(landmarks), aligned, stride=depth_stride)
    return EvalReport(trajectory=traj, planes=planes, depth=depth)
