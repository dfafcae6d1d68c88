"""Incremental mapping pipeline.

Per frame: select boundary edges, pop wall and ground planes up from them
at the predicted pose, associate against recently seen landmarks, and
extend the graph. Every optimize_every frames (and at the end) the graph
is optimized, measurements are regenerated from stored pixels at the
refined poses, optimized again, and loop closures are searched and merged.

Association only considers landmarks seen within the last `window` frames;
a revisit after a long absence therefore creates duplicate landmarks on
purpose, and closing the loop means detecting and merging them.
"""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..assoc import (
    associate,
    detect_loop_geometric,
    estimate_scale_drift,
    find_duplicate_landmarks,
    merge_landmarks,
)
from ..boundary import BoundaryCurve, EdgeSegment, greedy_select, postprocess_edges
from ..errors import CameraBelowGround, EmptyFrame, PopupSlamError
from ..factors import PlaneMeasurementFactor
from ..geometry import (
    GROUND,
    GROUND_WORLD,
    CameraIntrinsics,
    HomogeneousPlane,
    Pose,
    backproject_to_plane,
    popup_frame,
    transform_plane,
)
from ..graph import (
    FactorGraph,
    optimize,
    predict_pose_constant_velocity,
    repopup_measurements,
)
from ..sim.corridor import HEADING_X_ROTATION
from .config import PipelineConfig

log = logging.getLogger(__name__)


@dataclass
class PipelineResult:
    graph: FactorGraph
    trajectory: list  # [Pose] in frame order
    selected_edges: list  # per frame, after postprocessing
    stats: dict = field(default_factory=dict)


def _clip_edge_to_range(edge, pose: Pose, intr, ground_world, max_range: float,
                        max_depth_std: float = 0.5, n: int = 33):
    """Keep the part of a boundary edge whose ground points are trustworthy.

    Near the horizon the backprojected range grows without bound and a pixel
    of noise moves the point by meters; samples beyond max_range or whose
    predicted depth standard deviation (unit pixel noise) exceeds
    max_depth_std are cut off. The std gate stays effective even when a
    drifted pitch estimate makes a distant span look close. Returns None
    when nothing reliable remains.
    """
    from ..fusion import PixelNoise, popup_depth_variance

    ground_c = transform_plane(ground_world, pose.inverse())
    noise = PixelNoise.isotropic(1.0)
    ts = np.linspace(0.0, 1.0, n)
    ok = np.zeros(n, dtype=bool)
    for i, t in enumerate(ts):
        px = edge.point(t)
        try:
            p = backproject_to_plane(px, intr, ground_c)
        except PopupSlamError:
            continue
        if np.linalg.norm(p) > max_range:
            continue
        var = popup_depth_variance(px, intr, ground_c, noise)
        ok[i] = np.sqrt(var) <= max_depth_std
    if not ok.any():
        return None
    i0 = int(np.argmax(ok))
    i1 = n - 1 - int(np.argmax(ok[::-1]))
    if i0 == 0 and i1 == n - 1:
        return edge
    a, b = edge.point(ts[i0]), edge.point(ts[i1])
    if abs(b[0] - a[0]) < 5.0 or np.linalg.norm(b - a) < 5.0:
        return None
    return EdgeSegment(a, b, id=edge.id)


def _wall_polygon(plane, base_pts: np.ndarray, height: float) -> np.ndarray:
    """Rectangle spanning the observed base extent, raised by height."""
    n = plane.n
    u = np.array([-n[1], n[0], 0.0])
    un = np.linalg.norm(u)
    if un < 1e-9:
        u = np.array([1.0, 0.0, 0.0])
    else:
        u = u / un
    v = np.cross(n, u)
    if v[2] < 0:
        v = -v
    s = base_pts @ u
    h = base_pts @ v
    anchor = -plane.d * n
    lo = anchor + s.min() * u + h.min() * v
    hi = anchor + s.max() * u + h.min() * v
    return np.array([lo, hi, hi + height * v, lo + height * v])


def _ground_polygon(pts: np.ndarray) -> np.ndarray:
    from ..polygons import convex_hull_2d

    hull = convex_hull_2d(pts[:, :2])
    if len(hull) < 3:
        lo, hi = pts[:, :2].min(0) - 0.5, pts[:, :2].max(0) + 0.5
        hull = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
    return np.c_[hull, np.zeros(len(hull))]


class _MapState:
    """Bookkeeping the graph does not carry: recency and support points."""

    def __init__(self):
        self.first_seen: dict[int, int] = {}
        self.last_seen: dict[int, int] = {}
        self.base_pts: dict[int, np.ndarray] = {}
        self.ground_id: Optional[int] = None
        self.merged_into: dict[int, int] = {}
        # landmark pairs a loop closure confirmed as distinct copies of one
        # wall but chose to keep separate; duplicate cleanup skips them
        self.dup_exempt: set[frozenset] = set()
        # after a committed closure, wall measurements at earlier poses are
        # in equilibrium with the reconciled map and stay frozen in re-pops
        self.wall_repop_min: Optional[int] = None

    def resolve(self, lid: int) -> int:
        while lid in self.merged_into:
            lid = self.merged_into[lid]
        return lid

    def note(self, lid: int, frame: int, pts: Optional[np.ndarray]) -> None:
        self.first_seen.setdefault(lid, frame)
        self.last_seen[lid] = frame
        if pts is not None:
            cur = self.base_pts.get(lid)
            self.base_pts[lid] = pts if cur is None else np.vstack([cur, pts])

    def spans(self) -> dict:
        return {
            lid: (self.first_seen[lid], self.last_seen[lid])
            for lid in self.last_seen
            if lid in self.first_seen
        }

    def absorb(self, keep: int, drop: int) -> None:
        self.merged_into[drop] = keep
        self.first_seen[keep] = min(
            self.first_seen.get(keep, 1 << 30), self.first_seen.pop(drop, 1 << 30)
        )
        self.last_seen[keep] = max(self.last_seen.get(keep, -1), self.last_seen.pop(drop, -1))
        dropped = self.base_pts.pop(drop, None)
        if dropped is not None:
            self.note(keep, self.last_seen[keep], dropped)


def _relieve_height(graph: FactorGraph, i: int, j: int, s: float) -> float:
    """Scale the accumulated height walk after pose i so pose j lands at z_j / s.

    Wall factors carry no information about camera height, so between ground
    sightings the z error is exactly the integrated odometry noise and the
    estimated trajectory itself stores the shape of that walk. Scaling the
    walk keeps every intermediate pose consistent with its own drift history
    instead of imposing a ramp the odometry never followed. Returns the
    applied factor lam, 0 when the correction was skipped.
    """
    z = {pid: node.pose.t[2] for pid, node in graph.poses.items()}
    walk = z[j] - z[i]
    target = z[j] - z[j] / s
    # a tiny or contradictory walk means the z error is not walk-shaped;
    # scaling it would inject noise rather than remove drift
    if abs(walk) < 0.02 or target * walk <= 0.0:
        return 0.0
    lam = min(2.0, target / walk)
    for pid, node in graph.poses.items():
        if pid <= i:
            continue
        t = node.pose.t.copy()
        t[2] -= lam * (z[pid] - z[i])
        node.pose = Pose(node.pose.R, t)
    return lam


def _refresh_polygons(graph: FactorGraph, state: _MapState, wall_height: float) -> None:
    for lid, lm in graph.landmarks.items():
        pts = state.base_pts.get(lid)
        if pts is None or len(pts) < 2:
            continue
        plane = HomogeneousPlane.from_minimal(lm.plane)
        if lm.label == GROUND:
            lm.polygon = _ground_polygon(pts)
            # the hull already summarizes the support; dropping interior
            # points keeps this pass from growing with trajectory length
            if len(pts) > 256:
                state.base_pts[lid] = lm.polygon.copy()
        else:
            lm.polygon = _wall_polygon(plane, pts, wall_height)


def run_pipeline(
    frames: Sequence,
    intrinsics: CameraIntrinsics,
    config: Optional[PipelineConfig] = None,
    initial_pose: Optional[Pose] = None,
) -> PipelineResult:
    """Run the full estimator over frame records.

    frames need .frame_id, .edges, .xi (or None) and .odometry (or None).
    The first pose is anchored with a tight prior at initial_pose, which
    defaults to standing at the origin at 1 m height looking along +x.
    """
    cfg = config or PipelineConfig()
    run = cfg.pipeline
    sel_params = cfg.selection.params()
    assoc_params = cfg.association.params()
    loop_params = cfg.loop.params()
    settings = cfg.solver.settings()
    plane_sig = run.plane_sigma * np.ones(3)
    odo_sig = np.concatenate([
        np.full(3, np.deg2rad(run.odom_r_sigma_deg)), np.full(3, run.odom_t_sigma),
    ])
    prior_sig = np.full(6, run.prior_sigma)

    graph = FactorGraph()
    state = _MapState()
    selected_all = []
    stats = {
        "frames": 0, "landmarks_created": 0, "merges": 0, "dup_merges": 0,
        "loop_events": [], "loop_rejected": [], "skipped_frames": [],
        "optimize_calls": 0, "repopup_dropped": 0,
    }
    t_start = time.perf_counter()
    pose0 = initial_pose or Pose(HEADING_X_ROTATION.copy(), np.array([0.0, 0.0, 1.0]))
    recent: list[Pose] = []

    def checkpoint(frame_idx: int) -> None:
        rep = optimize(graph, settings)
        stats["optimize_calls"] += 1
        if run.repopup:
            rp = repopup_measurements(
                graph, intrinsics, GROUND_WORLD, wall_pose_min=state.wall_repop_min
            )
            stats["repopup_dropped"] += len(rp.dropped)
            rep = optimize(graph, settings)
            stats["optimize_calls"] += 1
        # collapse short-term duplicate walls; revisits stay for loop closure
        dups = find_duplicate_landmarks(graph, spans=state.spans(), max_gap=loop_params.gap_min)
        for keep, drop in dups:
            keep, drop = state.resolve(keep), state.resolve(drop)
            if keep == drop or frozenset((keep, drop)) in state.dup_exempt:
                continue
            merge_landmarks(graph, min(keep, drop), max(keep, drop))
            state.absorb(min(keep, drop), max(keep, drop))
            stats["dup_merges"] += 1
        if dups:
            rep = optimize(graph, settings)
            stats["optimize_calls"] += 1
        if cfg.loop.enabled:
            candidates = detect_loop_geometric(graph, loop_params)
            # one revisit per checkpoint; detection runs again next time
            cand = candidates[0] if candidates else None
            pairs = []
            if cand is not None:
                for a, b, _score in cand.pairs:
                    a, b = state.resolve(a), state.resolve(b)
                    if a != b and (a, b) not in pairs:
                        pairs.append((a, b))
            if pairs:
                snap_graph = copy.deepcopy(graph)
                snap_state = copy.deepcopy(state)
                before_t = {pid: graph.poses[pid].pose.t.copy() for pid in graph.poses}
                base_chi2 = rep.final_chi2
                t_j = graph.poses[cand.j].pose.t
                z_ref = float(graph.poses[cand.i].pose.t[2])
                s, corr, _ = estimate_scale_drift(graph, pairs, t_j, z_ref=z_ref)
                if abs(s - 1.0) > 0.02:
                    # height drift rescaled everything popped near pose j
                    # (ranges scale with assumed camera height); walls are
                    # z-invariant, so only this correction can undo it
                    _relieve_height(graph, cand.i, cand.j, s)
                copies = {max(a, b) for a, b in pairs}
                pmin = min(
                    (
                        f.pose_id
                        for f in graph.factors
                        if isinstance(f, PlaneMeasurementFactor)
                        and f.landmark_id in copies
                    ),
                    default=cand.j,
                )
                planar_off = float(np.hypot(corr[0], corr[1]))
                log.info(
                    "checkpoint %d: loop (%d,%d) pairs=%s s=%.3f offset=%.3f",
                    frame_idx, cand.i, cand.j, pairs, s, planar_off,
                )
                if planar_off < cfg.loop.merge_min_offset:
                    # the copies already sit where the originals are, so the
                    # map is internally consistent and fusing would only feed
                    # the pairs' residual normal mismatch into the trajectory.
                    # Keep the height relief, refresh the ground factors it
                    # invalidated, and leave the copies alone for good.
                    state.dup_exempt.update(frozenset(p) for p in pairs)
                    merged = 0
                    if run.repopup:
                        rp = repopup_measurements(
                            graph, intrinsics, GROUND_WORLD, wall_landmarks=set()
                        )
                        stats["repopup_dropped"] += len(rp.dropped)
                    rep2 = optimize(graph, settings)
                    stats["optimize_calls"] += 1
                else:
                    keeps = set()
                    for a, b in pairs:
                        keep, drop = min(a, b), max(a, b)
                        keeps.add(keep)
                        merge_landmarks(graph, keep, drop)
                        state.absorb(keep, drop)
                    merged = len(pairs)
                    # the fused factors were popped up through drifted ground
                    # planes and would anchor the old geometry, so re-derive
                    # them before each solve; walls mapped before the revisit
                    # stay frozen until the fused ones settle, else the whole
                    # ring re-balances and leaks into pose components no wall
                    # observes
                    for _ in range(2 if run.repopup else 1):
                        if run.repopup:
                            rp = repopup_measurements(
                                graph, intrinsics, GROUND_WORLD,
                                wall_landmarks=keeps, wall_pose_min=pmin,
                            )
                            stats["repopup_dropped"] += len(rp.dropped)
                        rep2 = optimize(graph, settings)
                        stats["optimize_calls"] += 1
                    if run.repopup:
                        rp = repopup_measurements(graph, intrinsics, GROUND_WORLD)
                        stats["repopup_dropped"] += len(rp.dropped)
                        rep2 = optimize(graph, settings)
                        stats["optimize_calls"] += 1
                shift = max(
                    float(np.linalg.norm(graph.poses[pid].pose.t - before_t[pid]))
                    for pid in before_t
                )
                # a correct closure releases accumulated tension, so chi2 must
                # not grow much and poses must not move beyond the detection
                # radius; anything else is a wrong merge and is rolled back
                if (
                    shift > loop_params.radius + cfg.loop.shift_slack
                    or rep2.final_chi2 > cfg.loop.cost_growth * base_chi2 + cfg.loop.cost_slack
                ):
                    vars(graph).update(vars(snap_graph))
                    vars(state).update(vars(snap_state))
                    stats["loop_rejected"].append((cand.i, cand.j, len(pairs)))
                    log.info(
                        "checkpoint %d: rolled back loop closure (%d,%d) "
                        "(shift %.2f, chi2 %.0f -> %.0f)",
                        frame_idx, cand.i, cand.j, shift, base_chi2, rep2.final_chi2,
                    )
                else:
                    stats["merges"] += merged
                    stats["loop_events"].append((cand.i, cand.j, merged))
                    state.wall_repop_min = (
                        pmin
                        if state.wall_repop_min is None
                        else min(state.wall_repop_min, pmin)
                    )
        _refresh_polygons(graph, state, run.wall_height)

    for k, rec in enumerate(frames):
        stats["frames"] += 1
        # edge selection
        edges = list(rec.edges)
        xi = getattr(rec, "xi", None)
        if xi is not None and len(xi) >= 2 and edges:
            curve = BoundaryCurve(np.asarray(xi, dtype=float))
            chosen = greedy_select(edges, curve, sel_params)
            edges = postprocess_edges(chosen, sel_params)
        selected_all.append(edges)

        # pose initialization
        if k == 0:
            pose_init = pose0
        elif rec.odometry is not None:
            pose_init = recent[-1].compose(rec.odometry)
        else:
            pose_init = predict_pose_constant_velocity(recent)

        graph.add_pose(pose_init, pose_id=k)
        if k == 0:
            graph.add_prior(0, pose_init, prior_sig)
        else:
            # without odometry the prediction itself becomes the pseudo-measurement
            delta = rec.odometry if rec.odometry is not None else recent[-1].inverse().compose(pose_init)
            graph.add_odometry(k - 1, k, delta, odo_sig)

        # pop-up measurements from the range-trusted parts of the edges
        try:
            trusted = [
                ce for e in edges
                if (ce := _clip_edge_to_range(e, pose_init, intrinsics, GROUND_WORLD,
                                              run.max_popup_range)) is not None
            ]
            meas = popup_frame(trusted, pose_init, intrinsics, GROUND_WORLD, run.wall_height)
        except CameraBelowGround:
            log.warning("frame %d: camera at or below ground, no plane measurements", k)
            stats["skipped_frames"].append(k)
            meas = []
        except EmptyFrame:
            meas = popup_frame([], pose_init, intrinsics, GROUND_WORLD, run.wall_height)

        wall_meas = [m for m in meas if m.label != GROUND]
        ground_meas = [m for m in meas if m.label == GROUND]

        # ground is unique by label and always re-associates to itself
        for m in ground_meas:
            world_plane = transform_plane(m.plane, pose_init)
            poly_w = pose_init.apply(m.polygon)
            if state.ground_id is None:
                lm = graph.add_landmark(world_plane, GROUND, poly_w)
                state.ground_id = lm.id
                stats["landmarks_created"] += 1
            graph.add_plane_factor(k, state.ground_id, m.plane, plane_sig,
                                   source=_source(k, m))
            state.note(state.ground_id, k, poly_w)

        # walls associate within the recency window
        candidates = [
            graph.landmarks[lid]
            for lid, seen in state.last_seen.items()
            if lid in graph.landmarks and seen >= k - cfg.association.window
            and graph.landmarks[lid].label != GROUND
        ]
        world = [
            (transform_plane(m.plane, pose_init), m.label, pose_init.apply(m.polygon))
            for m in wall_meas
        ]
        matches = associate(world, candidates, assoc_params)
        for mi, m in enumerate(wall_meas):
            lid = matches.get(mi)
            if lid is None:
                lm = graph.add_landmark(world[mi][0], m.label, world[mi][2])
                lid = lm.id
                stats["landmarks_created"] += 1
            graph.add_plane_factor(k, lid, m.plane, plane_sig, source=_source(k, m))
            base_w = pose_init.apply(m.polygon[:2])  # wall quad starts with its base edge
            state.note(lid, k, base_w)
            # grow the stored extent right away so the overlap gate tracks the sweep
            lm = graph.landmarks[lid]
            lm.polygon = _wall_polygon(
                HomogeneousPlane.from_minimal(lm.plane), state.base_pts[lid], run.wall_height
            )

        recent.append(pose_init)
        if len(recent) > 2:
            recent.pop(0)

        is_last = k == len(frames) - 1
        if (k > 0 and k % run.optimize_every == 0) or is_last:
            checkpoint(k)
            recent = [graph.poses[i].pose for i in sorted(graph.poses)[-2:]]

    trajectory = [graph.poses[i].pose for i in sorted(graph.poses)]
    stats["runtime_s"] = time.perf_counter() - t_start
    stats["n_landmarks"] = len(graph.landmarks)
    stats["n_factors"] = len(graph.factors)
    return PipelineResult(
        graph=graph, trajectory=trajectory, selected_edges=selected_all, stats=stats
    )


def _source(frame_id: int, m):
    from ..factors import PopupSource

    pixels = None
    if m.label != GROUND and m.edge is not None:
        pixels = np.array([m.edge.a, m.edge.b], dtype=float)
    return PopupSource(frame_id=frame_id, kind=m.label, pixels=pixels)
