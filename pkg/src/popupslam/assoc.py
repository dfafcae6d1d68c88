"""Frame-to-map plane association, geometric loop detection, landmark merging.

Association gates candidate (measurement, landmark) pairs on normal angle,
plane-to-polygon distance and projected polygon overlap, then assigns
one-to-one by a normalized weighted score (smaller is better). Loop
detection flags pose pairs that are spatially close but temporally far and
looks for at least two distinct landmark pairs that the (looser) loop gates
say are the same physical plane; merging then rewires the measurement
factors of the dropped landmark onto the kept one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DegeneratePolygon, LabelMismatch, UnknownLandmark
from .geometry import GROUND, HomogeneousPlane
from .graph import FactorGraph, PlaneLandmark
from .factors import PlaneMeasurementFactor
from .polygons import clip_convex, convex_hull_2d, from_plane_coords, shoelace_area, to_plane_coords


@dataclass(frozen=True)
class AssociationParams:
    max_normal_angle_deg: float = 30.0
    max_plane_dist: float = 0.5
    min_overlap_ratio: float = 0.1
    w_angle: float = 0.4
    w_dist: float = 0.4
    w_overlap: float = 0.2

    def __post_init__(self):
        s = self.w_angle + self.w_dist + self.w_overlap
        if abs(s - 1.0) > 1e-9:
            raise ValueError(f"score weights must sum to 1, got {s}")


@dataclass(frozen=True)
class LoopParams:
    """Geometric loop gating; thresholds looser than frame-to-map association."""

    gap_min: int = 30
    radius: float = 3.0
    max_normal_angle_deg: float = 30.0
    # wide enough to catch copies displaced by severe height drift; the
    # facing gate and the drift-consistency filter carry the selectivity
    max_plane_dist: float = 3.5
    min_overlap_ratio: float = 0.05
    min_pairs: int = 2
    offset_tol: float = 0.3  # one scale-plus-shift must explain all pairs to this tolerance
    # merging a revisit copy seen only a handful of times commits the map to
    # a closure the evidence cannot yet support; wait until it matures
    min_observations: int = 8


@dataclass(frozen=True)
class PlanePairScores:
    angle: float  # radians, orientation-insensitive
    distance: float  # meters, symmetric mean plane-equation residual
    overlap_ratio: float  # intersection over smaller area, in [0, 1]


@dataclass(frozen=True)
class LoopCandidate:
    i: int  # earlier pose id
    j: int  # later pose id
    pairs: tuple  # ((landmark_i, landmark_j, score), ...)


def plane_pair_scores(
    plane_a: HomogeneousPlane,
    poly_a: np.ndarray,
    plane_b: HomogeneousPlane,
    poly_b: np.ndarray,
) -> PlanePairScores:
    """Raw geometric scores of one plane pair (no gating applied).

    Overlap projects polygon a orthogonally onto plane b and intersects with
    polygon b there; the ratio divides by the smaller of the two areas.
    """
    poly_a = np.asarray(poly_a, dtype=float).reshape(-1, 3)
    poly_b = np.asarray(poly_b, dtype=float).reshape(-1, 3)
    if len(poly_a) < 3 or len(poly_b) < 3:
        raise DegeneratePolygon("polygons need at least 3 vertices")

    angle = float(np.arccos(min(1.0, abs(float(plane_a.n @ plane_b.n)))))
    dist = 0.5 * (
        float(np.mean(np.abs(plane_b.evaluate(poly_a))))
        + float(np.mean(np.abs(plane_a.evaluate(poly_b))))
    )

    a2 = to_plane_coords(poly_a, plane_b.n, plane_b.d)
    b2 = to_plane_coords(poly_b, plane_b.n, plane_b.d)
    area_a = shoelace_area(convex_hull_2d(a2))
    area_b = shoelace_area(convex_hull_2d(b2))
    if area_a < 1e-12 or area_b < 1e-12:
        raise DegeneratePolygon("polygon area vanishes")
    inter = clip_convex(convex_hull_2d(a2), convex_hull_2d(b2))
    overlap = shoelace_area(inter) / min(area_a, area_b)
    return PlanePairScores(angle, dist, min(1.0, overlap))


def _gated_score(s: PlanePairScores, label_a: str, label_b: str, p) -> Optional[float]:
    """Weighted score if the pair passes all gates, else None."""
    if label_a != label_b:
        return None
    max_angle = np.deg2rad(p.max_normal_angle_deg)
    if s.angle > max_angle or s.distance > p.max_plane_dist or s.overlap_ratio < p.min_overlap_ratio:
        return None
    wa = getattr(p, "w_angle", 0.4)
    wd = getattr(p, "w_dist", 0.4)
    wo = getattr(p, "w_overlap", 0.2)
    return wa * s.angle / max_angle + wd * s.distance / p.max_plane_dist + wo * (1.0 - s.overlap_ratio)


def associate(
    measurements: Sequence[tuple[HomogeneousPlane, str, np.ndarray]],
    landmarks: Sequence[PlaneLandmark],
    params: Optional[AssociationParams] = None,
) -> dict[int, int]:
    """One-to-one measurement-to-landmark matching.

    measurements are (world plane, label, world polygon) triples. Returns
    {measurement index: landmark id}; unmatched measurements are absent.
    Pairs failing any gate never match; among gated pairs the smallest
    weighted score wins, ties toward the lower landmark id.
    """
    params = params or AssociationParams()
    scored = []
    for mi, (plane_m, label_m, poly_m) in enumerate(measurements):
        for lm in landmarks:
            try:
                s = plane_pair_scores(
                    plane_m, poly_m, HomogeneousPlane.from_minimal(lm.plane), lm.polygon
                )
            except DegeneratePolygon:
                continue
            score = _gated_score(s, label_m, lm.label, params)
            if score is not None:
                scored.append((score, lm.id, mi))
    scored.sort()
    out: dict[int, int] = {}
    used_lm: set[int] = set()
    for score, lid, mi in scored:
        if mi in out or lid in used_lm:
            continue
        out[mi] = lid
        used_lm.add(lid)
    return out


def detect_loop_geometric(graph: FactorGraph, params: Optional[LoopParams] = None) -> list[LoopCandidate]:
    """Flag revisits by pose proximity and confirm them with plane pairs.

    A pose pair (i, j) qualifies when j lies more than gap_min poses after i
    but within radius meters. Wall landmarks observed at i are matched
    against wall landmarks observed at j under the loop gates, each revisit
    copy binding to one original; a candidate needs at least min_pairs
    matches. Accepted candidates suppress further pairs within gap_min/2 of
    themselves so one revisit yields one candidate.
    """
    params = params or LoopParams()
    pose_ids = sorted(graph.poses)
    pos = {pid: graph.poses[pid].pose.t for pid in pose_ids}
    seen: dict[int, set[int]] = {pid: set() for pid in pose_ids}
    observers: dict[int, list[int]] = {}
    for f in graph.factors:
        if isinstance(f, PlaneMeasurementFactor):
            lm = graph.landmarks.get(f.landmark_id)
            if lm is not None and lm.label != GROUND:
                seen[f.pose_id].add(f.landmark_id)
            if f.pose_id in graph.poses:
                observers.setdefault(f.landmark_id, []).append(f.pose_id)

    candidates: list[LoopCandidate] = []
    P = np.array([pos[pid] for pid in pose_ids]).reshape(len(pose_ids), 3)
    for jj in range(len(pose_ids)):
        j = pose_ids[jj]
        nearby = np.flatnonzero(
            ((P[:jj] - P[jj]) ** 2).sum(axis=1) <= params.radius**2
        )
        for ii in nearby:
            if jj - ii <= params.gap_min:
                continue
            i = pose_ids[ii]
            if any(
                abs(ii - a) < params.gap_min / 2 or abs(jj - b) < params.gap_min / 2
                for a, b, _ in _accepted_indices(candidates, pose_ids)
            ):
                continue
            pairs = _match_landmark_pairs(
                graph, seen[i], seen[j], params, pos[j], z_ref=pos[i][2],
                observers=observers,
            )
            if len(pairs) >= params.min_pairs:
                candidates.append(LoopCandidate(i=i, j=j, pairs=tuple(pairs)))
    return candidates


def _accepted_indices(candidates, pose_ids):
    index_of = {pid: k for k, pid in enumerate(pose_ids)}
    return [(index_of[c.i], index_of[c.j], c) for c in candidates]


def landmark_facing(graph: FactorGraph, lid: int, observer_poses=None) -> float:
    """Which side of a wall its cameras sit on: sign of mean(n . t + d).

    The minimal chart stores planes only up to sign, so two parallel walls
    seen from between them can have numerically identical parameters. A
    popped-up wall always faces its camera, so averaging the signed camera
    distance over the observing poses recovers the physical facing.
    """
    pl = HomogeneousPlane.from_minimal(graph.landmarks[lid].plane)
    if observer_poses is None:
        observer_poses = [
            f.pose_id
            for f in graph.factors
            if isinstance(f, PlaneMeasurementFactor)
            and f.landmark_id == lid
            and f.pose_id in graph.poses
        ]
    sides = [float(pl.n @ graph.poses[pid].pose.t) + pl.d for pid in observer_poses]
    if not sides:
        return 1.0
    return 1.0 if float(np.mean(sides)) >= 0.0 else -1.0


def _match_landmark_pairs(
    graph: FactorGraph, lms_i, lms_j, params: LoopParams, t_j, z_ref=None, observers=None
):
    facing: dict[int, float] = {}
    oriented: dict[int, np.ndarray] = {}
    for lid in set(lms_i) | set(lms_j):
        obs = None if observers is None else observers.get(lid, [])
        facing[lid] = landmark_facing(graph, lid, obs)
        oriented[lid] = facing[lid] * HomogeneousPlane.from_minimal(
            graph.landmarks[lid].plane
        ).n
    scored = []
    for a in sorted(lms_i):
        for b in sorted(lms_j):
            if a == b:
                continue
            if graph.landmark_degree(b) < params.min_observations:
                continue
            if float(oriented[a] @ oriented[b]) < 0.0:
                continue
            la, lb = graph.landmarks[a], graph.landmarks[b]
            try:
                s = plane_pair_scores(
                    HomogeneousPlane.from_minimal(la.plane), la.polygon,
                    HomogeneousPlane.from_minimal(lb.plane), lb.polygon,
                )
            except DegeneratePolygon:
                continue
            score = _gated_score(s, la.label, lb.label, params)
            if score is not None:
                scored.append((score, a, b))
    scored.sort()
    # an earlier wall may come back fragmented into several revisit copies
    # (drift split it across frames), so originals may claim more than one
    # copy while each copy binds to exactly one original
    used_b: set[int] = set()
    pairs = []
    for score, a, b in scored:
        if b in used_b:
            continue
        used_b.add(b)
        pairs.append((a, b, score))
    return _drift_consistent(graph, pairs, t_j, params.offset_tol, z_ref)


def estimate_scale_drift(graph: FactorGraph, pairs, t_j: np.ndarray, z_ref=None):
    """Scale and planar offset relating revisit copies to their originals.

    A wall popped up with a wrong camera height keeps its normal but has
    all ranges from the camera multiplied by the height ratio s, while
    planar pose drift tau shifts it rigidly. Writing both effects on the
    signed camera distance r = n . t_j + d gives, per pair,
    r_b = s * r_a + n . u with u = -s * tau, which is linear in (s, u).
    Small Tikhonov rows pull toward (1, 0) so two-pair candidates stay
    determined. Returns (s, correction, residuals) where correction is the
    planar shift that moves the revisit poses back onto the originals.

    When every pair shares the same original (one wall came back fragmented
    into several copies), all rows carry one r_a and s is indistinguishable
    from u; with a reference camera height z_ref from mapping time the
    current height gives s directly and only the shift is solved.
    """
    rows, rhs = [], []
    ra_all = []
    for pair in pairs:
        a, b = pair[0], pair[1]
        pa = HomogeneousPlane.from_minimal(graph.landmarks[a].plane)
        pb = HomogeneousPlane.from_minimal(graph.landmarks[b].plane)
        nb, db = (pb.n, pb.d) if float(pa.n @ pb.n) >= 0 else (-pb.n, -pb.d)
        ra = float(pa.n @ t_j) + pa.d
        ra_all.append(ra)
        rows.append([ra, pa.n[0], pa.n[1]])
        rhs.append(float(pa.n @ t_j) + db)
    degenerate = (
        z_ref is not None
        and abs(float(z_ref)) > 0.05
        and len({pair[0] for pair in pairs}) == 1
    )
    if degenerate:
        s = float(t_j[2]) / float(z_ref)
        A = np.asarray([[r[1], r[2]] for r in rows] + [[0.05, 0.0], [0.0, 0.05]])
        y = np.asarray([rhs[k] - s * ra_all[k] for k in range(len(pairs))] + [0.0, 0.0])
        u = np.linalg.lstsq(A, y, rcond=None)[0]
        resid = np.abs(A[: len(pairs)] @ u - y[: len(pairs)])
        corr = np.array([u[0], u[1], 0.0]) / max(abs(s), 1e-6)
        return s, corr, resid
    lam = 0.05
    rows += [[lam, 0.0, 0.0], [0.0, lam, 0.0], [0.0, 0.0, lam]]
    rhs += [lam, 0.0, 0.0]
    A = np.asarray(rows)
    y = np.asarray(rhs)
    x = np.linalg.lstsq(A, y, rcond=None)[0]
    s = float(x[0])
    resid = np.abs(A[: len(pairs)] @ x - y[: len(pairs)])
    corr = np.array([x[1], x[2], 0.0]) / max(abs(s), 1e-6)
    return s, corr, resid


def _drift_consistent(graph: FactorGraph, pairs, t_j: np.ndarray, tol: float, z_ref=None):
    """Keep the subset of pairs the scale-plus-offset model explains.

    Near-parallel corridor walls make the wrong cross pairing (left wall
    onto right wall) locally plausible, but no single (s, u) explains it
    together with a correct pair, so residuals expose it. Worst offenders
    are dropped one at a time. Fragments of a single wall are exempt: they
    were mapped at different points of the drift and legitimately sit at
    different offsets no shared shift explains.
    """
    if pairs and len({p[0] for p in pairs}) == 1:
        return pairs
    while len(pairs) >= 2:
        _, _, resid = estimate_scale_drift(graph, pairs, t_j, z_ref)
        if float(resid.max()) <= tol:
            break
        worst = max(range(len(pairs)), key=lambda idx: (resid[idx], pairs[idx][2]))
        pairs.pop(worst)
    return pairs


def find_duplicate_landmarks(
    graph: FactorGraph,
    max_angle_deg: float = 10.0,
    max_dist: float = 0.35,
    spans: Optional[dict] = None,
    max_gap: int = 30,
) -> list[tuple[int, int]]:
    """Wall landmark pairs so close in plane space they must be one plane.

    Duplicates appear when a bad pose prediction pushes a fresh measurement
    past the association gates; once the graph has been optimized the copies
    collapse onto nearly the same plane and much tighter gates suffice.
    Overlap is deliberately not required: the copies may cover disjoint
    stretches of the same wall. When spans maps landmark id to its
    (first_seen, last_seen) frame interval, pairs whose intervals are more
    than max_gap frames apart are left alone; those are revisits and belong
    to loop closure, not cleanup. Returns (keep, drop) with keep the older
    id, chains already collapsed so the pairs can be merged in order.
    """
    walls = sorted(lid for lid, lm in graph.landmarks.items() if lm.label != GROUND)
    max_angle = np.deg2rad(max_angle_deg)
    scored = []
    for ai in range(len(walls)):
        for bi in range(ai + 1, len(walls)):
            a, b = walls[ai], walls[bi]
            if spans is not None:
                sa, sb = spans.get(a), spans.get(b)
                if sa is None or sb is None:
                    continue
                if max(sb[0] - sa[1], sa[0] - sb[1]) > max_gap:
                    continue
            la, lb = graph.landmarks[a], graph.landmarks[b]
            pa = HomogeneousPlane.from_minimal(la.plane)
            pb = HomogeneousPlane.from_minimal(lb.plane)
            if np.arccos(min(1.0, abs(float(pa.n @ pb.n)))) > max_angle:
                continue
            dist = 0.5 * (
                float(np.mean(np.abs(pb.evaluate(la.polygon))))
                + float(np.mean(np.abs(pa.evaluate(lb.polygon))))
            )
            if dist <= max_dist:
                scored.append((dist, a, b))
    scored.sort()
    root: dict[int, int] = {}

    def _find(x: int) -> int:
        while x in root:
            x = root[x]
        return x

    out = []
    for _, a, b in scored:
        ra, rb = _find(a), _find(b)
        if ra == rb:
            continue
        keep, drop = min(ra, rb), max(ra, rb)
        root[drop] = keep
        out.append((keep, drop))
    return out


def merge_landmarks(graph: FactorGraph, keep_id: int, drop_id: int) -> None:
    """Rewire drop's measurement factors onto keep and delete drop.

    Labels must agree; the kept polygon becomes the convex hull of both
    polygons projected onto the kept plane. Factor count is conserved.
    """
    if keep_id == drop_id:
        raise ValueError("keep and drop must differ")
    for lid in (keep_id, drop_id):
        if lid not in graph.landmarks:
            raise UnknownLandmark(f"landmark {lid} not in graph")
    keep, drop = graph.landmarks[keep_id], graph.landmarks[drop_id]
    if keep.label != drop.label:
        raise LabelMismatch(f"cannot merge {keep.label} with {drop.label}")

    for f in graph.factors:
        if isinstance(f, PlaneMeasurementFactor) and f.landmark_id == drop_id:
            f.landmark_id = keep_id

    plane = HomogeneousPlane.from_minimal(keep.plane)
    pts = np.vstack([keep.polygon, drop.polygon])
    uv = convex_hull_2d(to_plane_coords(pts, plane.n, plane.d))
    if len(uv) >= 3:
        keep.polygon = from_plane_coords(uv, plane.n, plane.d)
    del graph.landmarks[drop_id]
