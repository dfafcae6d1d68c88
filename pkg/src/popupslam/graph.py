"""Factor graph over camera poses and plane landmarks, with batch LM solver.

The graph owns pose nodes (6 dof), plane landmarks (3 dof minimal form) and
three factor kinds (pose prior, relative odometry, plane measurement). State
is optimized in a product chart: body-frame rotation vector + world
translation per pose, quaternion right-retraction per plane. Normal
equations are assembled sparsely and solved with a damped (Levenberg-
Marquardt) Cholesky/LU step; the gauge must be pinned by at least one prior.

Rank deficiency handling: for small systems the undamped normal matrix is
eigen-checked up front; large systems are only checked when damping blows up
(a stall), keeping the solve cost linear in practice. A detected deficiency
raises SingularSystem carrying the free direction and a per-variable blame
summary.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .errors import SingularSystem, UnknownLandmark
from .factors import (
    OdometryFactor,
    PlaneMeasurementFactor,
    PopupSource,
    PriorPoseFactor,
    _check_sigmas,
    linearize_pose_pair_factors,
    linearize_prior_factors,
)
from .geometry import (
    GROUND,
    GROUND_WORLD,
    CameraIntrinsics,
    HomogeneousPlane,
    Pose,
    transform_plane,
)
from .minimal import MinimalPlane, quat_exp_tangent, quat_mul
from .rotations import so3_exp_batch

logger = logging.getLogger(__name__)

Factor = Union[PriorPoseFactor, OdometryFactor, PlaneMeasurementFactor]


@dataclass
class PoseNode:
    id: int
    pose: Pose


@dataclass
class PlaneLandmark:
    id: int
    plane: MinimalPlane
    label: str
    polygon: np.ndarray  # (N,3) world-frame vertex loop for association/viz


@dataclass(frozen=True)
class SolverSettings:
    max_iterations: int = 100
    lambda_init: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 0.3
    rel_decrease_tol: float = 1e-8
    update_tol: float = 1e-10
    lambda_max: float = 1e8
    rank_check_dim: int = 600
    rank_rel_tol: float = 1e-10
    # Huber threshold on whitened plane residual blocks, 0 disables.
    # Conflicting re-observations then cost linearly instead of pulling
    # the whole trajectory toward a compromise.
    plane_huber: float = 0.0


@dataclass
class OptimizeReport:
    iterations: int = 0
    accepted: int = 0
    rejected: int = 0
    initial_chi2: float = 0.0
    final_chi2: float = 0.0
    termination: str = ""


@dataclass
class RepopupReport:
    updated: int = 0
    dropped: list = field(default_factory=list)  # (factor index, reason)


class FactorGraph:
    def __init__(self):
        self.poses: dict[int, PoseNode] = {}
        self.landmarks: dict[int, PlaneLandmark] = {}
        self.factors: list[Factor] = []
        self._next_pose = 0
        self._next_landmark = 0

    # ---- construction -----------------------------------------------------

    def add_pose(self, pose: Pose, pose_id: Optional[int] = None) -> PoseNode:
        pid = self._next_pose if pose_id is None else pose_id
        if pid in self.poses:
            raise ValueError(f"pose id {pid} already present")
        node = PoseNode(pid, pose)
        self.poses[pid] = node
        self._next_pose = max(self._next_pose, pid + 1)
        return node

    def add_landmark(
        self,
        plane: Union[MinimalPlane, HomogeneousPlane],
        label: str,
        polygon: np.ndarray,
        landmark_id: Optional[int] = None,
    ) -> PlaneLandmark:
        lid = self._next_landmark if landmark_id is None else landmark_id
        if lid in self.landmarks:
            raise ValueError(f"landmark id {lid} already present")
        if isinstance(plane, HomogeneousPlane):
            plane = plane.to_minimal()
        lm = PlaneLandmark(lid, plane, label, np.asarray(polygon, dtype=float))
        self.landmarks[lid] = lm
        self._next_landmark = max(self._next_landmark, lid + 1)
        return lm

    def add_prior(self, pose_id: int, prior: Pose, sigmas) -> PriorPoseFactor:
        f = PriorPoseFactor(pose_id, prior, _check_sigmas(sigmas, 6))
        self._check_pose(pose_id)
        self.factors.append(f)
        return f

    def add_odometry(self, i: int, j: int, delta: Pose, sigmas) -> OdometryFactor:
        self._check_pose(i)
        self._check_pose(j)
        f = OdometryFactor(i, j, delta, _check_sigmas(sigmas, 6))
        self.factors.append(f)
        return f

    def add_plane_factor(
        self,
        pose_id: int,
        landmark_id: int,
        measured: Union[MinimalPlane, HomogeneousPlane],
        sigmas,
        source: Optional[PopupSource] = None,
    ) -> PlaneMeasurementFactor:
        self._check_pose(pose_id)
        if landmark_id not in self.landmarks:
            raise UnknownLandmark(f"landmark {landmark_id} not in graph")
        if isinstance(measured, HomogeneousPlane):
            measured = measured.to_minimal()
        f = PlaneMeasurementFactor(pose_id, landmark_id, measured, _check_sigmas(sigmas, 3), source)
        self.factors.append(f)
        return f

    def _check_pose(self, pid):
        if pid not in self.poses:
            raise ValueError(f"pose {pid} not in graph")

    # ---- inspection -------------------------------------------------------

    def landmark_degree(self, landmark_id: int) -> int:
        return sum(
            1
            for f in self.factors
            if isinstance(f, PlaneMeasurementFactor) and f.landmark_id == landmark_id
        )

    def validate(self) -> list[str]:
        """Structural invariant check; returns a list of violations."""
        problems = []
        for f in self.factors:
            if isinstance(f, PriorPoseFactor) and f.pose_id not in self.poses:
                problems.append(f"prior references missing pose {f.pose_id}")
            elif isinstance(f, OdometryFactor):
                for pid in (f.i, f.j):
                    if pid not in self.poses:
                        problems.append(f"odometry references missing pose {pid}")
            elif isinstance(f, PlaneMeasurementFactor):
                if f.pose_id not in self.poses:
                    problems.append(f"plane factor references missing pose {f.pose_id}")
                if f.landmark_id not in self.landmarks:
                    problems.append(f"plane factor references missing landmark {f.landmark_id}")
        grounds = [l for l in self.landmarks.values() if l.label == GROUND]
        if len(grounds) > 1:
            problems.append(f"{len(grounds)} ground landmarks (expected at most one)")
        return problems

    def chi2(self) -> float:
        res = _all_whitened_residuals(self)
        return float(res @ res)


# ---------------------------------------------------------------------------
# linearization plumbing


class _Layout:
    """Column layout: poses (6 dof) first in id order, then landmarks (3 dof)."""

    def __init__(self, graph: FactorGraph):
        self.pose_ids = sorted(graph.poses)
        self.lm_ids = sorted(graph.landmarks)
        self.pose_col = {pid: 6 * k for k, pid in enumerate(self.pose_ids)}
        base = 6 * len(self.pose_ids)
        self.lm_col = {lid: base + 3 * k for k, lid in enumerate(self.lm_ids)}
        self.dim = base + 3 * len(self.lm_ids)
        self.pose_index = {pid: k for k, pid in enumerate(self.pose_ids)}
        self.lm_index = {lid: k for k, lid in enumerate(self.lm_ids)}

    def describe_direction(self, v: np.ndarray) -> str:
        """Human-readable largest contributors of a state-space direction."""
        parts = []
        for pid in self.pose_ids:
            c = self.pose_col[pid]
            mag = float(np.linalg.norm(v[c : c + 6]))
            if mag > 0.2:
                parts.append(f"pose {pid} ({mag:.2f})")
        for lid in self.lm_ids:
            c = self.lm_col[lid]
            mag = float(np.linalg.norm(v[c : c + 3]))
            if mag > 0.2:
                parts.append(f"landmark {lid} ({mag:.2f})")
        return ", ".join(parts) if parts else "diffuse direction"


class _Batches:
    """Per-kind factor arrays; gathered once per optimize() call."""

    def __init__(self, graph: FactorGraph, layout: _Layout):
        self.plane = [f for f in graph.factors if isinstance(f, PlaneMeasurementFactor)]
        self.odom = [f for f in graph.factors if isinstance(f, OdometryFactor)]
        self.prior = [f for f in graph.factors if isinstance(f, PriorPoseFactor)]

        self.pl_pose = np.array([layout.pose_index[f.pose_id] for f in self.plane], dtype=np.int64)
        self.pl_lm = np.array([layout.lm_index[f.landmark_id] for f in self.plane], dtype=np.int64)
        self.pl_meas = (
            np.stack([f.measured.q for f in self.plane])
            if self.plane
            else np.zeros((0, 4))
        )
        self.pl_sqrt = np.zeros((len(self.plane), 3, 3))
        for k, f in enumerate(self.plane):
            self.pl_sqrt[k] = np.diag(1.0 / f.sigmas)

        self.od_i = np.array([layout.pose_index[f.i] for f in self.odom], dtype=np.int64)
        self.od_j = np.array([layout.pose_index[f.j] for f in self.odom], dtype=np.int64)
        self.od_Rz = (
            np.stack([f.delta.R for f in self.odom]) if self.odom else np.zeros((0, 3, 3))
        )
        self.od_tz = np.stack([f.delta.t for f in self.odom]) if self.odom else np.zeros((0, 3))
        self.od_sig = (
            np.stack([f.sigmas for f in self.odom]) if self.odom else np.zeros((0, 6))
        )

        self.pr_pose = np.array([layout.pose_index[f.pose_id] for f in self.prior], dtype=np.int64)
        self.pr_R = (
            np.stack([f.prior.R for f in self.prior]) if self.prior else np.zeros((0, 3, 3))
        )
        self.pr_t = np.stack([f.prior.t for f in self.prior]) if self.prior else np.zeros((0, 3))
        self.pr_sig = (
            np.stack([f.sigmas for f in self.prior]) if self.prior else np.zeros((0, 6))
        )

        self.n_rows = 3 * len(self.plane) + 6 * len(self.odom) + 6 * len(self.prior)

    def residuals(self, Rs, ts, qs) -> np.ndarray:
        out = []
        if len(self.plane):
            res, _, _ = kernels.linearize_plane_factors(
                Rs[self.pl_pose], ts[self.pl_pose], qs[self.pl_lm], self.pl_meas, self.pl_sqrt
            )
            out.append(res.ravel())
        if len(self.odom):
            res, _, _ = linearize_pose_pair_factors(
                Rs[self.od_i], ts[self.od_i], Rs[self.od_j], ts[self.od_j],
                self.od_Rz, self.od_tz, self.od_sig,
            )
            out.append(res.ravel())
        if len(self.prior):
            res, _ = linearize_prior_factors(
                Rs[self.pr_pose], ts[self.pr_pose], self.pr_R, self.pr_t, self.pr_sig
            )
            out.append(res.ravel())
        if not out:
            return np.zeros(0)
        return np.concatenate(out)


def _gather_state(graph: FactorGraph, layout: _Layout):
    Rs = np.stack([graph.poses[p].pose.R for p in layout.pose_ids]) if layout.pose_ids else np.zeros((0, 3, 3))
    ts = np.stack([graph.poses[p].pose.t for p in layout.pose_ids]) if layout.pose_ids else np.zeros((0, 3))
    qs = np.stack([graph.landmarks[l].plane.q for l in layout.lm_ids]) if layout.lm_ids else np.zeros((0, 4))
    return Rs, ts, qs


def _all_whitened_residuals(graph: FactorGraph) -> np.ndarray:
    layout = _Layout(graph)
    batches = _Batches(graph, layout)
    Rs, ts, qs = _gather_state(graph, layout)
    return batches.residuals(Rs, ts, qs)


def _retract_state(Rs, ts, qs, delta, layout: _Layout):
    nP = len(layout.pose_ids)
    dp = delta[: 6 * nP].reshape(nP, 6)
    Rs2 = Rs @ so3_exp_batch(dp[:, :3]) if nP else Rs
    ts2 = ts + dp[:, 3:] if nP else ts
    nL = len(layout.lm_ids)
    if nL:
        dl = delta[6 * nP :].reshape(nL, 3)
        qs2 = np.empty_like(qs)
        for k in range(nL):
            qs2[k] = quat_mul(qs[k], quat_exp_tangent(dl[k]))
            qs2[k] /= np.linalg.norm(qs2[k])
    else:
        qs2 = qs
    return Rs2, ts2, qs2


def _build_normal_equations(batches: _Batches, layout: _Layout, Rs, ts, qs):
    """Sparse Jacobian + residual vector at the current state."""
    rows = []
    cols = []
    vals = []
    res_parts = []
    row0 = 0

    if len(batches.plane):
        res, Jp, Jl = kernels.linearize_plane_factors(
            Rs[batches.pl_pose], ts[batches.pl_pose], qs[batches.pl_lm], batches.pl_meas, batches.pl_sqrt
        )
        F = len(batches.plane)
        r_idx = row0 + 3 * np.arange(F)[:, None, None] + np.arange(3)[None, :, None]
        pose_cols = np.array([layout.pose_col[layout.pose_ids[k]] for k in batches.pl_pose])
        lm_cols = np.array([layout.lm_col[layout.lm_ids[k]] for k in batches.pl_lm])
        rows.append(np.broadcast_to(r_idx, (F, 3, 6)).ravel())
        cols.append((pose_cols[:, None, None] + np.arange(6)[None, None, :] + np.zeros((1, 3, 1), dtype=int)).ravel())
        vals.append(Jp.ravel())
        rows.append(np.broadcast_to(r_idx, (F, 3, 3)).ravel())
        cols.append((lm_cols[:, None, None] + np.arange(3)[None, None, :] + np.zeros((1, 3, 1), dtype=int)).ravel())
        vals.append(Jl.ravel())
        res_parts.append(res.ravel())
        row0 += 3 * F

    if len(batches.odom):
        res, Ji, Jj = linearize_pose_pair_factors(
            Rs[batches.od_i], ts[batches.od_i], Rs[batches.od_j], ts[batches.od_j],
            batches.od_Rz, batches.od_tz, batches.od_sig,
        )
        O = len(batches.odom)
        r_idx = row0 + 6 * np.arange(O)[:, None, None] + np.arange(6)[None, :, None]
        ci = np.array([layout.pose_col[layout.pose_ids[k]] for k in batches.od_i])
        cj = np.array([layout.pose_col[layout.pose_ids[k]] for k in batches.od_j])
        for J, cbase in ((Ji, ci), (Jj, cj)):
            rows.append(np.broadcast_to(r_idx, (O, 6, 6)).ravel())
            cols.append((cbase[:, None, None] + np.arange(6)[None, None, :] + np.zeros((1, 6, 1), dtype=int)).ravel())
            vals.append(J.ravel())
        res_parts.append(res.ravel())
        row0 += 6 * O

    if len(batches.prior):
        res, J = linearize_prior_factors(
            Rs[batches.pr_pose], ts[batches.pr_pose], batches.pr_R, batches.pr_t, batches.pr_sig
        )
        P = len(batches.prior)
        r_idx = row0 + 6 * np.arange(P)[:, None, None] + np.arange(6)[None, :, None]
        cp = np.array([layout.pose_col[layout.pose_ids[k]] for k in batches.pr_pose])
        rows.append(np.broadcast_to(r_idx, (P, 6, 6)).ravel())
        cols.append((cp[:, None, None] + np.arange(6)[None, None, :] + np.zeros((1, 6, 1), dtype=int)).ravel())
        vals.append(J.ravel())
        res_parts.append(res.ravel())
        row0 += 6 * P

    J = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(batches.n_rows, layout.dim),
    ).tocsr()
    r = np.concatenate(res_parts) if res_parts else np.zeros(0)
    return J, r


def _robust_cost(r: np.ndarray, n_plane: int, delta: float) -> float:
    """Total cost with the Huber kernel applied to plane residual blocks."""
    if delta <= 0.0 or n_plane == 0:
        return float(r @ r)
    s = np.linalg.norm(r[: 3 * n_plane].reshape(n_plane, 3), axis=1)
    per = np.where(s <= delta, s * s, 2.0 * delta * s - delta * delta)
    rest = r[3 * n_plane :]
    return float(per.sum() + rest @ rest)


def _robust_row_scale(r: np.ndarray, n_plane: int, delta: float) -> np.ndarray:
    """sqrt of IRLS weights per residual row (ones outside plane blocks)."""
    scale = np.ones(len(r))
    if delta > 0.0 and n_plane:
        s = np.linalg.norm(r[: 3 * n_plane].reshape(n_plane, 3), axis=1)
        w = np.where(s <= delta, 1.0, delta / np.maximum(s, 1e-12))
        scale[: 3 * n_plane] = np.repeat(np.sqrt(w), 3)
    return scale


def _singular_check(H: sp.spmatrix, layout: _Layout, tol: float):
    """Dense eigen-decomposition; raises SingularSystem on deficiency."""
    Hd = H.toarray()
    w, V = np.linalg.eigh(Hd)
    scale = max(float(w[-1]), 1.0)
    if w[0] < tol * scale:
        v = V[:, 0]
        blame = layout.describe_direction(v)
        raise SingularSystem(
            f"normal equations rank-deficient (lambda_min {w[0]:.3e} vs scale {scale:.3e}); "
            f"free direction: {blame}",
            free_direction=v,
            blame=blame,
        )


def optimize(graph: FactorGraph, settings: Optional[SolverSettings] = None) -> OptimizeReport:
    """Damped Gauss-Newton (LM) over all poses and landmarks, in place.

    Accepted steps multiply the damping by lambda_down, rejected ones by
    lambda_up without relinearizing. Terminates on relative chi^2 decrease,
    step norm, or the iteration cap. Raises SingularSystem when the problem
    is rank-deficient beyond damping (always checked eagerly for small state
    dimensions, on stall otherwise).
    """
    settings = settings or SolverSettings()
    layout = _Layout(graph)
    if layout.dim == 0:
        return OptimizeReport(termination="empty")
    batches = _Batches(graph, layout)
    Rs, ts, qs = _gather_state(graph, layout)

    report = OptimizeReport()
    lam = settings.lambda_init
    checked = False
    n_plane = len(batches.plane)
    huber = settings.plane_huber

    J, r = _build_normal_equations(batches, layout, Rs, ts, qs)
    chi2 = _robust_cost(r, n_plane, huber)
    report.initial_chi2 = chi2
    if chi2 < 1e-300:
        report.final_chi2 = chi2
        report.termination = "converged_chi2"
        _write_back(graph, layout, Rs, ts, qs)
        return report

    for it in range(settings.max_iterations):
        report.iterations = it + 1
        if huber > 0.0 and n_plane:
            sc = _robust_row_scale(r, n_plane, huber)
            Jw = sp.diags(sc) @ J
            H = (Jw.T @ Jw).tocsc()
            g = Jw.T @ (sc * r)
        else:
            H = (J.T @ J).tocsc()
            g = J.T @ r
        if not checked and layout.dim <= settings.rank_check_dim:
            _singular_check(H, layout, settings.rank_rel_tol)
            checked = True
        diag = H.diagonal()
        D = sp.diags(np.maximum(diag, 1e-12))

        accepted = False
        while True:
            try:
                lu = spla.splu((H + lam * D).tocsc())
                delta = lu.solve(-g)
                if not np.all(np.isfinite(delta)):
                    raise RuntimeError("non-finite step")
            except RuntimeError:
                delta = None
            if delta is not None:
                Rs2, ts2, qs2 = _retract_state(Rs, ts, qs, delta, layout)
                r2 = batches.residuals(Rs2, ts2, qs2)
                chi2_new = _robust_cost(r2, n_plane, huber)
                if chi2_new < chi2:
                    lam = max(lam * settings.lambda_down, 1e-12)
                    Rs, ts, qs = Rs2, ts2, qs2
                    report.accepted += 1
                    accepted = True
                    break
            lam *= settings.lambda_up
            report.rejected += 1
            if lam > settings.lambda_max:
                break

        if not accepted:
            if not checked:
                _singular_check(H, layout, settings.rank_rel_tol)
                checked = True
            report.termination = "stalled"
            break

        rel = (chi2 - chi2_new) / max(chi2, 1e-300)
        chi2 = chi2_new
        if rel < settings.rel_decrease_tol:
            report.termination = "converged_chi2"
            break
        if float(np.linalg.norm(delta)) < settings.update_tol:
            report.termination = "converged_update"
            break
        J, r = _build_normal_equations(batches, layout, Rs, ts, qs)

    else:
        report.termination = "max_iterations"

    report.final_chi2 = chi2
    _write_back(graph, layout, Rs, ts, qs)
    return report


def _write_back(graph: FactorGraph, layout: _Layout, Rs, ts, qs):
    for k, pid in enumerate(layout.pose_ids):
        graph.poses[pid].pose = Pose(Rs[k], ts[k])
    for k, lid in enumerate(layout.lm_ids):
        graph.landmarks[lid].plane = MinimalPlane(qs[k])


# ---------------------------------------------------------------------------
# re-pop-up and motion prediction


def repopup_measurements(
    graph: FactorGraph,
    intrinsics: Union[CameraIntrinsics, Mapping[int, CameraIntrinsics]],
    ground_world: HomogeneousPlane = GROUND_WORLD,
    wall_landmarks: Optional[set] = None,
    wall_pose_min: Optional[int] = None,
) -> RepopupReport:
    """Recompute measured planes of all pop-up factors at current pose estimates.

    Wall factors re-back-project their stored edge pixels; ground factors
    re-transform the world ground. Factors whose re-pop-up fails (ray turned
    parallel or intersection behind the camera) are dropped from the graph
    with a diagnostic; topology is otherwise unchanged.

    wall_landmarks / wall_pose_min limit wall re-derivation to factors
    targeting those landmark ids at pose ids >= the bound (both optional,
    combined). Ground factors always refresh: they pin the camera height,
    and a stale one would drag poses back to whatever height it was derived
    at. Walls popped long ago sit in equilibrium with the map built from
    them; re-deriving them after a height change moves every wall laterally
    and the re-balance leaks into pose components no wall observes.
    """
    report = RepopupReport()
    wall_entries = []
    for idx, f in enumerate(graph.factors):
        if not isinstance(f, PlaneMeasurementFactor) or f.source is None:
            continue
        if f.source.kind == GROUND:
            pose = graph.poses[f.pose_id].pose
            f.measured = transform_plane(ground_world, pose.inverse()).to_minimal()
            report.updated += 1
        elif (wall_landmarks is None or f.landmark_id in wall_landmarks) and (
            wall_pose_min is None or f.pose_id >= wall_pose_min
        ):
            wall_entries.append((idx, f))

    if wall_entries:
        F = len(wall_entries)
        Rs = np.empty((F, 3, 3))
        ts = np.empty((F, 3))
        px0 = np.empty((F, 2))
        px1 = np.empty((F, 2))
        for k, (_, f) in enumerate(wall_entries):
            pose = graph.poses[f.pose_id].pose
            Rs[k] = pose.R
            ts[k] = pose.t
            px0[k] = f.source.pixels[0]
            px1[k] = f.source.pixels[1]
        if isinstance(intrinsics, Mapping):
            uniq = set(intrinsics.values())
            if len(uniq) != 1:
                raise ValueError("per-frame intrinsics must be identical for batched re-pop-up")
            intr = next(iter(uniq))
        else:
            intr = intrinsics
        walls, ok = kernels.popup_walls_batch(
            Rs, ts, px0, px1, intr.fx, intr.fy, intr.cx, intr.cy, ground_world.vec4
        )
        drop = []
        for k, (idx, f) in enumerate(wall_entries):
            if ok[k]:
                f.measured = MinimalPlane(walls[k])
                report.updated += 1
            else:
                drop.append(idx)
                report.dropped.append((idx, "edge no longer back-projects at current pose"))
        if drop:
            logger.warning("re-pop-up dropped %d wall factor(s)", len(drop))
            for idx in sorted(drop, reverse=True):
                del graph.factors[idx]
    return report


def predict_pose_constant_velocity(recent: Sequence[Pose]) -> Pose:
    """Extrapolate the next pose from the last two: T_prev o (T_prev2^-1 o T_prev)."""
    if len(recent) == 0:
        raise ValueError("need at least one pose to predict from")
    if len(recent) == 1:
        return recent[-1]
    prev2, prev = recent[-2], recent[-1]
    return prev.compose(prev2.inverse().compose(prev))
