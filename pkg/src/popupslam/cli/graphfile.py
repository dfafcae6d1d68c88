"""Factor graph snapshots as line records.

    POSE id tx ty tz qx qy qz qw
    PLANE id label qx qy qz qw nverts x y z ...
    PRIOR pose tx ty tz qx qy qz qw s1..s6
    ODOM i j tx ty tz qx qy qz qw s1..s6
    PMEAS pose lm qx qy qz qw s1 s2 s3 frame kind [x0 y0 x1 y1]

Floats print with 17 significant digits so a dumped graph reloads to the
same state bit-for-bit in practice.
"""

import numpy as np

from ..errors import DataFormatError
from ..factors import OdometryFactor, PlaneMeasurementFactor, PopupSource, PriorPoseFactor
from ..geometry import GROUND, WALL, Pose
from ..graph import FactorGraph
from ..minimal import MinimalPlane

_F = "%.17g"


def _fmt(vals) -> str:
    return " ".join(_F % v for v in vals)


def dump_graph(path, graph: FactorGraph) -> None:
    with open(path, "w") as fh:
        for pid in sorted(graph.poses):
            pose = graph.poses[pid].pose
            fh.write(f"POSE {pid} {_fmt((*pose.t, *pose.quat()))}\n")
        for lid in sorted(graph.landmarks):
            lm = graph.landmarks[lid]
            poly = np.asarray(lm.polygon, dtype=float).reshape(-1, 3)
            fh.write(
                f"PLANE {lid} {lm.label} {_fmt(lm.plane.q)} {len(poly)} {_fmt(poly.ravel())}\n"
            )
        for f in graph.factors:
            if isinstance(f, PriorPoseFactor):
                fh.write(
                    f"PRIOR {f.pose_id} {_fmt((*f.prior.t, *f.prior.quat()))} {_fmt(f.sigmas)}\n"
                )
            elif isinstance(f, OdometryFactor):
                fh.write(
                    f"ODOM {f.i} {f.j} {_fmt((*f.delta.t, *f.delta.quat()))} {_fmt(f.sigmas)}\n"
                )
            elif isinstance(f, PlaneMeasurementFactor):
                src = f.source
                frame = src.frame_id if src else -1
                kind = src.kind if src else WALL
                line = (
                    f"PMEAS {f.pose_id} {f.landmark_id} {_fmt(f.measured.q)} "
                    f"{_fmt(f.sigmas)} {frame} {kind}"
                )
                if src is not None and src.pixels is not None:
                    line += f" {_fmt(np.asarray(src.pixels).ravel())}"
                fh.write(line + "\n")


def _pose_from(vals) -> Pose:
    t = np.array(vals[:3])
    q = np.array(vals[3:7])
    return Pose.from_quat_t(q / np.linalg.norm(q), t)


def load_graph(path) -> FactorGraph:
    g = FactorGraph()
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tag, *parts = line.split()
            try:
                if tag == "POSE":
                    pid = int(parts[0])
                    vals = [float(p) for p in parts[1:8]]
                    if len(parts) != 8:
                        raise ValueError("POSE needs 8 fields")
                    g.add_pose(_pose_from(vals), pose_id=pid)
                elif tag == "PLANE":
                    lid = int(parts[0])
                    label = parts[1]
                    if label not in (GROUND, WALL):
                        raise ValueError(f"unknown label {label!r}")
                    q = np.array([float(p) for p in parts[2:6]])
                    nv = int(parts[6])
                    coords = [float(p) for p in parts[7 : 7 + 3 * nv]]
                    if len(coords) != 3 * nv or len(parts) != 7 + 3 * nv:
                        raise ValueError("PLANE vertex count mismatch")
                    g.add_landmark(
                        MinimalPlane(q), label, np.array(coords).reshape(nv, 3), landmark_id=lid
                    )
                elif tag == "PRIOR":
                    pid = int(parts[0])
                    vals = [float(p) for p in parts[1:14]]
                    if len(parts) != 14:
                        raise ValueError("PRIOR needs 14 fields")
                    g.add_prior(pid, _pose_from(vals[:7]), np.array(vals[7:13]))
                elif tag == "ODOM":
                    i, j = int(parts[0]), int(parts[1])
                    vals = [float(p) for p in parts[2:15]]
                    if len(parts) != 15:
                        raise ValueError("ODOM needs 15 fields")
                    g.add_odometry(i, j, _pose_from(vals[:7]), np.array(vals[7:13]))
                elif tag == "PMEAS":
                    pid, lid = int(parts[0]), int(parts[1])
                    if len(parts) not in (11, 15):
                        raise ValueError("PMEAS needs 11 or 15 fields")
                    q = np.array([float(p) for p in parts[2:6]])
                    sig = np.array([float(p) for p in parts[6:9]])
                    frame = int(parts[9])
                    kind = parts[10]
                    if kind not in (GROUND, WALL):
                        raise ValueError(f"unknown kind {kind!r}")
                    pixels = None
                    if len(parts) == 15:
                        pixels = np.array([float(p) for p in parts[11:15]]).reshape(2, 2)
                    src = PopupSource(frame_id=frame, kind=kind, pixels=pixels) if frame >= 0 else None
                    g.add_plane_factor(pid, lid, MinimalPlane(q), sig, source=src)
                else:
                    raise ValueError(f"unknown record tag {tag!r}")
            except (ValueError, IndexError) as exc:
                raise DataFormatError(str(exc), path=path, line=lineno) from None
    return g
