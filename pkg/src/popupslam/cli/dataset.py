"""Line-oriented dataset files.

One record per line, '#' comments and blank lines ignored:

    K fx fy cx cy [width height]
    EDGE frame x1 y1 x2 y2
    XI frame x1 y1 x2 y2 ...          (boundary polyline, >= 2 points)
    ODO frame tx ty tz qx qy qz qw    (measured delta, frame-1 -> frame)
    LOOP i j                          (external loop hint, stored as-is)

Frame ids must be nonnegative and nondecreasing down the file. Parse
errors carry the 1-based line number.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..boundary import EdgeSegment
from ..errors import DataFormatError, DegenerateEdge
from ..geometry import CameraIntrinsics, Pose


@dataclass
class FrameRecord:
    frame_id: int
    edges: list = field(default_factory=list)  # [EdgeSegment]
    xi: Optional[np.ndarray] = None  # (M, 2)
    odometry: Optional[Pose] = None


@dataclass
class Dataset:
    intrinsics: Optional[CameraIntrinsics] = None
    frames: list = field(default_factory=list)  # [FrameRecord], ascending ids
    loops: list = field(default_factory=list)  # [(i, j)]


def _floats(parts, n, path, lineno):
    if len(parts) != n:
        raise DataFormatError(f"expected {n} values, got {len(parts)}", path=path, line=lineno)
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise DataFormatError(f"bad number: {exc}", path=path, line=lineno) from None


def _frame_id(token, path, lineno):
    try:
        fid = int(token)
    except ValueError:
        raise DataFormatError(f"bad frame id {token!r}", path=path, line=lineno) from None
    if fid < 0:
        raise DataFormatError("frame id must be nonnegative", path=path, line=lineno)
    return fid


def parse_dataset(path) -> Dataset:
    ds = Dataset()
    frames: dict[int, FrameRecord] = {}
    max_frame = -1

    def record(fid: int, lineno: int) -> FrameRecord:
        nonlocal max_frame
        if fid < max_frame:
            raise DataFormatError(
                f"frame {fid} after frame {max_frame}; ids must be nondecreasing",
                path=path, line=lineno,
            )
        max_frame = max(max_frame, fid)
        if fid not in frames:
            frames[fid] = FrameRecord(frame_id=fid)
        return frames[fid]

    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tag, *parts = line.split()
            if tag == "K":
                if ds.intrinsics is not None:
                    raise DataFormatError("duplicate K line", path=path, line=lineno)
                if len(parts) == 4:
                    fx, fy, cx, cy = _floats(parts, 4, path, lineno)
                    ds.intrinsics = CameraIntrinsics(fx, fy, cx, cy)
                else:
                    fx, fy, cx, cy, w, h = _floats(parts, 6, path, lineno)
                    ds.intrinsics = CameraIntrinsics(fx, fy, cx, cy, int(w), int(h))
            elif tag == "EDGE":
                if not parts:
                    raise DataFormatError("EDGE needs a frame id", path=path, line=lineno)
                fr = record(_frame_id(parts[0], path, lineno), lineno)
                x1, y1, x2, y2 = _floats(parts[1:], 4, path, lineno)
                try:
                    fr.edges.append(EdgeSegment((x1, y1), (x2, y2), id=len(fr.edges)))
                except DegenerateEdge as exc:
                    raise DataFormatError(str(exc), path=path, line=lineno) from None
            elif tag == "XI":
                if not parts:
                    raise DataFormatError("XI needs a frame id", path=path, line=lineno)
                fr = record(_frame_id(parts[0], path, lineno), lineno)
                if fr.xi is not None:
                    raise DataFormatError(f"duplicate XI for frame {fr.frame_id}", path=path, line=lineno)
                vals = parts[1:]
                if len(vals) < 4 or len(vals) % 2:
                    raise DataFormatError("XI needs an even number of >= 4 coordinates", path=path, line=lineno)
                fr.xi = np.array(_floats(vals, len(vals), path, lineno)).reshape(-1, 2)
            elif tag == "ODO":
                if not parts:
                    raise DataFormatError("ODO needs a frame id", path=path, line=lineno)
                fid = _frame_id(parts[0], path, lineno)
                if fid == 0:
                    raise DataFormatError("frame 0 has no incoming odometry", path=path, line=lineno)
                fr = record(fid, lineno)
                if fr.odometry is not None:
                    raise DataFormatError(f"duplicate ODO for frame {fid}", path=path, line=lineno)
                tx, ty, tz, qx, qy, qz, qw = _floats(parts[1:], 7, path, lineno)
                q = np.array([qx, qy, qz, qw])
                norm = np.linalg.norm(q)
                if abs(norm - 1.0) > 1e-3:
                    raise DataFormatError(f"quaternion norm {norm:.6f} far from 1", path=path, line=lineno)
                ds_pose = Pose.from_quat_t(q / norm, np.array([tx, ty, tz]))
                fr.odometry = ds_pose
            elif tag == "LOOP":
                if len(parts) != 2:
                    raise DataFormatError("LOOP needs two frame ids", path=path, line=lineno)
                i = _frame_id(parts[0], path, lineno)
                j = _frame_id(parts[1], path, lineno)
                if i >= j:
                    raise DataFormatError("LOOP needs i < j", path=path, line=lineno)
                ds.loops.append((i, j))
            else:
                raise DataFormatError(f"unknown record tag {tag!r}", path=path, line=lineno)
    ds.frames = [frames[fid] for fid in sorted(frames)]
    return ds


def write_dataset(path, intrinsics: CameraIntrinsics, observations) -> None:
    """Serialize simulator output; observations are FrameObservation-like."""
    with open(path, "w") as fh:
        fh.write("# pop-up plane SLAM dataset\n")
        fh.write(
            f"K {intrinsics.fx:.9g} {intrinsics.fy:.9g} {intrinsics.cx:.9g} "
            f"{intrinsics.cy:.9g} {intrinsics.width} {intrinsics.height}\n"
        )
        for obs in observations:
            fid = obs.frame_id
            if obs.odometry is not None:
                q = obs.odometry.quat()
                t = obs.odometry.t
                vals = " ".join(f"{v:.9g}" for v in (*t, *q))
                fh.write(f"ODO {fid} {vals}\n")
            for e in obs.edges:
                fh.write(
                    f"EDGE {fid} {e.a[0]:.9g} {e.a[1]:.9g} {e.b[0]:.9g} {e.b[1]:.9g}\n"
                )
            xi = getattr(obs, "xi", None)
            if xi is not None and len(xi) >= 2:
                coords = " ".join(f"{v:.9g}" for v in np.asarray(xi).ravel())
                fh.write(f"XI {fid} {coords}\n")
