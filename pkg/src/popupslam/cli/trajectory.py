"""Trajectory text files: one pose per line.

    timestamp tx ty tz qx qy qz qw

Timestamps print with nine decimals, values with nine significant digits.
When no timestamps are given the frame index is used.
"""

from typing import Optional, Sequence

import numpy as np

from ..errors import DataFormatError
from ..geometry import Pose


def save_trajectory(path, poses: Sequence[Pose], timestamps: Optional[Sequence[float]] = None) -> None:
    if timestamps is None:
        timestamps = [float(k) for k in range(len(poses))]
    if len(timestamps) != len(poses):
        raise ValueError("one timestamp per pose required")
    with open(path, "w") as fh:
        for ts, pose in zip(timestamps, poses):
            q = pose.quat()
            vals = " ".join(f"{v:.9g}" for v in (*pose.t, *q))
            fh.write(f"{ts:.9f} {vals}\n")


def load_trajectory(path) -> list:
    """Returns [(timestamp, Pose)]."""
    out = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 8:
                raise DataFormatError(
                    f"expected 8 values per pose line, got {len(parts)}", path=path, line=lineno
                )
            try:
                vals = [float(p) for p in parts]
            except ValueError as exc:
                raise DataFormatError(f"bad number: {exc}", path=path, line=lineno) from None
            ts, tx, ty, tz, qx, qy, qz, qw = vals
            q = np.array([qx, qy, qz, qw])
            norm = np.linalg.norm(q)
            if abs(norm - 1.0) > 1e-3:
                raise DataFormatError(f"quaternion norm {norm:.6f} far from 1", path=path, line=lineno)
            out.append((ts, Pose.from_quat_t(q / norm, np.array([tx, ty, tz]))))
    return out
