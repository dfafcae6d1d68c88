"""Small planar-polygon toolbox: hulls, areas, convex clipping.

Polygons are (N, 2) or (N, 3) float arrays of ordered vertices without a
repeated closing vertex. 3D polygons are assumed planar; area and clipping
happen in an orthonormal in-plane basis.
"""

from __future__ import annotations

import numpy as np


def plane_basis(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal (u, v) spanning the plane with normal n."""
    n = np.asarray(n, dtype=float)
    n = n / np.linalg.norm(n)
    # seed with the world axis least aligned with n
    k = int(np.argmin(np.abs(n)))
    e = np.zeros(3)
    e[k] = 1.0
    u = np.cross(n, e)
    u = u / np.linalg.norm(u)
    v = np.cross(n, u)
    return u, v


def convex_hull_2d(points: np.ndarray) -> np.ndarray:
    """Andrew monotone chain. Returns CCW hull vertices, collinear points dropped."""
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    if len(pts) <= 2:
        return pts
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def half(seq):
        # scalar 2D cross; np.cross has large per-call overhead here
        out = []
        for p in seq:
            while len(out) >= 2:
                ax, ay = out[-1][0] - out[-2][0], out[-1][1] - out[-2][1]
                bx, by = p[0] - out[-2][0], p[1] - out[-2][1]
                if ax * by - ay * bx > 0.0:
                    break
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    hull = lower[:-1] + upper[:-1]
    return np.array(hull)


def shoelace_area(poly2d: np.ndarray) -> float:
    """Unsigned area of a simple 2D polygon."""
    p = np.asarray(poly2d, dtype=float)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman: subject polygon clipped against a convex CCW region."""
    out = [np.asarray(p, dtype=float) for p in subject]
    clip = np.asarray(clip, dtype=float)
    m = len(clip)
    for i in range(m):
        if not out:
            break
        a, b = clip[i], clip[(i + 1) % m]
        ex, ey = b[0] - a[0], b[1] - a[1]
        inp, out = out, []
        prev = inp[-1]
        prev_in = ex * (prev[1] - a[1]) - ey * (prev[0] - a[0]) >= 0
        for cur in inp:
            cur_in = ex * (cur[1] - a[1]) - ey * (cur[0] - a[0]) >= 0
            if cur_in != prev_in:
                d = cur - prev
                denom = ex * d[1] - ey * d[0]
                if abs(denom) > 1e-15:
                    t = (ex * (a[1] - prev[1]) - ey * (a[0] - prev[0])) / denom
                    out.append(prev + t * d)
            if cur_in:
                out.append(cur)
            prev, prev_in = cur, cur_in
    return np.array(out) if out else np.zeros((0, 2))


def to_plane_coords(points3d: np.ndarray, n: np.ndarray, d: float) -> np.ndarray:
    """Project 3D points orthogonally onto plane n.p + d = 0, in (u, v) coords."""
    pts = np.atleast_2d(np.asarray(points3d, dtype=float))
    n = np.asarray(n, dtype=float)
    u, v = plane_basis(n)
    # subtract the normal component so off-plane points project orthogonally
    h = pts @ n + d
    proj = pts - h[:, None] * n[None, :]
    return np.stack([proj @ u, proj @ v], axis=1)


def from_plane_coords(uv: np.ndarray, n: np.ndarray, d: float) -> np.ndarray:
    """Inverse of to_plane_coords for points on the plane."""
    uv = np.atleast_2d(np.asarray(uv, dtype=float))
    n = np.asarray(n, dtype=float)
    u, v = plane_basis(n)
    origin = -d * n
    return origin[None, :] + uv[:, 0:1] * u[None, :] + uv[:, 1:2] * v[None, :]


def polygon_area_3d(poly: np.ndarray, n: np.ndarray | None = None) -> float:
    """Area of a planar 3D polygon; normal estimated if not given."""
    p = np.asarray(poly, dtype=float)
    if len(p) < 3:
        return 0.0
    if n is None:
        cross = np.zeros(3)
        for i in range(1, len(p) - 1):
            cross += np.cross(p[i] - p[0], p[i + 1] - p[0])
        nn = np.linalg.norm(cross)
        if nn < 1e-15:
            return 0.0
        return 0.5 * nn
    d = -float(np.asarray(n, float) @ p[0])
    return shoelace_area(to_plane_coords(p, n, d))
