"""Ground-wall boundary edge selection in image space.

Given candidate line segments (e.g. fitted to CNN boundary output) and the
per-column boundary curve, pick a subset that covers as much horizontal
extent as possible while staying close to the curve and avoiding redundant
overlap. Coverage (union of x-intervals) is monotone submodular, closeness
and pairwise-overlap act as feasibility constraints, and the greedy picker
enjoys the usual 1/(k+1) guarantee with k the number of conflicting pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateEdge, TooManyEdges

MERGE_MAX_ANGLE_DEG = 10.0
BRUTE_FORCE_LIMIT = 20
_N_DIST_SAMPLES = 9


@dataclass(frozen=True, eq=False)
class EdgeSegment:
    """Image line segment with endpoints ordered so a.x <= b.x.

    Instances compare by identity; the arrays make value equality ambiguous.
    """

    a: np.ndarray
    b: np.ndarray
    id: int = -1

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).reshape(2).copy()
        b = np.asarray(self.b, dtype=float).reshape(2).copy()
        if np.array_equal(a, b):
            raise DegenerateEdge("edge endpoints must differ")
        if a[0] > b[0]:
            a, b = b, a
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.b - self.a))

    @property
    def interval(self) -> tuple[float, float]:
        return float(self.a[0]), float(self.b[0])

    def point(self, t: float) -> np.ndarray:
        return self.a + t * (self.b - self.a)

    def direction_deg(self) -> float:
        d = self.b - self.a
        return float(np.degrees(np.arctan2(d[1], d[0])))


class BoundaryCurve:
    """Polyline resampled to one lowest (max-v) boundary value per x-column."""

    def __init__(self, vertices: np.ndarray):
        verts = np.asarray(vertices, dtype=float).reshape(-1, 2)
        if len(verts) < 2:
            raise ValueError("boundary curve needs at least two vertices")
        self.vertices = verts
        x_lo = int(np.ceil(verts[:, 0].min()))
        x_hi = int(np.floor(verts[:, 0].max()))
        self.col0 = x_lo
        ncols = max(0, x_hi - x_lo + 1)
        ys = np.full(ncols, -np.inf)
        for va, vb in zip(verts[:-1], verts[1:]):
            if va[0] > vb[0]:
                va, vb = vb, va
            c0 = int(np.ceil(va[0]))
            c1 = int(np.floor(vb[0]))
            if c1 < c0:
                continue
            xs = np.arange(c0, c1 + 1)
            dx = vb[0] - va[0]
            if dx < 1e-12:
                yy = np.full(len(xs), max(va[1], vb[1]))
            else:
                yy = va[1] + (xs - va[0]) / dx * (vb[1] - va[1])
            idx = xs - x_lo
            np.maximum.at(ys, idx, yy)
        ys[~np.isfinite(ys)] = np.nan
        self.y_by_col = ys

    @property
    def x_range(self) -> tuple[float, float]:
        return float(self.col0), float(self.col0 + len(self.y_by_col) - 1)

    def y_at(self, x: float) -> float:
        """Interpolated boundary v at x; NaN outside the curve's x-range."""
        if len(self.y_by_col) == 0:
            return np.nan
        t = x - self.col0
        if t < 0 or t > len(self.y_by_col) - 1:
            return np.nan
        i = int(np.floor(t))
        if i >= len(self.y_by_col) - 1:
            return float(self.y_by_col[-1])
        frac = t - i
        return float((1.0 - frac) * self.y_by_col[i] + frac * self.y_by_col[i + 1])


@dataclass(frozen=True)
class SelectionParams:
    """Thresholds in pixels, tuned for 640x480 input."""

    delta_close: float = 25.0
    delta_overlap: float = 15.0
    min_length: float = 15.0
    merge_gap: float = 20.0


def edge_curve_distance(edge: EdgeSegment, curve: BoundaryCurve) -> float:
    """Max vertical distance to the curve over 9 even samples; inf off-range."""
    worst = 0.0
    for t in np.linspace(0.0, 1.0, _N_DIST_SAMPLES):
        p = edge.point(t)
        cy = curve.y_at(p[0])
        if np.isnan(cy):
            return np.inf
        worst = max(worst, abs(p[1] - cy))
    return worst


def horizontal_overlap(e1: EdgeSegment, e2: EdgeSegment) -> float:
    a1, b1 = e1.interval
    a2, b2 = e2.interval
    return max(0.0, min(b1, b2) - max(a1, a2))


def coverage_score(edges: Sequence[EdgeSegment]) -> float:
    """Length of the union of x-intervals."""
    if not edges:
        return 0.0
    ivs = sorted(e.interval for e in edges)
    total = 0.0
    lo, hi = ivs[0]
    for a, b in ivs[1:]:
        if a > hi:
            total += hi - lo
            lo, hi = a, b
        else:
            hi = max(hi, b)
    return total + (hi - lo)


def marginal_gain(edge: EdgeSegment, selected: Sequence[EdgeSegment]) -> float:
    return coverage_score(list(selected) + [edge]) - coverage_score(selected)


def close_edges(edges: Sequence[EdgeSegment], curve: BoundaryCurve, params: SelectionParams) -> list[EdgeSegment]:
    """Feasible pool: edges within delta_close of the boundary curve."""
    return [e for e in edges if edge_curve_distance(e, curve) < params.delta_close]


def conflict_pairs(edges: Sequence[EdgeSegment], delta_overlap: float) -> list[tuple[int, int]]:
    """Index pairs whose horizontal overlap reaches delta_overlap."""
    out = []
    for i in range(len(edges)):
        for j in range(i + 1, len(edges)):
            if horizontal_overlap(edges[i], edges[j]) >= delta_overlap:
                out.append((i, j))
    return out


def greedy_select(
    edges: Sequence[EdgeSegment], curve: BoundaryCurve, params: Optional[SelectionParams] = None
) -> list[EdgeSegment]:
    """Greedy max-marginal-gain selection under closeness and overlap limits.

    Keeps adding the feasible edge with the largest coverage gain (lowest id
    on ties) until no feasible edge remains; zero-gain edges still get added
    as long as they are feasible.
    """
    params = params or SelectionParams()
    pool = close_edges(edges, curve, params)
    selected: list[EdgeSegment] = []
    remaining = list(pool)
    while True:
        feasible = [
            e
            for e in remaining
            if all(horizontal_overlap(e, s) < params.delta_overlap for s in selected)
        ]
        if not feasible:
            return selected
        best = min(feasible, key=lambda e: (-marginal_gain(e, selected), e.id))
        selected.append(best)
        remaining.remove(best)


def brute_force_select(
    edges: Sequence[EdgeSegment], curve: BoundaryCurve, params: Optional[SelectionParams] = None
) -> tuple[list[EdgeSegment], float]:
    """Exhaustive optimum over all feasible subsets (oracle for the greedy bound).

    Raises TooManyEdges beyond 20 candidates. Ties resolved toward smaller
    subsets, then lexicographically smallest id tuple.
    """
    params = params or SelectionParams()
    if len(edges) > BRUTE_FORCE_LIMIT:
        raise TooManyEdges(f"{len(edges)} edges exceed the {BRUTE_FORCE_LIMIT}-edge search limit")
    pool = close_edges(edges, curve, params)
    n = len(pool)
    if n == 0:
        return [], 0.0

    # elementary x-segments between sorted interval endpoints
    xs = np.unique(np.array([v for e in pool for v in e.interval]))
    seg_len = np.diff(xs)
    mids = 0.5 * (xs[:-1] + xs[1:])
    cover = np.zeros((n, len(mids)))
    for i, e in enumerate(pool):
        a, b = e.interval
        cover[i] = ((mids > a) & (mids < b)) * 1.0
    conflicts = conflict_pairs(pool, params.delta_overlap)

    best_score = -1.0
    best_mask = 0
    chunk = 1 << 14
    for start in range(0, 1 << n, chunk):
        idx = np.arange(start, min(start + chunk, 1 << n), dtype=np.int64)
        bits = ((idx[:, None] >> np.arange(n)) & 1).astype(bool)
        ok = np.ones(len(idx), dtype=bool)
        for i, j in conflicts:
            ok &= ~(bits[:, i] & bits[:, j])
        covered = (bits.astype(np.float64) @ cover) > 0
        scores = covered @ seg_len
        scores[~ok] = -np.inf
        k = int(np.argmax(scores))
        if scores[k] > best_score + 1e-12:
            best_score = float(scores[k])
            best_mask = int(idx[k])
        elif scores[k] > best_score - 1e-12:
            # tie: fewer edges, then smaller id tuple
            cand = int(idx[k])
            if _subset_key(cand, pool) < _subset_key(best_mask, pool):
                best_mask = cand
    chosen = [pool[i] for i in range(n) if (best_mask >> i) & 1]
    return sorted(chosen, key=lambda e: e.id), max(best_score, 0.0)


def _subset_key(mask: int, pool: Sequence[EdgeSegment]):
    ids = tuple(sorted(pool[i].id for i in range(len(pool)) if (mask >> i) & 1))
    return (len(ids), ids)


def postprocess_edges(selected: Sequence[EdgeSegment], params: Optional[SelectionParams] = None) -> list[EdgeSegment]:
    """Drop short fragments, merge near-collinear neighbors, sort by x.

    Two edges merge when the gap between their facing endpoints is within
    merge_gap and their directions differ by less than 10 degrees; the merged
    segment spans from the leftmost to the rightmost endpoint and keeps the
    left edge's id.
    """
    params = params or SelectionParams()
    edges = [e for e in selected if e.length >= params.min_length]
    edges.sort(key=lambda e: (e.a[0], e.id))
    merged = True
    while merged:
        merged = False
        for i in range(len(edges) - 1):
            e1, e2 = edges[i], edges[i + 1]
            gap = float(np.linalg.norm(e2.a - e1.b))
            diff = abs(e1.direction_deg() - e2.direction_deg())
            diff = min(diff, 180.0 - diff)
            if gap <= params.merge_gap and diff < MERGE_MAX_ANGLE_DEG:
                edges[i : i + 2] = [EdgeSegment(e1.a, e2.b, id=e1.id)]
                merged = True
                break
    edges.sort(key=lambda e: (e.a[0], e.id))
    return edges
