"""Polyline and oriented-box primitives, and Lane Match Time (LaMT).

LaMT is the time of the first trajectory frame whose heading-aligned
footprint touches a lane boundary polyline. It is evaluated at frame
resolution; frames flagged invalid are skipped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from espkit.token_model import BoundingBox2D, FrameState, LaneSet, Token

# net lateral displacement below this falls back to the nearer boundary
DEAD_BAND = 0.2


@dataclass(frozen=True)
class OrientedFootprint:
    """Corners of a placed box in counter-clockwise order:
    front-left, rear-left, rear-right, front-right."""

    corners: tuple[tuple[float, float], ...]

    @property
    def centroid(self) -> tuple[float, float]:
        c = np.asarray(self.corners)
        return float(c[:, 0].mean()), float(c[:, 1].mean())


def footprint_corners(x, y, heading, length: float, width: float) -> np.ndarray:
    """Vectorised footprint corners, shape (..., 4, 2)."""
    x, y, heading = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, y, heading)))
    c, s = np.cos(heading), np.sin(heading)
    hl, hw = 0.5 * length, 0.5 * width
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    cx = x[..., None] + c[..., None] * local[:, 0] - s[..., None] * local[:, 1]
    cy = y[..., None] + s[..., None] * local[:, 0] + c[..., None] * local[:, 1]
    return np.stack([cx, cy], axis=-1)


def footprint_at(pose: FrameState, box: BoundingBox2D) -> OrientedFootprint:
    if not (box.length > 0 and box.width > 0):
        raise ValueError("bounding box must have positive length and width")
    c = footprint_corners(pose.x, pose.y, pose.heading, box.length, box.width)
    return OrientedFootprint(tuple((float(px), float(py)) for px, py in c))


# ---------------------------------------------------------------------------
# segment predicates


def _orient(p, q, r) -> float:
    return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])


def _on_segment(p, q, r) -> bool:
    return min(p[0], q[0]) <= r[0] <= max(p[0], q[0]) and min(p[1], q[1]) <= r[1] <= max(p[1], q[1])


def segments_intersect(a1, a2, b1, b2) -> bool:
    """True iff the closed segments a1-a2 and b1-b2 share a point."""
    # fixed endpoint order keeps the rounding independent of argument order
    if tuple(a1) > tuple(a2):
        a1, a2 = a2, a1
    if tuple(b1) > tuple(b2):
        b1, b2 = b2, b1
    d1 = _orient(b1, b2, a1)
    d2 = _orient(b1, b2, a2)
    d3 = _orient(a1, a2, b1)
    d4 = _orient(a1, a2, b2)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and ((d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)):
        return True
    return (
        (d1 == 0 and _on_segment(b1, b2, a1))
        or (d2 == 0 and _on_segment(b1, b2, a2))
        or (d3 == 0 and _on_segment(a1, a2, b1))
        or (d4 == 0 and _on_segment(a1, a2, b2))
    )


def _orient_v(p, q, r):
    return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0])


def _on_segment_v(p, q, r):
    return (
        (np.minimum(p[..., 0], q[..., 0]) <= r[..., 0])
        & (r[..., 0] <= np.maximum(p[..., 0], q[..., 0]))
        & (np.minimum(p[..., 1], q[..., 1]) <= r[..., 1])
        & (r[..., 1] <= np.maximum(p[..., 1], q[..., 1]))
    )


def _lex_order(p, q):
    swap = (p[..., 0] > q[..., 0]) | ((p[..., 0] == q[..., 0]) & (p[..., 1] > q[..., 1]))
    swap = swap[..., None]
    return np.where(swap, q, p), np.where(swap, p, q)


def segments_intersect_many(a1, a2, b1, b2) -> np.ndarray:
    """Broadcasting form of :func:`segments_intersect` (same predicate, same arithmetic)."""
    a1, a2 = _lex_order(np.asarray(a1, dtype=float), np.asarray(a2, dtype=float))
    b1, b2 = _lex_order(np.asarray(b1, dtype=float), np.asarray(b2, dtype=float))
    d1 = _orient_v(b1, b2, a1)
    d2 = _orient_v(b1, b2, a2)
    d3 = _orient_v(a1, a2, b1)
    d4 = _orient_v(a1, a2, b2)
    proper = (((d1 > 0) & (d2 < 0)) | ((d1 < 0) & (d2 > 0))) & (((d3 > 0) & (d4 < 0)) | ((d3 < 0) & (d4 > 0)))
    touch = (
        ((d1 == 0) & _on_segment_v(b1, b2, a1))
        | ((d2 == 0) & _on_segment_v(b1, b2, a2))
        | ((d3 == 0) & _on_segment_v(a1, a2, b1))
        | ((d4 == 0) & _on_segment_v(a1, a2, b2))
    )
    return proper | touch


def _sat_mask(centre: np.ndarray, axis: np.ndarray, hl, hw, poly: np.ndarray) -> np.ndarray:
    """Which of F oriented boxes touch a polyline (P, 2), by separating axes.

    A box and a segment are disjoint iff one of three axes separates them:
    the box's long axis, its lateral axis, or the segment normal. Touching
    counts as crossing.
    """
    hl = np.asarray(hl, dtype=float).reshape(-1, 1)
    hw = np.asarray(hw, dtype=float).reshape(-1, 1)
    a, b = poly[:-1], poly[1:]
    ux, uy = axis[:, 0:1], axis[:, 1:2]  # F,1; lateral axis is (-uy, ux)
    dax, day = a[None, :, 0] - centre[:, 0:1], a[None, :, 1] - centre[:, 1:2]  # F,S
    dbx, dby = b[None, :, 0] - centre[:, 0:1], b[None, :, 1] - centre[:, 1:2]
    au, bu = dax * ux + day * uy, dbx * ux + dby * uy
    an, bn = day * ux - dax * uy, dby * ux - dbx * uy
    sep = (np.minimum(au, bu) > hl) | (np.maximum(au, bu) < -hl)
    sep |= (np.minimum(an, bn) > hw) | (np.maximum(an, bn) < -hw)
    mx, my = a[:, 1] - b[:, 1], b[:, 0] - a[:, 0]  # segment normal, S
    reach = hl * np.abs(ux * mx + uy * my) + hw * np.abs(ux * my - uy * mx)
    sep |= np.abs(dax * mx + day * my) > reach
    return (~sep).any(axis=1)


def _crossing_mask(corners: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """For footprints of shape (F, 4, 2) and a polyline (P, 2), which footprints cross it."""
    centre = corners.mean(axis=1)
    along = corners[:, 0] - corners[:, 1]  # rear-left -> front-left
    across = corners[:, 0] - corners[:, 3]  # front-right -> front-left
    length = np.hypot(along[:, 0], along[:, 1])
    width = np.hypot(across[:, 0], across[:, 1])
    return _sat_mask(centre, along / length[:, None], 0.5 * length, 0.5 * width, poly)


def footprint_crosses_polyline(fp: OrientedFootprint, poly) -> bool:
    poly = np.asarray(poly, dtype=float)
    if len(poly) < 2:
        raise ValueError("polyline needs at least 2 points")
    return bool(_crossing_mask(np.asarray(fp.corners, dtype=float)[None], poly)[0])


# ---------------------------------------------------------------------------
# Lane Match Time


def lamt_arrays(t, x, y, heading, valid, length: float, width: float, boundary) -> Optional[float]:
    """Array form of :func:`lamt`; returns the time of the first crossing frame."""
    t = np.asarray(t, dtype=float)
    valid = np.asarray(valid, dtype=bool)
    if not valid.any():
        return None
    h = np.asarray(heading, dtype=float)[valid]
    centre = np.stack([np.asarray(x, dtype=float)[valid], np.asarray(y, dtype=float)[valid]], axis=1)
    axis = np.stack([np.cos(h), np.sin(h)], axis=1)
    mask = _sat_mask(centre, axis, 0.5 * length, 0.5 * width, np.asarray(boundary, dtype=float))
    if not mask.any():
        return None
    return float(t[valid][int(np.argmax(mask))])


def traj_arrays(traj: Sequence[FrameState]) -> tuple[np.ndarray, ...]:
    arr = np.array([(f.t, f.x, f.y, f.heading, f.speed) for f in traj], dtype=float).reshape(-1, 5)
    valid = np.array([f.valid for f in traj], dtype=bool)
    return arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4], valid


def lamt(traj: Sequence[FrameState], box: BoundingBox2D, target_boundary) -> Optional[float]:
    """Lane Match Time of ``traj`` against ``target_boundary``, or None if it never crosses."""
    if not traj:
        raise ValueError("trajectory is empty")
    t, x, y, h, _, valid = traj_arrays(traj)
    return lamt_arrays(t, x, y, h, valid, box.length, box.width, target_boundary)


# ---------------------------------------------------------------------------
# polyline projection and lane lookup


@dataclass(frozen=True)
class Projection:
    s: np.ndarray  # arc length of the nearest point
    d: np.ndarray  # signed lateral offset, positive to the left of the polyline direction
    tangent: np.ndarray  # unit tangent of the nearest segment, (N, 2)
    nearest: np.ndarray  # nearest point, (N, 2)


def project_points(points, poly) -> Projection:
    p = np.atleast_2d(np.asarray(points, dtype=float))
    poly = np.asarray(poly, dtype=float)
    a, b = poly[:-1], poly[1:]
    ab = b - a
    seg_len = np.hypot(ab[:, 0], ab[:, 1])
    apx, apy = p[:, 0:1] - a[None, :, 0], p[:, 1:2] - a[None, :, 1]  # N,S
    u = np.clip((apx * ab[:, 0] + apy * ab[:, 1]) / seg_len**2, 0.0, 1.0)
    ex, ey = apx - u * ab[:, 0], apy - u * ab[:, 1]  # point minus its foot on each segment
    idx = np.argmin(ex * ex + ey * ey, axis=1)
    rows = np.arange(len(p))
    nearest = a[idx] + u[rows, idx, None] * ab[idx]
    tangent = ab[idx] / seg_len[idx, None]
    # offsets relative to the nearest segment's supporting line, so points
    # beyond the polyline ends still get a lateral offset and an arc length
    rel = p - a[idx]
    d = tangent[:, 0] * rel[:, 1] - tangent[:, 1] * rel[:, 0]
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    s = cum[idx] + rel[:, 0] * tangent[:, 0] + rel[:, 1] * tangent[:, 1]
    return Projection(s=s, d=d, tangent=tangent, nearest=nearest)


def _project_groups(p: np.ndarray, polys: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Nearest point (N, M, 2) and signed offset (N, M) of N points on each of M polylines.

    Same result as calling :func:`project_points` per polyline, with one pass over
    the concatenated segments.
    """
    a = np.concatenate([q[:-1] for q in polys])
    ab = np.concatenate([q[1:] for q in polys]) - a
    seg_len2 = ab[:, 0] ** 2 + ab[:, 1] ** 2
    apx, apy = p[:, 0:1] - a[:, 0], p[:, 1:2] - a[:, 1]
    u = np.clip((apx * ab[:, 0] + apy * ab[:, 1]) / seg_len2, 0.0, 1.0)
    ex, ey = apx - u * ab[:, 0], apy - u * ab[:, 1]
    dist2 = ex * ex + ey * ey
    rows = np.arange(len(p))
    nearest = np.empty((len(p), len(polys), 2))
    d = np.empty((len(p), len(polys)))
    lo = 0
    for m, q in enumerate(polys):
        hi = lo + len(q) - 1
        idx = lo + np.argmin(dist2[:, lo:hi], axis=1)
        nearest[:, m] = a[idx] + u[rows, idx, None] * ab[idx]
        t = ab[idx] / np.sqrt(seg_len2[idx])[:, None]
        d[:, m] = t[:, 0] * apy[rows, idx] - t[:, 1] * apx[rows, idx]
        lo = hi
    return nearest, d


@dataclass(frozen=True)
class LaneBounds:
    lane: int
    offset: float  # lateral offset of the query point from the centreline
    tangent: np.ndarray
    left: Optional[np.ndarray]
    left_offset: float
    right: Optional[np.ndarray]
    right_offset: float

    @property
    def contains(self) -> bool:
        return self.left is not None and self.right is not None and self.right_offset <= self.offset <= self.left_offset

    def side(self, which: str) -> np.ndarray:
        poly = self.left if which == "left" else self.right
        if poly is None:
            raise ValueError(f"lane {self.lane} has no {which} boundary")
        return poly


def _bounds_many(points: np.ndarray, lanes: LaneSet, lane: int):
    centre = lanes.arrays["centerlines"][lane]
    pr = project_points(points, centre)
    normal = np.stack([-pr.tangent[:, 1], pr.tangent[:, 0]], axis=1)
    cands = lanes.lane_candidates(lane)
    n = len(points)
    left_off = np.full(n, np.inf)
    right_off = np.full(n, -np.inf)
    left_idx = np.full(n, -1)
    right_idx = np.full(n, -1)
    near, _ = _project_groups(pr.nearest, cands)
    for j in range(len(cands)):
        q = near[:, j]
        off = (q[:, 0] - pr.nearest[:, 0]) * normal[:, 0] + (q[:, 1] - pr.nearest[:, 1]) * normal[:, 1]
        lmask = (off > 0) & (off < left_off)
        rmask = (off < 0) & (off > right_off)
        left_off = np.where(lmask, off, left_off)
        left_idx = np.where(lmask, j, left_idx)
        right_off = np.where(rmask, off, right_off)
        right_idx = np.where(rmask, j, right_idx)
    return pr, cands, left_off, left_idx, right_off, right_idx


def lane_bounds(point, lanes: LaneSet, lane: int) -> LaneBounds:
    p = np.asarray(point, dtype=float).reshape(1, 2)
    pr, cands, lo, li, ro, ri = _bounds_many(p, lanes, lane)
    return LaneBounds(
        lane=lane,
        offset=float(pr.d[0]),
        tangent=pr.tangent[0],
        left=cands[li[0]] if li[0] >= 0 else None,
        left_offset=float(lo[0]),
        right=cands[ri[0]] if ri[0] >= 0 else None,
        right_offset=float(ro[0]),
    )


def lane_of_points(points, lanes: LaneSet) -> np.ndarray:
    """Lane id containing each point, -1 where no lane does."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    best = np.full(len(p), -1)
    best_abs = np.full(len(p), np.inf)
    for lane in range(len(lanes.centerlines)):
        pr, _, lo, _, ro, _ = _bounds_many(p, lanes, lane)
        inside = (ro <= pr.d) & (pr.d <= lo) & np.isfinite(lo) & np.isfinite(ro)
        better = inside & (np.abs(pr.d) < best_abs)
        best = np.where(better, lane, best)
        best_abs = np.where(better, np.abs(pr.d), best_abs)
    return best


def containing_lane(point, lanes: LaneSet) -> Optional[LaneBounds]:
    """Bounds of the lane containing ``point`` (same choice as :func:`lane_of_points`).

    Lanes are tried nearest-centreline first, so usually only one lane's
    boundaries are examined.
    """
    p = np.asarray(point, dtype=float).reshape(1, 2)
    _, d = _project_groups(p, lanes.arrays["centerlines"])
    for lane in np.argsort(np.abs(d[0]), kind="stable"):
        b = lane_bounds(p[0], lanes, int(lane))
        if b.contains:
            return b
    return None


def lane_of(point, lanes: LaneSet) -> Optional[int]:
    b = containing_lane(point, lanes)
    return None if b is None else b.lane


def shared_boundary(lanes: LaneSet, a: int, b: int) -> Optional[np.ndarray]:
    for j, bd in enumerate(lanes.boundaries):
        if set(bd.lanes) == {a, b}:
            return lanes.arrays["boundaries"][j]
    return None


def adjacent_lane(lanes: LaneSet, lane: int, side: str, point) -> Optional[int]:
    """Lane on ``side`` of ``lane`` at ``point``, or None when that side is a road edge."""
    b = lane_bounds(point, lanes, lane)
    poly = b.left if side == "left" else b.right
    if poly is None:
        return None
    for j, bd in enumerate(lanes.boundaries):
        if lanes.arrays["boundaries"][j] is poly:
            return bd.lanes[0] if bd.lanes[1] == lane else bd.lanes[1]
    return None


# ---------------------------------------------------------------------------
# target boundary selection


@dataclass(frozen=True)
class TargetBoundary:
    points: np.ndarray
    side: str  # "left" or "right" of the start lane
    lane: int


def _last_valid(traj: Sequence[FrameState]) -> Optional[FrameState]:
    for f in reversed(traj):
        if f.valid:
            return f
    return None


def select_target(traj_start: FrameState, lanes: LaneSet, traj: Optional[Sequence[FrameState]] = None) -> TargetBoundary:
    if not lanes.centerlines:
        raise ValueError("lane set is empty")
    b = containing_lane((traj_start.x, traj_start.y), lanes)
    if b is None:
        raise ValueError(f"start position ({traj_start.x:.2f}, {traj_start.y:.2f}) lies outside every lane")
    lane = b.lane
    end = _last_valid(traj) if traj else None
    lateral = 0.0
    if end is not None:
        normal = np.array([-b.tangent[1], b.tangent[0]])
        lateral = float(np.dot([end.x - traj_start.x, end.y - traj_start.y], normal))
    if abs(lateral) >= DEAD_BAND:
        side = "left" if lateral > 0 else "right"
    else:
        side = "left" if (b.left_offset - b.offset) < (b.offset - b.right_offset) else "right"
    return TargetBoundary(points=b.side(side), side=side, lane=lane)


def select_target_boundary(traj_start: FrameState, lanes: LaneSet, traj: Optional[Sequence[FrameState]] = None) -> np.ndarray:
    """Boundary of the start lane on the side the trajectory drifts toward.

    Without a trajectory, or with less than 0.2 m of net lateral motion, the
    nearer boundary is returned.
    """
    return select_target(traj_start, lanes, traj).points


def token_target(token: Token) -> TargetBoundary:
    return select_target(token.tv.current, token.lanes, token.tv.future)


def token_cutin_time(token: Token) -> Optional[float]:
    """LaMT of the TV's ground-truth future against its selected target boundary."""
    if token.tv.future is None:
        return None
    tb = token_target(token)
    return lamt(token.tv.future, token.tv.bbox, tb.points)


def rigid(points, rot: float, dx: float, dy: float) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    c, s = math.cos(rot), math.sin(rot)
    return p @ np.array([[c, s], [-s, c]]) + np.array([dx, dy])
