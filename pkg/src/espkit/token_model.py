"""Domain types for mined scenario tokens.

A token is an 8 s window at 10 Hz: 31 history frames (t = -3.0 .. 0.0) for
every agent plus 50 ground-truth future frames (t = 0.1 .. 5.0) for the target
vehicle. All coordinates live in the token-local frame (origin at the ego
position at t = 0, +x along the ego heading at t = 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Optional, Sequence

import numpy as np

HZ = 10
DT = 1.0 / HZ
HISTORY_FRAMES = 31
FUTURE_FRAMES = 50
HORIZON = 5.0

CATEGORIES = ("car", "truck", "other")
ROLES = ("Ego", "TV", "CIPV", "EV")
LANE_TYPES = ("mainline", "ramp", "merge_zone")
WEATHER = ("clear", "rain", "fog", "other")
JUNCTION_KINDS = ("off_ramp", "on_ramp", "merge")
RARE_OBJECT_KINDS = ("cone", "barrier", "debris", "other")
SCENARIO_TYPES = ("merge", "lane_change", "ramp_out", "cone_block", "zip_lane", "front_blocking")

_TIME_TOL = 1e-6
_ANCHOR_TOL = 1e-6

Point = tuple[float, float]
Polyline = tuple[Point, ...]


def wrap_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def frame_time(k: int) -> float:
    # k / 10 is the nearest double to the decimal time, so 4.4 - 2.2 == 2.2 holds
    return k / HZ


def as_polyline(points) -> Polyline:
    return tuple((float(x), float(y)) for x, y in points)


@dataclass(frozen=True)
class FrameState:
    t: float
    x: float
    y: float
    heading: float
    speed: float
    valid: bool = True


@dataclass(frozen=True)
class BoundingBox2D:
    length: float
    width: float


@dataclass(frozen=True)
class AgentTrack:
    id: str
    category: str
    role: str
    bbox: BoundingBox2D
    history: tuple[FrameState, ...]
    future: Optional[tuple[FrameState, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "history", tuple(self.history))
        if self.future is not None:
            object.__setattr__(self, "future", tuple(self.future))

    @property
    def current(self) -> FrameState:
        """Last valid history frame (normally the t = 0 frame)."""
        for f in reversed(self.history):
            if f.valid:
                return f
        return self.history[-1]


@dataclass(frozen=True)
class Boundary:
    """A lane boundary polyline separating two lanes (indices into ``LaneSet.centerlines``)."""

    points: Polyline
    lanes: tuple[int, int]

    def __post_init__(self):
        object.__setattr__(self, "points", as_polyline(self.points))
        object.__setattr__(self, "lanes", tuple(int(i) for i in self.lanes))


@dataclass(frozen=True)
class LaneSet:
    centerlines: tuple[Polyline, ...]
    boundaries: tuple[Boundary, ...] = ()
    road_edges: tuple[Polyline, ...] = ()
    # lane ids that belong to an entry ramp; used for merge labelling only
    ramp_lanes: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "centerlines", tuple(as_polyline(c) for c in self.centerlines))
        object.__setattr__(self, "boundaries", tuple(self.boundaries))
        object.__setattr__(self, "road_edges", tuple(as_polyline(e) for e in self.road_edges))
        object.__setattr__(self, "ramp_lanes", tuple(sorted(int(i) for i in self.ramp_lanes)))

    @cached_property
    def arrays(self) -> dict[str, list[np.ndarray]]:
        return {
            "centerlines": [np.asarray(c, dtype=float) for c in self.centerlines],
            "boundaries": [np.asarray(b.points, dtype=float) for b in self.boundaries],
            "road_edges": [np.asarray(e, dtype=float) for e in self.road_edges],
        }

    def lane_candidates(self, lane: int) -> list[np.ndarray]:
        """Polylines that may bound ``lane``: its own boundaries plus every road edge."""
        arrs = self.arrays
        out = [arrs["boundaries"][j] for j, b in enumerate(self.boundaries) if lane in b.lanes]
        return out + list(arrs["road_edges"])


@dataclass(frozen=True)
class SpeedMonitor:
    position_along_route: float
    limit: float


@dataclass(frozen=True)
class Junction:
    kind: str
    distance_ahead: float


@dataclass(frozen=True)
class RareObject:
    kind: str
    x: float
    y: float


@dataclass(frozen=True)
class SemanticInfrastructure:
    speed_monitors: tuple[SpeedMonitor, ...] = ()
    junctions: tuple[Junction, ...] = ()
    rare_objects: tuple[RareObject, ...] = ()

    def __post_init__(self):
        for name in ("speed_monitors", "junctions", "rare_objects"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @property
    def empty(self) -> bool:
        return not (self.speed_monitors or self.junctions or self.rare_objects)


@dataclass(frozen=True)
class Scene:
    lane_type: str
    weather: str
    vehicle_count: int


@dataclass(frozen=True)
class Token:
    id: str
    scene: Scene
    lanes: LaneSet
    ego: AgentTrack
    tv: AgentTrack
    evs: tuple[AgentTrack, ...] = ()
    infra: SemanticInfrastructure = field(default_factory=SemanticInfrastructure)
    scenario_type: str = "lane_change"
    t_c: Optional[float] = None
    # unknown record keys kept by lax parsing; never part of equality
    extra: dict[str, Any] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "evs", tuple(self.evs))

    @property
    def agents(self) -> tuple[AgentTrack, ...]:
        return (self.ego, self.tv) + self.evs

    @property
    def cipv(self) -> Optional[AgentTrack]:
        for a in self.evs:
            if a.role == "CIPV":
                return a
        return None

    @property
    def environment_vehicles(self) -> tuple[AgentTrack, ...]:
        return tuple(a for a in self.evs if a.role == "EV")


@dataclass(frozen=True)
class Mode:
    trajectory: tuple[FrameState, ...]
    score: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "trajectory", tuple(self.trajectory))


@dataclass(frozen=True)
class Prediction:
    token_id: str
    modes: tuple[Mode, ...]

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        if not self.modes:
            raise ValueError("prediction needs at least one mode")
        scores = [m.score for m in self.modes]
        if all(s is not None for s in scores) and any(not 0.0 <= s <= 1.0 for s in scores):
            raise ValueError("mode scores must lie in [0, 1]")


# ---------------------------------------------------------------------------
# validation


def _check_frames(frames: Sequence[FrameState], name: str, n: int, k0: int, out: list[str]) -> None:
    if len(frames) != n:
        out.append(f"{name}: expected {n} frames")
        return
    for i, f in enumerate(frames):
        if abs(f.t - frame_time(k0 + i)) > _TIME_TOL:
            out.append(f"{name}: frame {i} has t={f.t}, expected {frame_time(k0 + i)}")
            break
    for i, f in enumerate(frames):
        vals = (f.t, f.x, f.y, f.heading, f.speed)
        if not all(math.isfinite(v) for v in vals):
            out.append(f"{name}: frame {i} has non-finite values")
            break
        if f.speed < 0:
            out.append(f"{name}: frame {i} has negative speed")
            break
        if not -math.pi <= f.heading < math.pi:
            out.append(f"{name}: frame {i} heading outside [-pi, pi)")
            break


def _check_track(a: AgentTrack, name: str, out: list[str]) -> None:
    if a.category not in CATEGORIES:
        out.append(f"{name}.category: unknown category {a.category!r}")
    if a.role not in ROLES:
        out.append(f"{name}.role: unknown role {a.role!r}")
    if not (a.bbox.length > 0 and a.bbox.width > 0):
        out.append(f"{name}.bbox: length and width must be positive")
    _check_frames(a.history, f"{name}.history", HISTORY_FRAMES, -(HISTORY_FRAMES - 1), out)
    if a.history and not any(f.valid for f in a.history):
        out.append(f"{name}.history: no valid frame")
    if a.role == "TV":
        if a.future is None:
            out.append(f"{name}.future: required for TV")
        else:
            _check_frames(a.future, f"{name}.future", FUTURE_FRAMES, 1, out)
    elif a.future is not None:
        out.append(f"{name}.future: only the TV carries a future")


def _check_polyline(p: Polyline, name: str, out: list[str]) -> None:
    if len(p) < 2:
        out.append(f"{name}: needs at least 2 points")
        return
    for a, b in zip(p[:-1], p[1:]):
        if a == b:
            out.append(f"{name}: consecutive duplicate points")
            return


def validate_lanes(lanes: LaneSet, out: list[str]) -> None:
    if not lanes.centerlines:
        out.append("lanes.centerlines: empty")
    for i, c in enumerate(lanes.centerlines):
        _check_polyline(c, f"lanes.centerlines[{i}]", out)
    for i, b in enumerate(lanes.boundaries):
        _check_polyline(b.points, f"lanes.boundaries[{i}]", out)
        if any(not 0 <= j < len(lanes.centerlines) for j in b.lanes) or len(b.lanes) != 2:
            out.append(f"lanes.boundaries[{i}]: references unknown lane ids {b.lanes}")
    for i, e in enumerate(lanes.road_edges):
        _check_polyline(e, f"lanes.road_edges[{i}]", out)
    for j in lanes.ramp_lanes:
        if not 0 <= j < len(lanes.centerlines):
            out.append(f"lanes.ramp_lanes: unknown lane id {j}")


def _check_infra(infra: SemanticInfrastructure, out: list[str]) -> None:
    for i, m in enumerate(infra.speed_monitors):
        if m.position_along_route < 0:
            out.append(f"infra.speed_monitors[{i}]: negative position")
        if not m.limit > 0:
            out.append(f"infra.speed_monitors[{i}]: limit must be positive")
    for i, j in enumerate(infra.junctions):
        if j.kind not in JUNCTION_KINDS:
            out.append(f"infra.junctions[{i}]: unknown kind {j.kind!r}")
        if j.distance_ahead < 0:
            out.append(f"infra.junctions[{i}]: negative distance")
    for i, o in enumerate(infra.rare_objects):
        if o.kind not in RARE_OBJECT_KINDS:
            out.append(f"infra.rare_objects[{i}]: unknown kind {o.kind!r}")


def validate_token(token: Token) -> list[str]:
    """Return the list of broken invariants; empty iff the token is well formed."""
    out: list[str] = []
    if token.ego.role != "Ego":
        out.append("ego.role: expected Ego")
    if token.tv.role != "TV":
        out.append("tv.role: expected TV")
    _check_track(token.ego, "ego", out)
    _check_track(token.tv, "tv", out)
    for i, a in enumerate(token.evs):
        if a.role not in ("CIPV", "EV"):
            out.append(f"evs[{i}].role: expected CIPV or EV")
        _check_track(a, f"evs[{i}]", out)
    if sum(a.role == "CIPV" for a in token.evs) > 1:
        out.append("evs: more than one CIPV")
    ids = [a.id for a in token.agents]
    if len(set(ids)) != len(ids):
        out.append("agents: duplicate ids")

    if token.scene.lane_type not in LANE_TYPES:
        out.append(f"scene.lane_type: unknown {token.scene.lane_type!r}")
    if token.scene.weather not in WEATHER:
        out.append(f"scene.weather: unknown {token.scene.weather!r}")
    if token.scene.vehicle_count != len(token.agents):
        out.append(f"scene.vehicle_count: expected {len(token.agents)}")
    if token.scenario_type not in SCENARIO_TYPES:
        out.append(f"scenario_type: unknown {token.scenario_type!r}")

    validate_lanes(token.lanes, out)
    _check_infra(token.infra, out)

    if len(token.ego.history) == HISTORY_FRAMES:
        f0 = token.ego.history[-1]
        if not f0.valid or max(abs(f0.x), abs(f0.y), abs(f0.heading)) > _ANCHOR_TOL:
            out.append("ego.history: t = 0 frame must be the valid local-frame origin")

    if token.t_c is not None:
        if not 0.0 < token.t_c <= HORIZON:
            out.append("t_c: outside (0, 5]")
        elif not out:
            from espkit.geometry import token_cutin_time

            try:
                actual = token_cutin_time(token)
            except ValueError as exc:
                out.append(f"t_c: cannot be recomputed ({exc})")
            else:
                if actual is None or abs(actual - token.t_c) > _TIME_TOL:
                    out.append(f"t_c: stored {token.t_c} but geometry gives {actual}")
    return out


# ---------------------------------------------------------------------------
# canonical form and rigid transforms


def round_sig(v: float, digits: int = 6) -> float:
    return float(f"{v:.{digits}g}")


def _canon_frame(f: FrameState) -> FrameState:
    h = round_sig(f.heading)
    if h >= math.pi:
        h = round_sig(h - 2 * math.pi)
    return FrameState(
        round_sig(f.t), round_sig(f.x), round_sig(f.y), h, round_sig(f.speed), bool(f.valid)
    )


def _canon_poly(p: Polyline) -> Polyline:
    return tuple((round_sig(x), round_sig(y)) for x, y in p)


def _canon_track(a: AgentTrack) -> AgentTrack:
    return replace(
        a,
        bbox=BoundingBox2D(round_sig(a.bbox.length), round_sig(a.bbox.width)),
        history=tuple(_canon_frame(f) for f in a.history),
        future=None if a.future is None else tuple(_canon_frame(f) for f in a.future),
    )


def canonical_token(token: Token, relabel: bool = True) -> Token:
    """Round every float to 6 significant digits (the file precision).

    With ``relabel`` the cut-in time is recomputed on the rounded geometry so
    the result always satisfies the t_c invariant.
    """
    lanes = LaneSet(
        centerlines=tuple(_canon_poly(c) for c in token.lanes.centerlines),
        boundaries=tuple(Boundary(_canon_poly(b.points), b.lanes) for b in token.lanes.boundaries),
        road_edges=tuple(_canon_poly(e) for e in token.lanes.road_edges),
        ramp_lanes=token.lanes.ramp_lanes,
    )
    infra = SemanticInfrastructure(
        speed_monitors=tuple(
            SpeedMonitor(round_sig(m.position_along_route), round_sig(m.limit))
            for m in token.infra.speed_monitors
        ),
        junctions=tuple(Junction(j.kind, round_sig(j.distance_ahead)) for j in token.infra.junctions),
        rare_objects=tuple(
            RareObject(o.kind, round_sig(o.x), round_sig(o.y)) for o in token.infra.rare_objects
        ),
    )
    out = replace(
        token,
        lanes=lanes,
        ego=_canon_track(token.ego),
        tv=_canon_track(token.tv),
        evs=tuple(_canon_track(a) for a in token.evs),
        infra=infra,
        t_c=None if token.t_c is None else round_sig(token.t_c),
    )
    if relabel:
        from espkit.geometry import token_cutin_time

        out = replace(out, t_c=token_cutin_time(out))
    return out


def transform_frame(f: FrameState, rot: float, dx: float, dy: float) -> FrameState:
    c, s = math.cos(rot), math.sin(rot)
    return replace(
        f,
        x=c * f.x - s * f.y + dx,
        y=s * f.x + c * f.y + dy,
        heading=wrap_angle(f.heading + rot),
    )


def transform_points(points: Polyline, rot: float, dx: float, dy: float) -> Polyline:
    c, s = math.cos(rot), math.sin(rot)
    return tuple((c * x - s * y + dx, s * x + c * y + dy) for x, y in points)


def transform_track(a: AgentTrack, rot: float, dx: float, dy: float) -> AgentTrack:
    return replace(
        a,
        history=tuple(transform_frame(f, rot, dx, dy) for f in a.history),
        future=None if a.future is None else tuple(transform_frame(f, rot, dx, dy) for f in a.future),
    )


def transform_lanes(lanes: LaneSet, rot: float, dx: float, dy: float) -> LaneSet:
    return LaneSet(
        centerlines=tuple(transform_points(c, rot, dx, dy) for c in lanes.centerlines),
        boundaries=tuple(
            Boundary(transform_points(b.points, rot, dx, dy), b.lanes) for b in lanes.boundaries
        ),
        road_edges=tuple(transform_points(e, rot, dx, dy) for e in lanes.road_edges),
        ramp_lanes=lanes.ramp_lanes,
    )


def transform_token(token: Token, rot: float, dx: float, dy: float) -> Token:
    """Apply one rigid motion to every track, lane and object of a token.

    The result is no longer anchored at the ego pose, so it will not pass
    ``validate_token``; it exists for invariance checks.
    """
    infra = replace(
        token.infra,
        rare_objects=tuple(
            RareObject(o.kind, *transform_points(((o.x, o.y),), rot, dx, dy)[0])
            for o in token.infra.rare_objects
        ),
    )
    return replace(
        token,
        lanes=transform_lanes(token.lanes, rot, dx, dy),
        ego=transform_track(token.ego, rot, dx, dy),
        tv=transform_track(token.tv, rot, dx, dy),
        evs=tuple(transform_track(a, rot, dx, dy) for a in token.evs),
        infra=infra,
    )
