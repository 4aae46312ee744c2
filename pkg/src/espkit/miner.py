"""Rule-based token mining from 10 Hz frame streams.

Detection runs every ``detection_stride`` frames. At probe frame i it uses the
frames i-3, i and i+3: the gap to each candidate lead is measured at i, its
rate of change by the central difference between i-3 and i+3, and ego
acceleration by the same central difference over speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from espkit import geometry as geo
from espkit.token_model import (
    DT,
    FUTURE_FRAMES,
    HISTORY_FRAMES,
    AgentTrack,
    BoundingBox2D,
    FrameState,
    Junction,
    LaneSet,
    RareObject,
    Scene,
    SemanticInfrastructure,
    SpeedMonitor,
    Token,
    canonical_token,
    frame_time,
    transform_lanes,
    transform_points,
    validate_token,
    wrap_angle,
)

SPACING_TOL = 1e-6
DEDUP_WINDOW = 3.0
CONE_LOOKAHEAD = 50.0


@dataclass(frozen=True)
class AgentObs:
    id: str
    category: str
    x: float
    y: float
    heading: float
    speed: float
    length: float
    width: float


@dataclass(frozen=True)
class Frame:
    timestamp: float
    agents: tuple[AgentObs, ...]

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))


@dataclass(frozen=True)
class FrameStream:
    """A continuous recording.

    Lanes and rare objects are in the stream's world frame. Junction
    ``distance_ahead`` and speed-monitor positions are route positions, i.e.
    arc length along centreline 0 from its first point; mined tokens convert
    them to distances ahead of the ego.
    """

    id: str
    ego_id: str
    frames: tuple[Frame, ...]
    lanes: LaneSet
    infra: SemanticInfrastructure = field(default_factory=SemanticInfrastructure)
    weather: str = "clear"

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))


@dataclass(frozen=True)
class MiningConfig:
    ttc_threshold: float = 5.0
    min_decel_threshold: float = -0.9
    avg_decel_threshold: float = -0.5
    detection_stride: int = 3
    probe_offsets: tuple[int, int, int] = (-3, 0, 3)
    ev_radius: float = 100.0
    # half-second headway defines the dangerous zone
    danger_headway: float = 0.5
    window: float = 5.0

    def __post_init__(self):
        if not (self.min_decel_threshold < 0 and self.avg_decel_threshold < 0):
            raise ValueError("deceleration thresholds must be negative")
        if self.detection_stride < 1:
            raise ValueError("detection_stride must be >= 1")


@dataclass(frozen=True)
class Trigger:
    frame: int
    time: float
    agent_id: str
    ttc: float
    reason: str  # "cut_in" or "dangerous_zone"


def compute_ttc(gap: float, closing_speed: float) -> float:
    if gap < 0:
        raise ValueError("gap must be non-negative")
    return gap / closing_speed if closing_speed > 0 else math.inf


# ---------------------------------------------------------------------------
# stream indexing


class StreamIndex:
    """Dense per-agent arrays over a stream, NaN where an agent is absent."""

    def __init__(self, stream: FrameStream):
        self.stream = stream
        n = len(stream.frames)
        ts = np.array([f.timestamp for f in stream.frames], dtype=float)
        if n > 1 and np.any(np.abs(np.diff(ts) - DT) > SPACING_TOL):
            raise ValueError(f"stream {stream.id}: frame spacing deviates from {DT} s")
        self.n = n
        self.timestamps = ts
        ids: list[str] = []
        seen = set()
        for f in stream.frames:
            for a in f.agents:
                if a.id not in seen:
                    seen.add(a.id)
                    ids.append(a.id)
        if stream.ego_id not in seen:
            raise ValueError(f"stream {stream.id}: ego {stream.ego_id!r} never observed")
        self.ids = ids
        self.col = {a: j for j, a in enumerate(ids)}
        self.state = np.full((len(ids), n, 4), np.nan)  # x, y, heading, speed
        self.category: dict[str, str] = {}
        self.box: dict[str, BoundingBox2D] = {}
        for i, f in enumerate(stream.frames):
            for a in f.agents:
                j = self.col[a.id]
                self.state[j, i] = (a.x, a.y, a.heading, a.speed)
                self.category.setdefault(a.id, a.category)
                self.box.setdefault(a.id, BoundingBox2D(a.length, a.width))
        self.valid = ~np.isnan(self.state[:, :, 0])
        self.ego = self.col[stream.ego_id]
        self._lane_cache: dict[int, np.ndarray] = {}

    def lanes_at(self, i: int) -> np.ndarray:
        """Lane id of every agent at frame i (-1 absent or off-lane)."""
        if i not in self._lane_cache:
            out = np.full(len(self.ids), -1)
            v = self.valid[:, i]
            if v.any():
                out[v] = geo.lane_of_points(self.state[v, i, :2], self.stream.lanes)
            self._lane_cache[i] = out
        return self._lane_cache[i]

    def frames_of(self, j: int, lo: int, hi: int, t0: int) -> list[FrameState]:
        """FrameStates for agent j over frames [lo, hi], timed relative to frame t0."""
        out = []
        for i in range(lo, hi + 1):
            if 0 <= i < self.n and self.valid[j, i]:
                x, y, h, v = self.state[j, i]
                out.append(FrameState(frame_time(i - t0), float(x), float(y), float(h), float(v), True))
            else:
                out.append(FrameState(frame_time(i - t0), 0.0, 0.0, 0.0, 0.0, False))
        return out


def _ego_accels(idx: StreamIndex, at: int, cfg: MiningConfig) -> np.ndarray:
    lo, hi = cfg.probe_offsets[0], cfg.probe_offsets[-1]
    v = idx.state[idx.ego, :, 3]
    n_win = int(round(cfg.window / DT))
    out = []
    for i in range(at, at + n_win + 1):
        if i + lo < 0 or i + hi >= idx.n:
            continue
        a, b = v[i + lo], v[i + hi]
        if np.isfinite(a) and np.isfinite(b):
            out.append((b - a) / ((hi - lo) * DT))
    return np.array(out)


def _bumper_gaps(idx: StreamIndex, j: int, frames: np.ndarray, centre: np.ndarray) -> np.ndarray:
    e, a = idx.state[idx.ego, frames, :2], idx.state[j, frames, :2]
    se = geo.project_points(e, centre).s
    sa = geo.project_points(a, centre).s
    half = 0.5 * (idx.box[idx.ids[idx.ego]].length + idx.box[idx.ids[j]].length)
    return sa - se - half


def detect_front_blocking(stream_or_index, at: int, cfg: MiningConfig = MiningConfig()) -> Optional[Trigger]:
    """Front-blocking trigger at frame ``at``, or None.

    All of: (a) an agent ahead in the ego lane or a neighbouring lane has TTC
    below the threshold; (b) over the next 5 s the ego's minimum acceleration
    or mean acceleration is below its threshold; (c) that agent's footprint
    crosses into the ego lane within 5 s, or, already in the ego lane, its gap
    drops under the dangerous-zone headway.
    """
    idx = stream_or_index if isinstance(stream_or_index, StreamIndex) else StreamIndex(stream_or_index)
    lanes = idx.stream.lanes
    n_win = int(round(cfg.window / DT))
    lo, hi = cfg.probe_offsets[0], cfg.probe_offsets[-1]
    if at + lo < 0 or at + n_win >= idx.n or at + hi >= idx.n:
        return None
    if not (idx.valid[idx.ego, at + lo] and idx.valid[idx.ego, at] and idx.valid[idx.ego, at + hi]):
        return None
    lane_ids = idx.lanes_at(at)
    ego_lane = int(lane_ids[idx.ego])
    if ego_lane < 0:
        return None

    acc = _ego_accels(idx, at, cfg)
    braking = acc.size > 0 and (acc.min() < cfg.min_decel_threshold or acc.mean() < cfg.avg_decel_threshold)
    if not braking:
        return None

    centre = lanes.arrays["centerlines"][ego_lane]
    neighbours = {ego_lane}
    for bd in lanes.boundaries:
        if ego_lane in bd.lanes:
            neighbours.update(bd.lanes)

    best: Optional[Trigger] = None
    probe = np.array([at + lo, at, at + hi])
    for j, aid in enumerate(idx.ids):
        if j == idx.ego or lane_ids[j] not in neighbours:
            continue
        if not idx.valid[j, probe].all():
            continue
        gaps = _bumper_gaps(idx, j, probe, centre)
        if gaps[1] <= 0:
            continue
        closing = (gaps[0] - gaps[2]) / ((hi - lo) * DT)
        ttc = compute_ttc(float(gaps[1]), float(closing))
        if not ttc < cfg.ttc_threshold:
            continue
        reason = None
        box = idx.box[aid]
        if lane_ids[j] != ego_lane:
            boundary = geo.shared_boundary(lanes, int(lane_ids[j]), ego_lane)
            if boundary is not None:
                fut = np.arange(at + 1, at + n_win + 1)
                st = idx.state[j, fut]
                t = (fut - at) * DT
                if geo.lamt_arrays(t, st[:, 0], st[:, 1], st[:, 2], idx.valid[j, fut], box.length, box.width, boundary) is not None:
                    reason = "cut_in"
        else:
            fut = np.arange(at, at + n_win + 1)
            ok = idx.valid[j, fut] & idx.valid[idx.ego, fut]
            if ok.any():
                g = _bumper_gaps(idx, j, fut[ok], centre)
                zone = cfg.danger_headway * idx.state[idx.ego, fut[ok], 3]
                if np.any(g < zone):
                    reason = "dangerous_zone"
        if reason is None:
            continue
        cand = Trigger(at, float(idx.timestamps[at]), aid, ttc, reason)
        if best is None or (cand.ttc, cand.agent_id) < (best.ttc, best.agent_id):
            best = cand
    return best


# ---------------------------------------------------------------------------
# roles and labelling


def assign_roles(stream_or_index, at: int, trigger: Trigger, cfg: MiningConfig = MiningConfig()) -> dict[str, str]:
    """Map agent id to role (Ego, TV, CIPV, EV) for agents taking part in the token."""
    idx = stream_or_index if isinstance(stream_or_index, StreamIndex) else StreamIndex(stream_or_index)
    roles = {idx.ids[idx.ego]: "Ego", trigger.agent_id: "TV"}
    ego_xy = idx.state[idx.ego, at, :2]
    lane_ids = idx.lanes_at(at)
    ego_lane = int(lane_ids[idx.ego])
    near = []
    for j, aid in enumerate(idx.ids):
        if j == idx.ego or not idx.valid[j, at]:
            continue
        if float(np.hypot(*(idx.state[j, at, :2] - ego_xy))) <= cfg.ev_radius:
            near.append(j)
    if ego_lane >= 0:
        centre = idx.stream.lanes.arrays["centerlines"][ego_lane]
        s_ego = geo.project_points(ego_xy, centre).s[0]
        leads = []
        for j in near:
            if lane_ids[j] == ego_lane:
                ahead = float(geo.project_points(idx.state[j, at, :2], centre).s[0] - s_ego)
                if ahead > 0:
                    leads.append((ahead, idx.ids[j]))
        if leads:
            cipv = min(leads)[1]
            if cipv != trigger.agent_id:
                roles[cipv] = "CIPV"
    for j in near:
        roles.setdefault(idx.ids[j], "EV")
    return roles


def label_cutin_moment(tv_future: Sequence[FrameState], box: BoundingBox2D, lanes: LaneSet, start: Optional[FrameState] = None) -> Optional[float]:
    """LaMT of the TV future against the boundary its lateral drift points to."""
    start = tv_future[0] if start is None else start
    return geo.lamt(tv_future, box, geo.select_target_boundary(start, lanes, tv_future))


def _scenario_type(token: Token) -> str:
    if token.t_c is None:
        return "front_blocking"
    tb = geo.token_target(token)
    if tb.lane in token.lanes.ramp_lanes:
        return "merge"
    if tb.side == "right" and any(j.kind == "off_ramp" for j in token.infra.junctions):
        return "ramp_out"
    cur = token.tv.current
    for o in token.infra.rare_objects:
        if o.kind != "cone" or geo.lane_of((o.x, o.y), token.lanes) != tb.lane:
            continue
        ahead = float(np.dot([o.x - cur.x, o.y - cur.y], tb_tangent(token, tb)))
        if 0.0 <= ahead <= CONE_LOOKAHEAD:
            return "cone_block"
    return "lane_change"


def tb_tangent(token: Token, tb: geo.TargetBoundary) -> np.ndarray:
    cur = token.tv.current
    return geo.lane_bounds((cur.x, cur.y), token.lanes, tb.lane).tangent


# ---------------------------------------------------------------------------
# token cutting


def _local_track(idx: StreamIndex, j: int, at: int, role: str, pose) -> AgentTrack:
    x0, y0, h0 = pose
    hist = idx.frames_of(j, at - (HISTORY_FRAMES - 1), at, at)
    fut = idx.frames_of(j, at + 1, at + FUTURE_FRAMES, at) if role == "TV" else None

    def local(f: FrameState) -> FrameState:
        if not f.valid:
            return f
        c, s = math.cos(-h0), math.sin(-h0)
        dx, dy = f.x - x0, f.y - y0
        return replace(f, x=c * dx - s * dy, y=s * dx + c * dy, heading=wrap_angle(f.heading - h0))

    aid = idx.ids[j]
    return AgentTrack(
        id=aid,
        category=idx.category[aid] if idx.category[aid] in ("car", "truck") else "other",
        role=role,
        bbox=idx.box[aid],
        history=tuple(local(f) for f in hist),
        future=None if fut is None else tuple(local(f) for f in fut),
    )


def _local_infra(idx: StreamIndex, at: int, pose) -> SemanticInfrastructure:
    x0, y0, h0 = pose
    infra = idx.stream.infra
    route = geo.project_points([(x0, y0)], idx.stream.lanes.arrays["centerlines"][0]).s[0]
    rare = []
    for o in infra.rare_objects:
        (lx, ly), = transform_points(((o.x - x0, o.y - y0),), -h0, 0.0, 0.0)
        rare.append(RareObject(o.kind, lx, ly))
    return SemanticInfrastructure(
        speed_monitors=tuple(
            SpeedMonitor(m.position_along_route - route, m.limit)
            for m in infra.speed_monitors
            if m.position_along_route >= route
        ),
        junctions=tuple(
            Junction(jn.kind, jn.distance_ahead - route) for jn in infra.junctions if jn.distance_ahead >= route
        ),
        rare_objects=tuple(rare),
    )


def cut_token(idx: StreamIndex, trigger: Trigger, cfg: MiningConfig = MiningConfig()) -> Token:
    at = trigger.frame
    x0, y0, h0, _ = idx.state[idx.ego, at]
    pose = (float(x0), float(y0), float(h0))
    roles = assign_roles(idx, at, trigger, cfg)
    tracks = {aid: _local_track(idx, idx.col[aid], at, role, pose) for aid, role in roles.items()}
    ego = tracks.pop(idx.ids[idx.ego])
    tv = tracks.pop(trigger.agent_id)
    evs = tuple(sorted(tracks.values(), key=lambda a: (a.role != "CIPV", a.id)))
    # translate first, then rotate, matching _local_track
    lanes = transform_lanes(transform_lanes(idx.stream.lanes, 0.0, -x0, -y0), -h0, 0.0, 0.0)
    infra = _local_infra(idx, at, pose)
    lane_ids = idx.lanes_at(at)
    ego_lane = int(lane_ids[idx.ego])
    if ego_lane in lanes.ramp_lanes:
        lane_type = "ramp"
    elif lanes.ramp_lanes or any(j.kind in ("merge", "on_ramp") for j in infra.junctions):
        lane_type = "merge_zone"
    else:
        lane_type = "mainline"
    token = Token(
        id=f"{idx.stream.id}-f{at:06d}-{trigger.agent_id}",
        scene=Scene(lane_type=lane_type, weather=idx.stream.weather, vehicle_count=2 + len(evs)),
        lanes=lanes,
        ego=ego,
        tv=tv,
        evs=evs,
        infra=infra,
    )
    token = canonical_token(token)
    return replace(token, scenario_type=_scenario_type(token))


def find_triggers(stream_or_index, cfg: MiningConfig = MiningConfig()) -> list[Trigger]:
    """Deduplicated triggers, earliest first.

    A trigger for a TV within 3 s of that TV's previous trigger (kept or
    suppressed) is dropped, so one continuously firing event yields one token.
    """
    idx = stream_or_index if isinstance(stream_or_index, StreamIndex) else StreamIndex(stream_or_index)
    n_win = int(round(cfg.window / DT))
    first = HISTORY_FRAMES - 1
    first += (-first) % cfg.detection_stride
    kept: list[Trigger] = []
    last_seen: dict[str, float] = {}
    for at in range(first, idx.n - n_win, cfg.detection_stride):
        trig = detect_front_blocking(idx, at, cfg)
        if trig is None:
            continue
        prev = last_seen.get(trig.agent_id)
        last_seen[trig.agent_id] = trig.time
        if prev is not None and trig.time - prev <= DEDUP_WINDOW + 1e-9:
            continue
        kept.append(trig)
    return kept


def mine_tokens(stream: FrameStream, cfg: MiningConfig = MiningConfig()) -> list[Token]:
    idx = StreamIndex(stream)
    if idx.n < HISTORY_FRAMES + FUTURE_FRAMES:
        raise ValueError(f"stream {stream.id} is shorter than 8 s")
    tokens = []
    for trig in find_triggers(idx, cfg):
        token = cut_token(idx, trig, cfg)
        problems = validate_token(token)
        if problems:
            raise RuntimeError(f"mined token {token.id} is invalid: {problems}")
        tokens.append(token)
    return tokens


def split_dataset(tokens: Sequence[Token], seed: int = 0) -> tuple[list[Token], list[Token], list[Token]]:
    """Seeded 8:1:1 train/val/test partition of tokens (ordered by id first)."""
    if not tokens:
        raise ValueError("cannot split an empty token list")
    ordered = sorted(tokens, key=lambda t: t.id)
    n = len(ordered)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = (8 * n + 5) // 10
    n_val = (n + 5) // 10
    n_val = min(n_val, n - n_train)
    parts = perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :]
    return tuple([ordered[i] for i in sorted(p)] for p in parts)  # type: ignore[return-value]
