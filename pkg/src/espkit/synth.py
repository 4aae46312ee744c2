"""Synthetic straight-highway scenes with analytically known events.

Roads run along +x. Lane i has its centre at y = (i + 0.5) * lane_width, so
lane 0 is the rightmost lane. Longitudinal motion is piecewise-constant
acceleration; lane changes follow the raised-cosine lateral profile
y(tau) = y0 + delta * (1 - cos(pi * tau)) / 2 over the manoeuvre.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from espkit import geometry as geo
from espkit.miner import AgentObs, Frame, FrameStream, MiningConfig
from espkit.token_model import (
    DT,
    FUTURE_FRAMES,
    HZ,
    Boundary,
    FrameState,
    Junction,
    LaneSet,
    Mode,
    Prediction,
    RareObject,
    SemanticInfrastructure,
    Token,
    frame_time,
    wrap_angle,
)

LANE_WIDTH = 3.75
POLY_STEP = 100.0


@dataclass(frozen=True)
class LateralManeuver:
    start_t: float
    duration: float
    target_lane: int


@dataclass(frozen=True)
class AgentScript:
    id: str
    lane: int
    x0: float
    speed0: float
    category: str = "car"
    length: float = 4.6
    width: float = 1.9
    # (start time, acceleration) pairs; acceleration is zero before the first
    accel: tuple[tuple[float, float], ...] = ()
    maneuver: Optional[LateralManeuver] = None

    def __post_init__(self):
        object.__setattr__(self, "accel", tuple(sorted((float(t), float(a)) for t, a in self.accel)))


@dataclass(frozen=True)
class ScenarioScript:
    agents: tuple[AgentScript, ...]
    ego_id: str = "ego"
    lane_count: int = 3
    lane_width: float = LANE_WIDTH
    off_ramp_x: Optional[float] = None
    rare_objects: tuple[RareObject, ...] = ()
    weather: str = "clear"
    name: str = "synth"

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "rare_objects", tuple(self.rare_objects))

    def lane_center(self, lane: int) -> float:
        return (lane + 0.5) * self.lane_width

    def agent(self, aid: str) -> AgentScript:
        for a in self.agents:
            if a.id == aid:
                return a
        raise KeyError(aid)


# ---------------------------------------------------------------------------
# closed-form kinematics


def _segments(a: AgentScript):
    """(t0, x0, v0, acc) pieces covering [0, inf)."""
    pieces = [(0.0, a.x0, a.speed0, 0.0)]
    for t, acc in a.accel:
        t0, x0, v0, a0 = pieces[-1]
        dt = t - t0
        pieces.append((t, x0 + v0 * dt + 0.5 * a0 * dt * dt, v0 + a0 * dt, acc))
    return pieces


def longitudinal(a: AgentScript, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Position, speed and acceleration along x at times ``t``."""
    t = np.asarray(t, dtype=float)
    pieces = _segments(a)
    starts = np.array([p[0] for p in pieces])
    k = np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(pieces) - 1)
    t0 = starts[k]
    x0 = np.array([p[1] for p in pieces])[k]
    v0 = np.array([p[2] for p in pieces])[k]
    acc = np.array([p[3] for p in pieces])[k]
    dt = t - t0
    return x0 + v0 * dt + 0.5 * acc * dt * dt, v0 + acc * dt, acc


def lateral(a: AgentScript, script: ScenarioScript, t) -> tuple[np.ndarray, np.ndarray]:
    """Lateral position and lateral speed at times ``t``."""
    t = np.asarray(t, dtype=float)
    y0 = script.lane_center(a.lane)
    m = a.maneuver
    if m is None:
        return np.full_like(t, y0), np.zeros_like(t)
    delta = script.lane_center(m.target_lane) - y0
    tau = np.clip((t - m.start_t) / m.duration, 0.0, 1.0)
    y = y0 + delta * (1.0 - np.cos(np.pi * tau)) / 2.0
    vy = np.where((tau > 0) & (tau < 1), delta * np.pi / (2.0 * m.duration) * np.sin(np.pi * tau), 0.0)
    return y, vy


def pose(a: AgentScript, script: ScenarioScript, t) -> tuple[np.ndarray, ...]:
    """x, y, heading, speed at times ``t`` (heading follows the velocity vector)."""
    x, vx, _ = longitudinal(a, t)
    y, vy = lateral(a, script, t)
    return x, y, np.arctan2(vy, vx), np.hypot(vx, vy)


def _check_speeds(a: AgentScript, duration: float) -> None:
    # speed is linear within a piece, so its end points bound it
    pieces = _segments(a)
    for k, (t0, _, v0, acc) in enumerate(pieces):
        if t0 > duration:
            break
        t1 = min(pieces[k + 1][0] if k + 1 < len(pieces) else duration, duration)
        if v0 < -1e-9 or v0 + acc * (t1 - t0) < -1e-9:
            raise ValueError(f"agent {a.id}: scripted speed goes negative")


# ---------------------------------------------------------------------------
# crossing oracles


def boundary_y(script: ScenarioScript, a: AgentScript) -> Optional[float]:
    m = a.maneuver
    if m is None or m.target_lane == a.lane:
        return None
    # the boundary between lanes k-1 and k sits at y = k * w
    k = a.lane + 1 if m.target_lane > a.lane else a.lane
    return k * script.lane_width


def center_crossing_time(script: ScenarioScript, a: AgentScript, half_width: float = 0.0) -> Optional[float]:
    """Closed-form time at which y_centre +- half_width reaches the first boundary.

    ``half_width`` = 0 gives the centre crossing; the box half-width gives the
    time the heading-free edge touches the boundary.
    """
    m = a.maneuver
    yb = boundary_y(script, a)
    if m is None or yb is None:
        return None
    y0 = script.lane_center(a.lane)
    delta = script.lane_center(m.target_lane) - y0
    need = (yb - math.copysign(half_width, delta) - y0) / delta  # fraction of delta to cover
    if need <= 0:
        return m.start_t
    if need >= 1:
        return None
    return m.start_t + m.duration * math.acos(1.0 - 2.0 * need) / math.pi


def footprint_gap(script: ScenarioScript, a: AgentScript, t) -> np.ndarray:
    """Signed lateral gap between the rotated footprint and the boundary; <= 0 means touching."""
    yb = boundary_y(script, a)
    _, y, h, _ = pose(a, script, t)
    ext = 0.5 * a.length * np.abs(np.sin(h)) + 0.5 * a.width * np.abs(np.cos(h))
    delta = script.lane_center(a.maneuver.target_lane) - script.lane_center(a.lane)
    return (yb - (y + ext)) if delta > 0 else ((y - ext) - yb)


def footprint_crossing_time(script: ScenarioScript, a: AgentScript) -> Optional[float]:
    """Exact first time the heading-aligned footprint touches the boundary."""
    m = a.maneuver
    if m is None or boundary_y(script, a) is None:
        return None
    if footprint_gap(script, a, m.start_t) <= 0:
        return m.start_t
    grid = np.linspace(m.start_t, m.start_t + m.duration, 2001)
    g = footprint_gap(script, a, grid)
    hit = np.flatnonzero(g <= 0)
    if hit.size == 0:
        return None
    k = hit[0]
    return float(brentq(lambda s: float(footprint_gap(script, a, s)), grid[k - 1], grid[k], xtol=1e-12))


@dataclass(frozen=True)
class AgentOracle:
    center_crossing: Optional[float]
    edge_crossing: Optional[float]  # closed form, heading ignored
    footprint_crossing: Optional[float]  # exact, heading included


@dataclass(frozen=True)
class ExpectedTrigger:
    time: float
    tv_id: str


@dataclass(frozen=True)
class StreamOracle:
    agents: dict[str, AgentOracle]
    triggers: tuple[ExpectedTrigger, ...] = ()


# ---------------------------------------------------------------------------
# stream generation


def build_lanes(script: ScenarioScript, x_min: float, x_max: float) -> LaneSet:
    w = script.lane_width
    xs = np.arange(math.floor(x_min / POLY_STEP) * POLY_STEP, x_max + POLY_STEP, POLY_STEP)

    def line(y):
        return tuple((float(x), float(y)) for x in xs)

    n = script.lane_count
    return LaneSet(
        centerlines=tuple(line(script.lane_center(i)) for i in range(n)),
        boundaries=tuple(Boundary(line(k * w), (k - 1, k)) for k in range(1, n)),
        road_edges=(line(0.0), line(n * w)),
    )


def gen_stream(script: ScenarioScript, duration: float, seed: int = 0) -> tuple[FrameStream, StreamOracle]:
    """Roll the script out at 10 Hz.

    The generator has no stochastic elements; ``seed`` is accepted for a
    uniform interface and does not change the output.
    """
    del seed
    n = int(round(duration * HZ))
    t = np.arange(n) / HZ
    for a in script.agents:
        _check_speeds(a, duration)
        m = a.maneuver
        if m is not None and (m.start_t < 0 or m.start_t + m.duration > duration):
            raise ValueError(f"agent {a.id}: manoeuvre outside the stream")
        if not 0 <= a.lane < script.lane_count or (m is not None and not 0 <= m.target_lane < script.lane_count):
            raise ValueError(f"agent {a.id}: lane outside the road")
    poses = {a.id: pose(a, script, t) for a in script.agents}
    xs = np.concatenate([p[0] for p in poses.values()])
    x_min, x_max = float(xs.min()) - 300.0, float(xs.max()) + 300.0
    lanes = build_lanes(script, x_min, x_max)
    road_start = lanes.centerlines[0][0][0]

    frames = []
    for i in range(n):
        obs = []
        for a in script.agents:
            x, y, h, v = (float(p[i]) for p in poses[a.id])
            obs.append(AgentObs(a.id, a.category, x, y, wrap_angle(h), v, a.length, a.width))
        frames.append(Frame(frame_time(i), tuple(obs)))

    junctions = ()
    if script.off_ramp_x is not None:
        junctions = (Junction("off_ramp", script.off_ramp_x - road_start),)
    stream = FrameStream(
        id=script.name,
        ego_id=script.ego_id,
        frames=tuple(frames),
        lanes=lanes,
        infra=SemanticInfrastructure(junctions=junctions, rare_objects=script.rare_objects),
        weather=script.weather,
    )
    oracle = StreamOracle(
        agents={
            a.id: AgentOracle(
                center_crossing=center_crossing_time(script, a),
                edge_crossing=center_crossing_time(script, a, 0.5 * a.width),
                footprint_crossing=footprint_crossing_time(script, a),
            )
            for a in script.agents
        }
    )
    return stream, oracle


# ---------------------------------------------------------------------------
# cut-in suites

EVENT_SPACING = 18.0
EVENT_TAIL = 12.0
LC_DELAY = 0.5
BRAKE_DELAY = 1.0
CONTROL_KINDS = ("ttc", "decel", "no_cutin")
PREDICTOR_KINDS = ("oracle", "delayed", "offset", "no_cross")


def _ego_x(ego: AgentScript, t: float) -> float:
    return float(longitudinal(ego, [t])[0][0])


def _min_ttc(script: ScenarioScript, duration: float, cfg: MiningConfig, exclude=()) -> list[tuple[float, str, float]]:
    """Continuous-time TTC samples below the threshold (time, agent, ttc) at 20 Hz."""
    ego = script.agent(script.ego_id)
    t = np.arange(0.0, duration, 0.05)
    ex, ey, _, _ = pose(ego, script, t)
    _, evx, _ = longitudinal(ego, t)
    out = []
    for a in script.agents:
        if a.id == script.ego_id or a.id in exclude:
            continue
        ax, ay, _, _ = pose(a, script, t)
        _, avx, _ = longitudinal(a, t)
        gap = ax - ex - 0.5 * (ego.length + a.length)
        closing = evx - avx
        near = np.abs(ay - ey) < 1.5 * script.lane_width
        with np.errstate(divide="ignore", invalid="ignore"):
            ttc = np.where((gap > 0) & (closing > 0) & near, gap / closing, np.inf)
        for k in np.flatnonzero(ttc < cfg.ttc_threshold):
            out.append((float(t[k]), a.id, float(ttc[k])))
    return out


def cutin_script(
    rng: np.random.Generator,
    n_events: int = 1,
    kind: str = "trigger",
    name: str = "synth",
    cfg: MiningConfig = MiningConfig(),
    min_duration: float = 0.0,
) -> tuple[ScenarioScript, float, tuple[ExpectedTrigger, ...]]:
    """Draw a cut-in scene (or a control scene violating one trigger clause).

    Trigger scenes are constructed so that the bumper-gap TTC to the TV
    reaches the threshold exactly at the scripted time while the braking and
    cut-in clauses already hold; that time is the expected trigger.
    """
    if kind != "trigger" and kind not in CONTROL_KINDS:
        raise ValueError(f"unknown scene kind {kind!r}")
    for _ in range(100):
        script, duration, expected = _draw_cutin(rng, n_events, kind, name, cfg)
        duration = max(duration, round(min_duration, 1))
        low = _min_ttc(script, duration, cfg)
        ok = True
        for t, aid, _ in low:
            if kind == "trigger":
                ok &= any(e.tv_id == aid and e.time - 1e-6 <= t <= e.time + EVENT_TAIL for e in expected)
            else:
                ok &= kind != "ttc"
        if ok:
            return script, duration, expected
    raise RuntimeError("could not draw a scene satisfying the construction margins")


def _draw_cutin(rng, n_events, kind, name, cfg):
    w = LANE_WIDTH
    v_c = float(rng.uniform(22.0, 28.0))
    ego_len = float(rng.uniform(10.0, 16.0))
    t_first = float(rng.uniform(4.5, 7.0))
    times = [t_first + k * EVENT_SPACING for k in range(n_events)]
    duration = round(times[-1] + EVENT_TAIL, 1)
    side = int(rng.choice([0, 2]))  # TV lane; the ego drives in lane 1
    other = 2 - side

    ego_acc: list[tuple[float, float]] = []
    agents: list[AgentScript] = []
    expected: list[ExpectedTrigger] = []
    ego = AgentScript("ego", 1, 0.0, v_c, "truck", ego_len, 2.5)
    for k, T in enumerate(times):
        truck = bool(rng.random() < 0.25)
        length, width = (float(rng.uniform(8.0, 12.0)), 2.5) if truck else (float(rng.uniform(4.2, 5.0)), 1.9)
        if kind == "ttc":
            dv = float(rng.uniform(1.0, 2.0))
        else:
            dv = float(rng.uniform(4.0, 8.0))
        v_tv = v_c - dv
        brake = float(rng.uniform(-2.0, -1.2))
        lc_dur = float(rng.uniform(2.5, 4.0))
        t_brake = T + BRAKE_DELAY
        tv_acc: list[tuple[float, float]] = []
        if kind == "decel":
            ego_acc += [(t_brake, -0.3), (t_brake + 1.5, 0.0)]
            tv_acc = [(T + 1.0, 2.5), (T + 1.0 + (dv + 2.0) / 2.5, 0.0)]
        else:
            t_stop = t_brake + dv / -brake
            ego_acc += [(t_brake, brake), (t_stop, 0.0), (t_stop + 1.0, 1.0), (t_stop + 1.0 + dv, 0.0)]
            tv_acc = [(t_stop + 1.0, 2.0), (t_stop + 1.0 + (dv + 4.0) / 2.0, 0.0)]
        ego = replace(ego, accel=tuple(ego_acc))
        gap_t = 5.0 * dv if kind != "ttc" else 8.5 * dv
        x_tv = _ego_x(ego, T) + gap_t + 0.5 * (ego_len + length) - v_tv * T
        maneuver = None if kind == "no_cutin" else LateralManeuver(T + LC_DELAY, lc_dur, 1)
        agents.append(
            AgentScript(
                f"tv{k}", side, x_tv, v_tv, "truck" if truck else "car", length, width, tuple(tv_acc), maneuver
            )
        )
        if kind == "trigger":
            expected.append(ExpectedTrigger(T, f"tv{k}"))

    evs = [
        AgentScript("ev_ahead", other, float(rng.uniform(20.0, 50.0)), v_c + 2.0),
        AgentScript("ev_behind", other, -float(rng.uniform(15.0, 40.0)), v_c - 1.0),
        AgentScript("ev_far", other, float(rng.uniform(130.0, 160.0)), v_c + 2.0, "truck", 12.0, 2.5),
    ]
    if n_events == 1:
        evs.append(AgentScript("cipv", 1, float(rng.uniform(60.0, 90.0)), v_c + 1.0))
    off_ramp = None
    if rng.random() < 0.3:
        off_ramp = _ego_x(ego, times[0]) + float(rng.uniform(150.0, 400.0))
    script = ScenarioScript(
        agents=(ego, *agents, *evs),
        off_ramp_x=off_ramp,
        name=name,
    )
    return script, duration, tuple(expected)


@dataclass(frozen=True)
class SuiteCase:
    stream: FrameStream
    oracle: StreamOracle
    script: ScenarioScript


def _case(script: ScenarioScript, duration: float, expected, seed: int) -> SuiteCase:
    stream, oracle = gen_stream(script, duration, seed)
    return SuiteCase(stream, replace(oracle, triggers=tuple(expected)), script)


def gen_cutin_suite(n: int, seed: int = 0, n_events: int = 1, min_duration: float = 0.0) -> list[SuiteCase]:
    """``n`` streams each holding ``n_events`` scripted front-blocking cut-ins.

    Streams are padded with free driving up to ``min_duration`` seconds.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        script, duration, expected = cutin_script(
            rng, n_events, "trigger", name=f"cutin{seed}-{i:03d}", min_duration=min_duration
        )
        out.append(_case(script, duration, expected, seed))
    return out


def gen_control_suite(n: int, seed: int = 0) -> list[SuiteCase]:
    """Negative controls cycling through the violated clause: TTC, braking, cut-in."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        kind = CONTROL_KINDS[i % len(CONTROL_KINDS)]
        script, duration, _ = cutin_script(rng, 1, kind, name=f"control{seed}-{kind}-{i:03d}")
        out.append(_case(script, duration, (), seed))
    return out


def free_flow_script(rng: np.random.Generator, n_agents: int = 6, name: str = "freeflow") -> tuple[ScenarioScript, float]:
    v = float(rng.uniform(22.0, 28.0))
    agents = [AgentScript("ego", 1, 0.0, v, "truck", 12.0, 2.5)]
    for k in range(n_agents - 1):
        lane = int(rng.integers(0, 3))
        x = float(rng.uniform(-80.0, 120.0))
        if lane == 1 and abs(x) < 25:
            x += 40.0
        agents.append(AgentScript(f"a{k}", lane, x, v + (1.0 if x > 0 else -1.0)))
    return ScenarioScript(agents=tuple(agents), name=name), 30.0


# ---------------------------------------------------------------------------
# scripted predictors


def _lane_axes(token: Token) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    cur = token.tv.current
    lane = geo.lane_of((cur.x, cur.y), token.lanes)
    if lane is None:
        u = np.array([math.cos(cur.heading), math.sin(cur.heading)])
    else:
        u = geo.lane_bounds((cur.x, cur.y), token.lanes, lane).tangent
    return np.array([cur.x, cur.y]), u, np.array([-u[1], u[0]])


def scripted_predictor(token: Token, kind: str = "oracle", k: int = 1, dt: float = 1.0, offset: float = 0.5) -> Prediction:
    """Fixture predictions derived from the ground-truth future.

    kind: ``oracle`` copies the ground truth; ``delayed`` shifts the lateral
    motion (offset and heading) later by ``dt`` seconds; ``offset`` translates
    laterally by ``offset`` metres; ``no_cross`` keeps the lane.
    """
    gt = token.tv.future
    if gt is None:
        raise ValueError("token has no ground-truth future")
    p0, u, nrm = _lane_axes(token)
    cur = token.tv.current
    xy = np.array([(f.x, f.y) for f in gt])
    s = (xy - p0) @ u
    d = (xy - p0) @ nrm
    lane_heading = math.atan2(u[1], u[0])
    rel_h = np.array([wrap_angle(f.heading - lane_heading) for f in gt])

    if kind == "oracle":
        traj = list(gt)
    elif kind == "delayed":
        times = np.array([f.t for f in gt])
        src = times - dt
        t_full = np.concatenate([[0.0], times])
        d_full = np.concatenate([[(np.array([cur.x, cur.y]) - p0) @ nrm], d])
        h_full = np.concatenate([[wrap_angle(cur.heading - lane_heading)], rel_h])
        d2 = np.interp(src, t_full, d_full, left=d_full[0])
        h2 = np.interp(src, t_full, h_full, left=h_full[0])
        traj = _rebuild(gt, p0, u, nrm, s, d2, h2 + lane_heading)
    elif kind == "offset":
        traj = [replace(f, x=f.x + offset * nrm[0], y=f.y + offset * nrm[1]) for f in gt]
    elif kind == "no_cross":
        traj = _rebuild(gt, p0, u, nrm, s, np.zeros_like(s), np.full_like(s, lane_heading))
    else:
        raise ValueError(f"unknown predictor kind {kind!r}")
    return Prediction(token.id, tuple(Mode(tuple(traj), 1.0 / k) for _ in range(k)))


def _rebuild(gt, p0, u, nrm, s, d, heading) -> list[FrameState]:
    out = []
    for f, si, di, hi in zip(gt, s, d, heading):
        p = p0 + si * u + di * nrm
        out.append(FrameState(f.t, float(p[0]), float(p[1]), wrap_angle(float(hi)), f.speed, f.valid))
    return out


def lane_change_future(
    y0: float,
    delta: float,
    start: float,
    duration: float,
    speed: float = 20.0,
    n: int = FUTURE_FRAMES,
    x0: float = 0.0,
) -> list[FrameState]:
    """Future frames (t = 0.1 .. n/10) of a raised-cosine lane change, for tests and fixtures."""
    a = AgentScript("x", 0, x0, speed, maneuver=LateralManeuver(start, duration, 1) if delta else None)
    sc = ScenarioScript(agents=(a,), lane_width=abs(delta) or LANE_WIDTH)
    t = np.array([frame_time(k) for k in range(1, n + 1)])
    x, y, h, v = pose(a, sc, t)
    y = y - sc.lane_center(0) + y0
    if delta < 0:
        y = 2 * y0 - y
        h = -h
    return [FrameState(float(ti), float(xi), float(yi), wrap_angle(float(hi)), float(vi)) for ti, xi, yi, hi, vi in zip(t, x, y, h, v)]
