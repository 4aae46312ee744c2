"""Token builders shared by the test modules."""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from espkit.geometry import token_cutin_time
from espkit.synth import lane_change_future
from espkit.token_model import (
    FUTURE_FRAMES,
    HISTORY_FRAMES,
    AgentTrack,
    Boundary,
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
    transform_token,
)

W = 3.75


def straight_lanes(n: int = 3, width: float = W, x0: float = -300.0, x1: float = 500.0, y0: float = 0.0, step: float = 100.0) -> LaneSet:
    """``n`` lanes along +x; lane 0 centred at y0, lane i at y0 + i * width."""
    xs = np.arange(x0, x1 + 1e-9, step)

    def line(y):
        return tuple((float(x), float(y)) for x in xs)

    centres = tuple(line(y0 + i * width) for i in range(n))
    bounds = tuple(Boundary(line(y0 + (i + 0.5) * width), (i, i + 1)) for i in range(n - 1))
    edges = (line(y0 - 0.5 * width), line(y0 + (n - 0.5) * width))
    return LaneSet(centres, bounds, edges)


def const_frames(x: float, y: float, vx: float, vy: float, ks, invalid=()) -> tuple[FrameState, ...]:
    """Constant-velocity frames through (x, y) at t = 0, at frame indices ``ks``."""
    h = math.atan2(vy, vx) if (vx or vy) else 0.0
    v = math.hypot(vx, vy)
    out = []
    for i, k in enumerate(ks):
        t = frame_time(k)
        out.append(FrameState(t, x + vx * t, y + vy * t, h, v, i not in invalid))
    return tuple(out)


def history(x, y, vx, vy=0.0, invalid=()):
    return const_frames(x, y, vx, vy, range(-(HISTORY_FRAMES - 1), 1), invalid)


def future(x, y, vx, vy=0.0, invalid=()):
    return const_frames(x, y, vx, vy, range(1, FUTURE_FRAMES + 1), invalid)


def track(id, role, x, y, vx, vy=0.0, category="car", box=(4.5, 1.9), invalid=(), fut=None) -> AgentTrack:
    return AgentTrack(id, category, role, BoundingBox2D(*box), history(x, y, vx, vy, invalid), fut)


def make_token(tv, evs=(), lanes=None, infra=None, id="tok", ego_speed=25.0, ego_box=(12.0, 2.5)) -> Token:
    lanes = straight_lanes(y0=-W) if lanes is None else lanes
    ego = track("ego", "Ego", 0.0, 0.0, ego_speed, category="truck", box=ego_box)
    tok = Token(
        id=id,
        scene=Scene("mainline", "clear", 2 + len(evs)),
        lanes=lanes,
        ego=ego,
        tv=tv,
        evs=tuple(evs),
        infra=infra or SemanticInfrastructure(),
        scenario_type="lane_change",
    )
    t_c = token_cutin_time(tok)
    return replace(tok, t_c=t_c, scenario_type="lane_change" if t_c is not None else "front_blocking")


def random_token(rng: np.random.Generator, id: str = "tok") -> Token:
    """A valid canonical token with randomised agents, gaps in validity and infrastructure.

    Ego drives in the middle of three lanes (lane 1, centred on y = 0); the TV
    starts in lane 0 or 2 and either changes into the ego lane or keeps going.
    """
    lanes = straight_lanes(y0=-W)
    v_ego = float(rng.uniform(15, 30))
    side = int(rng.choice([-1, 1]))
    y_tv = side * W
    v_tv = float(rng.uniform(10, 30))
    x_tv = float(rng.uniform(5, 60))
    hole = tuple(int(i) for i in rng.choice(HISTORY_FRAMES - 1, size=int(rng.integers(0, 4)), replace=False))
    if rng.random() < 0.75:
        start, dur = float(rng.uniform(0.0, 2.5)), float(rng.uniform(2.0, 4.0))
        fut = tuple(lane_change_future(y_tv, -side * W, start, dur, v_tv, x0=x_tv))
    else:
        fut = future(x_tv, y_tv + float(rng.uniform(-0.3, 0.3)), v_tv)
    if rng.random() < 0.3:
        k = int(rng.integers(0, FUTURE_FRAMES - 1))
        fut = fut[:k] + (FrameState(fut[k].t, fut[k].x, fut[k].y, fut[k].heading, fut[k].speed, False),) + fut[k + 1 :]
    tv = AgentTrack(
        "tv", "truck" if rng.random() < 0.3 else "car", "TV", BoundingBox2D(float(rng.uniform(4, 12)), float(rng.uniform(1.7, 2.6))),
        history(x_tv, y_tv, v_tv, invalid=hole), fut,
    )
    evs = []
    if rng.random() < 0.6:
        evs.append(track("cipv", "CIPV", float(rng.uniform(30, 90)), 0.0, v_ego + float(rng.uniform(-3, 3))))
    for j in range(int(rng.integers(0, 4))):
        lane_y = float(rng.choice([-W, 0.0, W]))
        x = float(rng.uniform(-80, 120))
        hole = tuple(int(i) for i in rng.choice(HISTORY_FRAMES, size=int(rng.integers(0, 6)), replace=False))
        evs.append(track(f"ev{j}", "EV", x, lane_y, float(rng.uniform(10, 30)), invalid=hole,
                         category=str(rng.choice(["car", "truck", "other"]))))
    infra = SemanticInfrastructure(
        speed_monitors=tuple(SpeedMonitor(float(rng.uniform(0, 800)), float(rng.choice([22.2, 27.8, 33.3]))) for _ in range(int(rng.integers(0, 2)))),
        junctions=tuple(Junction(str(rng.choice(["off_ramp", "on_ramp", "merge"])), float(rng.uniform(0, 900))) for _ in range(int(rng.integers(0, 2)))),
        rare_objects=tuple(RareObject(str(rng.choice(["cone", "barrier", "debris"])), float(rng.uniform(5, 120)), float(rng.uniform(-5, 5))) for _ in range(int(rng.integers(0, 3)))),
    )
    tok = make_token(tv, evs, lanes, infra, id=id, ego_speed=v_ego)
    tok = replace(tok, scene=Scene("mainline", str(rng.choice(["clear", "rain", "fog"])), len(tok.agents)))
    return canonical_token(tok)


def rotate_token(token: Token, rot: float, dx: float, dy: float) -> Token:
    return transform_token(token, rot, dx, dy)


def cv_scene(rng: np.random.Generator):
    """Constant-velocity token on straight lanes plus its closed-form ESP tensor.

    Every anchor (ego, TV) stays inside a lane, so the longitudinal axis is +x
    and rel_long_vel is simply the x-velocity difference.
    """
    from espkit.esp_features import PAIRS, SENTINEL_DISTANCE, SENTINEL_VELOCITY

    v_ego = float(rng.uniform(10, 30))
    spec = {"ego": (0.0, 0.0, v_ego, 0.0)}
    tv_y = float(rng.choice([-W, W]))
    spec["tv"] = (float(rng.uniform(-20, 60)), tv_y, float(rng.uniform(5, 35)), float(rng.uniform(-0.25, 0.25)))
    holes = {"ego": (), "tv": tuple(int(i) for i in rng.choice(30, size=int(rng.integers(0, 4)), replace=False))}
    evs = []
    if rng.random() < 0.7:
        spec["cipv"] = (float(rng.uniform(20, 90)), 0.0, float(rng.uniform(5, 35)), 0.0)
        holes["cipv"] = tuple(int(i) for i in rng.choice(31, size=int(rng.integers(0, 5)), replace=False))
        evs.append(("cipv", "CIPV"))
    for j in range(int(rng.integers(0, 5))):
        aid = f"ev{j}"
        spec[aid] = (float(rng.uniform(-100, 150)), float(rng.uniform(-6, 6)), float(rng.uniform(0, 35)), float(rng.uniform(-1, 1)))
        holes[aid] = tuple(int(i) for i in rng.choice(31, size=int(rng.integers(0, 8)), replace=False))
        evs.append((aid, "EV"))

    def mk(aid, role):
        x, y, vx, vy = spec[aid]
        return track(aid, role, x, y, vx, vy, invalid=holes[aid])

    tv = mk("tv", "TV")
    x, y, vx, vy = spec["tv"]
    tv = replace(tv, future=future(x, y, vx, vy))
    token = make_token(tv, [mk(a, r) for a, r in evs], ego_speed=v_ego)

    ts = np.array([frame_time(k) for k in range(-(HISTORY_FRAMES - 1), 1)])

    def state(aid):
        x, y, vx, vy = spec[aid]
        ok = np.ones(HISTORY_FRAMES, dtype=bool)
        ok[list(holes[aid])] = False
        return np.stack([x + vx * ts, y + vy * ts], axis=1), np.array([vx, vy]), ok

    values = np.empty((HISTORY_FRAMES, len(PAIRS), 2))
    values[..., 0], values[..., 1] = SENTINEL_DISTANCE, SENTINEL_VELOCITY
    mask = np.zeros((HISTORY_FRAMES, len(PAIRS)), dtype=bool)
    ev_ids = [a for a, r in evs if r == "EV"]
    for c, pair in enumerate(PAIRS):
        first, second = pair.split("_")
        pa, va, oka = state(first)
        for i in range(HISTORY_FRAMES):
            if second == "ev":
                cands = [(float(np.linalg.norm(state(e)[0][i] - pa[i])), e) for e in ev_ids if state(e)[2][i]]
                if not cands or not oka[i]:
                    continue
                b = min(cands)[1]
            elif second in spec:
                b = second
            else:
                continue
            pb, vb, okb = state(b)
            if oka[i] and okb[i]:
                values[i, c] = (float(np.linalg.norm(pb[i] - pa[i])), vb[0] - va[0])
                mask[i, c] = True
    return token, values, mask
