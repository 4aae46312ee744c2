"""Structured natural-language rendering of a token and a small query toolbox."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from espkit import geometry as geo
from espkit.esp_features import PAIRS, ESPTensor, extract_esp_tensor
from espkit.token_model import AgentTrack, Token

SECTIONS = (
    "Scene",
    "Ego vehicle",
    "Target vehicle",
    "Relative Interaction Vehicles",
    "Semantic Infrastructure",
    "Extrospective Features",
)
NONE_OBSERVED = "none observed"
LANE_CLEAR_RANGE = 30.0
SPEED_BAND = 0.5
QUERIES = ("vehicle_ahead_tv", "left_lane_status_tv", "right_lane_status_tv", "distance_to_junction", "tv_speed_trend")

_JUNCTION_TEXT = {"off_ramp": "Off-ramp exit", "on_ramp": "On-ramp entry", "merge": "Lane merge"}
_PAIR_NAMES = {"ego": "Ego", "tv": "TV", "cipv": "CIPV", "ev": "nearest EV"}


def num(v: float) -> str:
    """One decimal, never '-0.0'."""
    s = f"{v:.1f}"
    return "0.0" if s == "-0.0" else s


@dataclass(frozen=True)
class PromptDocument:
    sections: tuple[tuple[str, tuple[str, ...]], ...]

    def section(self, title: str) -> tuple[str, ...]:
        for name, lines in self.sections:
            if name == title:
                return lines
        raise KeyError(title)

    def text(self) -> str:
        out = []
        for name, lines in self.sections:
            out.append(f"## {name}")
            out.extend(lines)
            out.append("")
        return "\n".join(out).rstrip() + "\n"


def _lane_text(lane: Optional[int]) -> str:
    return "off the mapped lanes" if lane is None else f"in lane {lane}"


def _where(a: AgentTrack, ref: AgentTrack) -> str:
    fa, fr = a.current, ref.current
    dx, dy = fa.x - fr.x, fa.y - fr.y
    lon = f"{num(abs(dx))} m {'ahead of' if dx >= 0 else 'behind'}"
    lat = f"{num(abs(dy))} m {'left' if dy >= 0 else 'right'}"
    return f"{lon} ego and {lat}"


def _speed_change(a: AgentTrack) -> float:
    valid = [f for f in a.history if f.valid]
    return valid[-1].speed - valid[0].speed if valid else 0.0


def _agent_line(a: AgentTrack, token: Token, label: str) -> str:
    f = a.current
    lane = geo.lane_of((f.x, f.y), token.lanes)
    return (
        f"{label} ({a.category}, {num(a.bbox.length)} m long) is {_where(a, token.ego)}, "
        f"{_lane_text(lane)}, at {num(f.speed)} m/s ({_trend_word(_speed_change(a))})."
    )


def _trend_word(dv: float) -> str:
    if abs(dv) < SPEED_BAND:
        return "steady speed"
    return f"{'accelerated' if dv > 0 else 'slowed'} by {num(abs(dv))} m/s over 3 s"


def _infra_lines(token: Token) -> tuple[str, ...]:
    infra = token.infra
    if infra.empty:
        return (NONE_OBSERVED,)
    lines = [f"{_JUNCTION_TEXT[j.kind]} in {num(j.distance_ahead)} m" for j in sorted(infra.junctions, key=lambda j: j.distance_ahead)]
    for m in sorted(infra.speed_monitors, key=lambda m: m.position_along_route):
        lines.append(f"Speed monitor in {num(m.position_along_route)} m, limit {num(m.limit)} m/s")
    for o in sorted(infra.rare_objects, key=lambda o: (o.x, o.y)):
        lane = geo.lane_of((o.x, o.y), token.lanes)
        lines.append(
            f"{o.kind.capitalize()} {num(abs(o.x))} m {'ahead' if o.x >= 0 else 'behind'}, {_lane_text(lane)}"
        )
    return tuple(lines)


def _feature_lines(esp: ESPTensor) -> tuple[str, ...]:
    lines = []
    for c, pair in enumerate(PAIRS):
        a, b = (_PAIR_NAMES[p] for p in pair.split("_"))
        ok = esp.mask[:, c]
        if not ok.any():
            lines.append(f"{a} and {b}: not observed")
            continue
        rel = float(esp.values[ok, c, 1].mean())
        gap = num(float(esp.values[ok, c, 0][-1]))
        if num(rel) == "0.0":
            lines.append(f"{a} and {b} hold a steady gap, now {gap} m")
        elif rel < 0:
            lines.append(f"{a} is closing on {b} at {num(-rel)} m/s, gap now {gap} m")
        else:
            lines.append(f"{a} is opening from {b} at {num(rel)} m/s, gap now {gap} m")
    return tuple(lines)


def to_prompt(token: Token, esp: Optional[ESPTensor] = None) -> PromptDocument:
    """Deterministic six-section description of a token."""
    esp = extract_esp_tensor(token) if esp is None else esp
    ego = token.ego.current
    ego_lane = geo.lane_of((ego.x, ego.y), token.lanes)
    scene = (
        f"Lane type: {token.scene.lane_type}. Weather: {token.scene.weather}. "
        f"Vehicles in scope: {token.scene.vehicle_count} including ego.",
    )
    ego_lines = (
        f"Ego ({token.ego.category}, {num(token.ego.bbox.length)} m long) drives {_lane_text(ego_lane)} "
        f"at {num(ego.speed)} m/s ({_trend_word(_speed_change(token.ego))}).",
    )
    others = sorted(
        token.evs,
        key=lambda a: (a.role != "CIPV", abs(a.current.x - ego.x) + abs(a.current.y - ego.y), a.id),
    )
    rel_lines = tuple(_agent_line(a, token, a.role) for a in others) or (NONE_OBSERVED,)
    return PromptDocument(
        (
            ("Scene", scene),
            ("Ego vehicle", ego_lines),
            ("Target vehicle", (_agent_line(token.tv, token, "TV"),)),
            ("Relative Interaction Vehicles", rel_lines),
            ("Semantic Infrastructure", _infra_lines(token)),
            ("Extrospective Features", _feature_lines(esp)),
        )
    )


# ---------------------------------------------------------------------------
# toolbox


def _others(token: Token, exclude: str):
    return [a for a in token.agents if a.id != exclude and a.current.valid]


def _vehicle_ahead(token: Token) -> str:
    tv = token.tv.current
    lane = geo.lane_of((tv.x, tv.y), token.lanes)
    if lane is None:
        return "TV is off the mapped lanes"
    centre = token.lanes.arrays["centerlines"][lane]
    s_tv = float(geo.project_points(np.array([[tv.x, tv.y]]), centre).s[0])
    best = None
    for a in _others(token, token.tv.id):
        f = a.current
        if geo.lane_of((f.x, f.y), token.lanes) != lane:
            continue
        s = float(geo.project_points(np.array([[f.x, f.y]]), centre).s[0])
        if s > s_tv and (best is None or s < best[0]):
            best = (s, a)
    if best is None:
        return "No vehicle ahead"
    s, a = best
    gap = s - s_tv - 0.5 * (a.bbox.length + token.tv.bbox.length)
    dv = a.current.speed - tv.speed
    word = "slow" if dv < -SPEED_BAND else "fast" if dv > SPEED_BAND else "same-speed"
    return f"{word} {a.category} ahead, gap {num(gap)} m, speed {num(a.current.speed)} m/s"


def _lane_status(token: Token, side: str) -> str:
    tv = token.tv.current
    lane = geo.lane_of((tv.x, tv.y), token.lanes)
    if lane is None:
        return "No lane"
    target = geo.adjacent_lane(token.lanes, lane, side, (tv.x, tv.y))
    if target is None:
        return "No lane"
    centre = token.lanes.arrays["centerlines"][target]
    s_tv = float(geo.project_points(np.array([[tv.x, tv.y]]), centre).s[0])
    for a in _others(token, token.tv.id):
        f = a.current
        if geo.lane_of((f.x, f.y), token.lanes) != target:
            continue
        s = float(geo.project_points(np.array([[f.x, f.y]]), centre).s[0])
        if abs(s - s_tv) <= LANE_CLEAR_RANGE:
            return "Occupied"
    return "Clear"


def _junction(token: Token) -> str:
    ahead = [j for j in token.infra.junctions if j.distance_ahead >= 0]
    if not ahead:
        return "none"
    j = min(ahead, key=lambda j: j.distance_ahead)
    return f"{_JUNCTION_TEXT[j.kind]} in {num(j.distance_ahead)} m"


def _speed_trend(token: Token) -> str:
    dv = _speed_change(token.tv)
    v = num(token.tv.current.speed)
    if abs(dv) < SPEED_BAND:
        return f"steady at {v} m/s"
    return f"{'accelerating' if dv > 0 else 'decelerating'}, {num(abs(dv))} m/s over 3 s, now {v} m/s"


def toolbox_query(token: Token, query: str) -> str:
    if query == "vehicle_ahead_tv":
        return _vehicle_ahead(token)
    if query == "left_lane_status_tv":
        return _lane_status(token, "left")
    if query == "right_lane_status_tv":
        return _lane_status(token, "right")
    if query == "distance_to_junction":
        return _junction(token)
    if query == "tv_speed_trend":
        return _speed_trend(token)
    raise ValueError(f"unknown toolbox query {query!r}; known: {', '.join(QUERIES)}")
