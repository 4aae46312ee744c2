"""Line-delimited JSON records for tokens, streams, predictions and reports.

Every float is written with 6 significant digits. A token's canonical form is
the token with its floats rounded the same way, so parse(write(T)) equals
``canonical_token(T)`` and equals T itself for tokens that are already
canonical (everything the miner emits).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from espkit.esp_features import ESPTensor, extract_esp_tensor
from espkit.geometry import token_cutin_time
from espkit.metrics import ConfusionStats, EvalConfig, MetricsReport, TokenMetrics
from espkit.miner import AgentObs, Frame, FrameStream
from espkit.token_model import (
    AgentTrack,
    Boundary,
    BoundingBox2D,
    FrameState,
    Junction,
    LaneSet,
    Mode,
    Prediction,
    RareObject,
    Scene,
    SemanticInfrastructure,
    SpeedMonitor,
    Token,
    round_sig,
    validate_token,
)

SCHEMA_VERSION = "1"
TOKEN_KEYS = ("schema_version", "id", "scene", "lanes", "agents", "infra", "scenario_type", "t_c", "esp")
T_C_TOLERANCE = 0.1


class FormatError(ValueError):
    """A record that cannot be read; the message names the file line."""


def _f(v: float) -> float:
    if not math.isfinite(v):
        raise ValueError(f"cannot serialise non-finite value {v}")
    return round_sig(float(v))


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


# ---------------------------------------------------------------------------
# tokens


def _frames_out(frames: Sequence[FrameState]) -> list:
    return [[_f(f.t), _f(f.x), _f(f.y), _f(f.heading), _f(f.speed), bool(f.valid)] for f in frames]


def _frames_in(rows) -> tuple[FrameState, ...]:
    return tuple(FrameState(float(t), float(x), float(y), float(h), float(v), bool(ok)) for t, x, y, h, v, ok in rows)


def _poly_out(p) -> list:
    return [[_f(x), _f(y)] for x, y in p]


def lanes_to_dict(lanes: LaneSet) -> dict:
    return {
        "centerlines": [_poly_out(c) for c in lanes.centerlines],
        "boundaries": [{"points": _poly_out(b.points), "lanes": list(b.lanes)} for b in lanes.boundaries],
        "road_edges": [_poly_out(e) for e in lanes.road_edges],
        "ramp_lanes": list(lanes.ramp_lanes),
    }


def lanes_from_dict(d: dict) -> LaneSet:
    return LaneSet(
        centerlines=tuple(tuple(map(tuple, c)) for c in d["centerlines"]),
        boundaries=tuple(Boundary(tuple(map(tuple, b["points"])), tuple(b["lanes"])) for b in d["boundaries"]),
        road_edges=tuple(tuple(map(tuple, e)) for e in d["road_edges"]),
        ramp_lanes=tuple(d.get("ramp_lanes", ())),
    )


def infra_to_dict(infra: SemanticInfrastructure) -> dict:
    return {
        "speed_monitors": [
            {"position_along_route": _f(m.position_along_route), "limit": _f(m.limit)} for m in infra.speed_monitors
        ],
        "junctions": [{"kind": j.kind, "distance_ahead": _f(j.distance_ahead)} for j in infra.junctions],
        "rare_objects": [{"kind": o.kind, "x": _f(o.x), "y": _f(o.y)} for o in infra.rare_objects],
    }


def infra_from_dict(d: dict) -> SemanticInfrastructure:
    return SemanticInfrastructure(
        speed_monitors=tuple(SpeedMonitor(float(m["position_along_route"]), float(m["limit"])) for m in d["speed_monitors"]),
        junctions=tuple(Junction(j["kind"], float(j["distance_ahead"])) for j in d["junctions"]),
        rare_objects=tuple(RareObject(o["kind"], float(o["x"]), float(o["y"])) for o in d["rare_objects"]),
    )


def _agent_out(a: AgentTrack) -> dict:
    return {
        "id": a.id,
        "category": a.category,
        "role": a.role,
        "bbox": {"length": _f(a.bbox.length), "width": _f(a.bbox.width)},
        "history": _frames_out(a.history),
        "future": None if a.future is None else _frames_out(a.future),
    }


def _agent_in(d: dict) -> AgentTrack:
    return AgentTrack(
        id=str(d["id"]),
        category=d["category"],
        role=d["role"],
        bbox=BoundingBox2D(float(d["bbox"]["length"]), float(d["bbox"]["width"])),
        history=_frames_in(d["history"]),
        future=None if d.get("future") is None else _frames_in(d["future"]),
    )


def token_to_record(token: Token, esp: Optional[ESPTensor] = None) -> dict:
    rec: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "id": token.id,
        "scene": {
            "lane_type": token.scene.lane_type,
            "weather": token.scene.weather,
            "vehicle_count": token.scene.vehicle_count,
        },
        "lanes": lanes_to_dict(token.lanes),
        "agents": [_agent_out(a) for a in token.agents],
        "infra": infra_to_dict(token.infra),
        "scenario_type": token.scenario_type,
        "t_c": None if token.t_c is None else _f(token.t_c),
    }
    if esp is not None:
        rec["esp"] = {
            "values": [[_f(v) for v in row] for row in esp.flat()],
            "mask": [[bool(v) for v in row] for row in esp.mask],
        }
    for k, v in token.extra.items():
        rec.setdefault(k, v)
    return rec


def token_to_line(token: Token, esp: Optional[ESPTensor] = None) -> str:
    return _dumps(token_to_record(token, esp))


@dataclass(frozen=True)
class TokenRecord:
    token: Token
    esp: Optional[ESPTensor] = None


def record_to_token(rec: dict, strict: bool = True, where: str = "record") -> TokenRecord:
    if not isinstance(rec, dict):
        raise FormatError(f"{where}: expected an object")
    version = rec.get("schema_version")
    if version != SCHEMA_VERSION:
        raise FormatError(f"{where}: schema_version {version!r} not supported (expected {SCHEMA_VERSION!r})")
    unknown = [k for k in rec if k not in TOKEN_KEYS]
    if unknown and strict:
        raise FormatError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        agents = [_agent_in(a) for a in rec["agents"]]
        ego = [a for a in agents if a.role == "Ego"]
        tv = [a for a in agents if a.role == "TV"]
        if len(ego) != 1 or len(tv) != 1:
            raise FormatError(f"{where}: need exactly one Ego and one TV agent")
        token = Token(
            id=str(rec["id"]),
            scene=Scene(rec["scene"]["lane_type"], rec["scene"]["weather"], int(rec["scene"]["vehicle_count"])),
            lanes=lanes_from_dict(rec["lanes"]),
            ego=ego[0],
            tv=tv[0],
            evs=tuple(a for a in agents if a.role not in ("Ego", "TV")),
            infra=infra_from_dict(rec["infra"]),
            scenario_type=rec["scenario_type"],
            t_c=None,
            extra={k: rec[k] for k in unknown},
        )
        stored = rec["t_c"]
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{where}: malformed token record ({exc!r})") from exc

    problems = validate_token(token)
    if problems:
        raise FormatError(f"{where}: invalid token: {'; '.join(problems)}")
    if stored is not None:
        actual = token_cutin_time(token)
        if actual is None or abs(actual - float(stored)) > T_C_TOLERANCE:
            raise FormatError(f"{where}: stored t_c {stored} disagrees with geometry ({actual})")
        token = replace(token, t_c=actual)
        problems = validate_token(token)
        if problems:
            raise FormatError(f"{where}: invalid token: {'; '.join(problems)}")

    esp = None
    if rec.get("esp") is not None:
        try:
            esp = ESPTensor.from_flat(rec["esp"]["values"], rec["esp"]["mask"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{where}: malformed esp block ({exc!r})") from exc
        fresh = extract_esp_tensor(token)
        if not (np.array_equal(fresh.mask, esp.mask) and np.allclose(fresh.values, esp.values, rtol=1e-4, atol=1e-3)):
            raise FormatError(f"{where}: cached esp block disagrees with the recomputed features")
        # the cache only carries 6 digits; hand back the full-precision tensor
        esp = fresh
    return TokenRecord(token, esp)


def write_tokens(tokens: Iterable[Token], path, esp: Optional[Sequence[Optional[ESPTensor]]] = None) -> None:
    tokens = list(tokens)
    esp = list(esp) if esp is not None else [None] * len(tokens)
    with open(path, "w", encoding="utf-8") as fh:
        for token, e in zip(tokens, esp):
            fh.write(token_to_line(token, e) + "\n")


def _lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if line.strip():
                yield n, line


def _load(line: str, where: str):
    try:
        return json.loads(line)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{where}: malformed line ({exc.msg})") from exc


def read_tokens(path, strict: bool = True) -> list[TokenRecord]:
    out = []
    for n, line in _lines(path):
        where = f"{path}:{n}"
        out.append(record_to_token(_load(line, where), strict, where))
    return out


def parse_tokens(path, strict: bool = True) -> list[Token]:
    return [r.token for r in read_tokens(path, strict)]


# ---------------------------------------------------------------------------
# streams


def write_stream(stream: FrameStream, path) -> None:
    header = {
        "schema_version": SCHEMA_VERSION,
        "kind": "stream",
        "id": stream.id,
        "ego_id": stream.ego_id,
        "weather": stream.weather,
        "lanes": lanes_to_dict(stream.lanes),
        "infra": infra_to_dict(stream.infra),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_dumps(header) + "\n")
        for fr in stream.frames:
            agents = [
                [a.id, a.category, _f(a.x), _f(a.y), _f(a.heading), _f(a.speed), _f(a.length), _f(a.width)]
                for a in fr.agents
            ]
            fh.write(_dumps({"timestamp": _f(fr.timestamp), "agents": agents}) + "\n")


def parse_stream(path) -> FrameStream:
    lines = list(_lines(path))
    if not lines:
        raise FormatError(f"{path}: empty stream file")
    n, first = lines[0]
    head = _load(first, f"{path}:{n}")
    if head.get("schema_version") != SCHEMA_VERSION:
        raise FormatError(f"{path}:{n}: schema_version {head.get('schema_version')!r} not supported")
    if head.get("kind") != "stream":
        raise FormatError(f"{path}:{n}: first line must be a stream header")
    frames = []
    for n, line in lines[1:]:
        where = f"{path}:{n}"
        rec = _load(line, where)
        try:
            frames.append(
                Frame(
                    float(rec["timestamp"]),
                    tuple(
                        AgentObs(str(i), c, float(x), float(y), float(h), float(v), float(ln), float(w))
                        for i, c, x, y, h, v, ln, w in rec["agents"]
                    ),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{where}: malformed frame ({exc!r})") from exc
    return FrameStream(
        id=head["id"],
        ego_id=head["ego_id"],
        frames=tuple(frames),
        lanes=lanes_from_dict(head["lanes"]),
        infra=infra_from_dict(head["infra"]),
        weather=head.get("weather", "clear"),
    )


def canonical_stream(stream: FrameStream) -> FrameStream:
    """The stream as it reads back from a file."""
    return replace(
        stream,
        frames=tuple(
            Frame(
                _f(fr.timestamp),
                tuple(
                    replace(a, x=_f(a.x), y=_f(a.y), heading=_f(a.heading), speed=_f(a.speed), length=_f(a.length), width=_f(a.width))
                    for a in fr.agents
                ),
            )
            for fr in stream.frames
        ),
        lanes=lanes_from_dict(lanes_to_dict(stream.lanes)),
        infra=infra_from_dict(infra_to_dict(stream.infra)),
    )


# ---------------------------------------------------------------------------
# predictions


def prediction_to_record(pred: Prediction) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "token_id": pred.token_id,
        "modes": [
            {"score": None if m.score is None else _f(m.score), "trajectory": _frames_out(m.trajectory)}
            for m in pred.modes
        ],
    }


def prediction_from_record(rec: dict, where: str = "record") -> Prediction:
    if rec.get("schema_version") != SCHEMA_VERSION:
        raise FormatError(f"{where}: schema_version {rec.get('schema_version')!r} not supported")
    try:
        return Prediction(
            str(rec["token_id"]),
            tuple(
                Mode(_frames_in(m["trajectory"]), None if m.get("score") is None else float(m["score"]))
                for m in rec["modes"]
            ),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{where}: malformed prediction ({exc!r})") from exc


def canonical_prediction(pred: Prediction) -> Prediction:
    return prediction_from_record(prediction_to_record(pred))


def write_predictions(preds: Iterable[Prediction], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in preds:
            fh.write(_dumps(prediction_to_record(p)) + "\n")


def parse_predictions(path) -> list[Prediction]:
    return [prediction_from_record(_load(line, f"{path}:{n}"), f"{path}:{n}") for n, line in _lines(path)]


# ---------------------------------------------------------------------------
# reports


def _opt(v):
    return None if v is None else _f(v)


def report_to_dict(report: MetricsReport) -> dict:
    c: Optional[ConfusionStats] = report.confusion
    agg = {
        "mean_min_fde": _opt(report.mean_min_fde),
        "mean_min_ade": _opt(report.mean_min_ade),
        "mean_min_cte": _opt(report.mean_min_cte),
        "n_evaluated": len(report.per_token),
        "n_cte": report.n_cte,
        "n_skipped": len(report.skipped),
    }
    if c is not None:
        agg.update(
            precision=_f(c.precision),
            recall=_f(c.recall),
            accuracy=_f(c.accuracy),
            precision_defined=c.precision_defined,
            recall_defined=c.recall_defined,
            tp=c.tp,
            fp=c.fp,
            fn=c.fn,
            tn=c.tn,
        )
    return {
        "schema_version": SCHEMA_VERSION,
        "notes": list(report.notes),
        "config": {"t_u": _f(report.config.t_u), "cutin_policy": report.config.policy},
        "tokens": [
            {
                "token_id": r.token_id,
                "min_fde": _f(r.min_fde),
                "min_ade": _f(r.min_ade),
                "min_cte": _opt(r.min_cte),
                "cutin_predicted": r.cutin_predicted,
                "cutin_actual": r.cutin_actual,
            }
            for r in report.per_token
        ],
        "skipped": list(report.skipped),
        "aggregate": agg,
    }


def write_report(report: MetricsReport, path) -> None:
    Path(path).write_text(json.dumps(report_to_dict(report), indent=2, allow_nan=False) + "\n", encoding="utf-8")
