"""Extrospective pairwise features and the encoder concatenation contract."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from espkit import geometry as geo
from espkit.token_model import HISTORY_FRAMES, AgentTrack, FrameState, LaneSet, Token

PAIRS = ("ego_tv", "ego_cipv", "ego_ev", "tv_cipv", "tv_ev")
SIGNALS = ("distance", "rel_long_vel")
STATS = ("first", "last", "mean", "min")
# beyond long-range perception
SENTINEL_DISTANCE = 200.0
SENTINEL_VELOCITY = 0.0
EMBED_DIM = 32


@dataclass(frozen=True)
class ESPTensor:
    """values: (31, 5, 2) distance / relative longitudinal velocity; mask: (31, 5)."""

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        m = np.array(self.mask, dtype=bool)
        if v.shape != (HISTORY_FRAMES, len(PAIRS), 2) or m.shape != (HISTORY_FRAMES, len(PAIRS)):
            raise ValueError(f"bad ESP tensor shapes {v.shape}, {m.shape}")
        v.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "mask", m)

    def __eq__(self, other):
        if not isinstance(other, ESPTensor):
            return NotImplemented
        return np.array_equal(self.values, other.values) and np.array_equal(self.mask, other.mask)

    def flat(self) -> np.ndarray:
        """31 x 10 matrix, channel-major columns (dist, vel) per pair."""
        return self.values.reshape(HISTORY_FRAMES, -1)

    def channel(self, pair: str) -> np.ndarray:
        return self.values[:, PAIRS.index(pair)]

    @classmethod
    def from_flat(cls, flat, mask) -> "ESPTensor":
        return cls(np.asarray(flat, dtype=float).reshape(HISTORY_FRAMES, len(PAIRS), 2), mask)


def _long_axis(a: FrameState, lanes: Optional[LaneSet]) -> np.ndarray:
    if lanes is not None:
        lane = geo.lane_of((a.x, a.y), lanes)
        if lane is not None:
            return geo.lane_bounds((a.x, a.y), lanes, lane).tangent
    return np.array([math.cos(a.heading), math.sin(a.heading)])


def long_axes(track: AgentTrack, lanes: Optional[LaneSet]) -> np.ndarray:
    """(31, 2) longitudinal unit axes of ``track``, same rule as ``_long_axis``."""
    h = np.array([f.heading for f in track.history])
    axes = np.stack([np.cos(h), np.sin(h)], axis=1)
    if lanes is None:
        return axes
    pts = np.array([(f.x, f.y) for f in track.history])
    owner = geo.lane_of_points(pts, lanes)
    for lane in np.unique(owner[owner >= 0]):
        sel = owner == lane
        axes[sel] = geo.project_points(pts[sel], lanes.arrays["centerlines"][lane]).tangent
    return axes


def _velocity(f: FrameState) -> np.ndarray:
    return f.speed * np.array([math.cos(f.heading), math.sin(f.heading)])


def pair_features(a: AgentTrack, b: AgentTrack, frame: int, lanes: Optional[LaneSet]) -> tuple[float, float, bool]:
    """(centre distance, longitudinal relative velocity of b w.r.t. a, valid) at one history frame.

    The longitudinal axis is the tangent of a's lane centreline, or a's
    heading when a is off every lane.
    """
    if not 0 <= frame < HISTORY_FRAMES:
        raise IndexError(f"history frame {frame} out of range")
    fa, fb = a.history[frame], b.history[frame]
    if not (fa.valid and fb.valid):
        return SENTINEL_DISTANCE, SENTINEL_VELOCITY, False
    dist = math.hypot(fb.x - fa.x, fb.y - fa.y)
    rel = float(np.dot(_velocity(fb) - _velocity(fa), _long_axis(fa, lanes)))
    return dist, rel, True


def _nearest(anchor: AgentTrack, others: Sequence[AgentTrack], frame: int) -> Optional[AgentTrack]:
    fa = anchor.history[frame]
    if not fa.valid:
        return None
    best, best_d = None, math.inf
    for o in others:
        fo = o.history[frame]
        if not fo.valid:
            continue
        d = math.hypot(fo.x - fa.x, fo.y - fa.y)
        if d < best_d or (d == best_d and best is not None and o.id < best.id):
            best, best_d = o, d
    return best


def extract_esp_tensor(token: Token) -> ESPTensor:
    values = np.empty((HISTORY_FRAMES, len(PAIRS), 2))
    values[..., 0] = SENTINEL_DISTANCE
    values[..., 1] = SENTINEL_VELOCITY
    mask = np.zeros((HISTORY_FRAMES, len(PAIRS)), dtype=bool)
    cipv = token.cipv
    evs = token.environment_vehicles
    anchors = {"ego": token.ego, "tv": token.tv}
    axes = {k: long_axes(a, token.lanes) for k, a in anchors.items()}
    for c, pair in enumerate(PAIRS):
        first, second = pair.split("_")
        a = anchors[first]
        for i in range(HISTORY_FRAMES):
            if second == "tv":
                b = token.tv
            elif second == "cipv":
                b = cipv
            else:
                b = _nearest(a, evs, i)
            if b is None:
                continue
            fa, fb = a.history[i], b.history[i]
            if not (fa.valid and fb.valid):
                continue
            rel = float(np.dot(_velocity(fb) - _velocity(fa), axes[first][i]))
            values[i, c] = (math.hypot(fb.x - fa.x, fb.y - fa.y), rel)
            mask[i, c] = True
    return ESPTensor(values, mask)


def ablate(tensor: ESPTensor, pair: str) -> ESPTensor:
    """Drop one channel: sentinel values and an all-invalid mask."""
    c = PAIRS.index(pair)
    v = tensor.values.copy()
    m = tensor.mask.copy()
    v[:, c] = (SENTINEL_DISTANCE, SENTINEL_VELOCITY)
    m[:, c] = False
    return ESPTensor(v, m)


@dataclass(frozen=True)
class ESPEmbedding:
    vector: np.ndarray
    degenerate_channels: tuple[bool, ...]

    @property
    def degenerate(self) -> bool:
        return all(self.degenerate_channels)


def embedding_slots(pair: str, dim: int = EMBED_DIM) -> range:
    """Embedding indices that carry statistics of ``pair`` (empty when truncated away)."""
    per = len(SIGNALS) * len(STATS)
    c = PAIRS.index(pair)
    return range(min(c * per, dim), min((c + 1) * per, dim))


def reference_embed(tensor: ESPTensor, dim: int = EMBED_DIM) -> ESPEmbedding:
    """Deterministic pooled embedding of an ESP tensor.

    Per channel and signal: first, last, mean and min over valid frames,
    channel-major (5 x 2 x 4 = 40 values), then truncated or zero-padded to
    ``dim``. A channel with no valid frame contributes its sentinel values.
    """
    stats = []
    degenerate = []
    for c in range(len(PAIRS)):
        ok = tensor.mask[:, c]
        degenerate.append(not ok.any())
        for s in range(len(SIGNALS)):
            col = tensor.values[ok, c, s] if ok.any() else tensor.values[:, c, s]
            stats.extend((col[0], col[-1], col.mean(), col.min()))
    full = np.asarray(stats, dtype=float)
    vec = np.zeros(dim)
    vec[: min(dim, full.size)] = full[:dim]
    return ESPEmbedding(vec, tuple(degenerate))


@dataclass(frozen=True)
class Concatenated:
    vector: np.ndarray
    host_dim: int
    esp_dim: int

    @property
    def decoder_input_dim(self) -> int:
        """The decoder's input layer must be widened to this size."""
        return self.host_dim + self.esp_dim

    def __len__(self):
        return self.vector.size


def concat_contract(host_embedding, esp_embedding) -> Concatenated:
    host = np.asarray(host_embedding, dtype=float).ravel()
    esp = np.asarray(esp_embedding, dtype=float).ravel()
    return Concatenated(np.concatenate([host, esp]), host.size, esp.size)
