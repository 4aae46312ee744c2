"""Displacement and clamped temporal error metrics over K-mode predictions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from espkit.geometry import lamt, select_target, token_target
from espkit.token_model import HORIZON, BoundingBox2D, FrameState, LaneSet, Prediction, Token

DEFAULT_T_U = HORIZON
POLICIES = ("top1", "any")


def _xy(traj: Sequence[FrameState]) -> np.ndarray:
    return np.array([(f.x, f.y) for f in traj], dtype=float)


def _displacements(pred: Prediction, gt: Sequence[FrameState]) -> tuple[np.ndarray, np.ndarray]:
    g = _xy(gt)
    mask = np.array([f.valid for f in gt], dtype=bool)
    if not mask.any():
        raise ValueError("ground truth has no valid frame")
    dists = []
    for k, m in enumerate(pred.modes):
        if len(m.trajectory) != len(gt):
            raise ValueError(f"mode {k} has {len(m.trajectory)} frames, ground truth has {len(gt)}")
        dists.append(np.linalg.norm(_xy(m.trajectory) - g, axis=1))
    return np.array(dists), mask


def min_ade(pred: Prediction, gt: Sequence[FrameState]) -> float:
    """Minimum over modes of the mean Euclidean error over valid ground-truth frames."""
    d, mask = _displacements(pred, gt)
    return float(d[:, mask].mean(axis=1).min())


def min_fde(pred: Prediction, gt: Sequence[FrameState]) -> float:
    """Minimum over modes of the error at the last valid ground-truth frame."""
    d, mask = _displacements(pred, gt)
    last = int(np.flatnonzero(mask)[-1])
    return float(d[:, last].min())


def clamped_error(gt_time: float, pred_time: Optional[float], t_u: float) -> float:
    if pred_time is None:
        return t_u
    # rounding to 1e-9 keeps frame-grid differences exact, e.g. 4.4 - 2.2 -> 2.2
    return min(round(abs(gt_time - pred_time), 9), t_u)


def joint_min_cte(gt_times: Sequence[float], mode_times: Sequence[Sequence[Optional[float]]], t_u: float) -> float:
    """Clamped temporal error for A agents sharing a joint mode index.

    ``mode_times[k][a]`` is the LaMT of agent ``a`` in joint mode ``k``.
    """
    if t_u <= 0:
        raise ValueError("t_u must be positive")
    if not mode_times:
        raise ValueError("need at least one mode")
    best = math.inf
    for times in mode_times:
        if len(times) != len(gt_times):
            raise ValueError("every joint mode must cover every agent")
        best = min(best, sum(clamped_error(g, p, t_u) for g, p in zip(gt_times, times)))
    return best


def mode_lamts(pred: Prediction, box: BoundingBox2D, boundary) -> list[Optional[float]]:
    return [lamt(m.trajectory, box, boundary) for m in pred.modes]


def min_cte(
    pred: Prediction,
    gt: Sequence[FrameState],
    box: BoundingBox2D,
    lanes: LaneSet,
    t_u: float = DEFAULT_T_U,
    start: Optional[FrameState] = None,
) -> float:
    """Single-agent minCTE.

    The target boundary is selected once from the ground truth (starting at
    ``start``, default the first ground-truth frame) and every mode is timed
    against that same polyline. A mode that never crosses contributes ``t_u``.
    """
    if t_u <= 0:
        raise ValueError("t_u must be positive")
    start = gt[0] if start is None else start
    boundary = select_target(start, lanes, gt).points
    gt_time = lamt(gt, box, boundary)
    if gt_time is None:
        raise ValueError("ground truth never crosses its target boundary; exclude it from CTE evaluation")
    return joint_min_cte([gt_time], [[t] for t in mode_lamts(pred, box, boundary)], t_u)


def classify_cutin(
    pred: Prediction,
    box: BoundingBox2D,
    lanes: LaneSet,
    policy: str = "top1",
    start: Optional[FrameState] = None,
) -> bool:
    """Does the prediction imply a cut-in within the horizon?

    Each mode is timed against the boundary its own lateral drift points to,
    starting from ``start`` (default: the mode's first frame).
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown cut-in policy {policy!r}")
    if policy == "top1":
        scored = [(m.score, -k) for k, m in enumerate(pred.modes) if m.score is not None]
        if not scored:
            raise ValueError("top1 policy needs scored modes")
        modes = [pred.modes[-max(scored)[1]]]
    else:
        modes = list(pred.modes)
    for m in modes:
        s = m.trajectory[0] if start is None else start
        t = lamt(m.trajectory, box, select_target(s, lanes, m.trajectory).points)
        if t is not None and 0.0 < t <= HORIZON:
            return True
    return False


@dataclass(frozen=True)
class ConfusionStats:
    precision: float
    recall: float
    accuracy: float
    tp: int
    fp: int
    fn: int
    tn: int
    precision_defined: bool = True
    recall_defined: bool = True

    def __iter__(self):
        return iter((self.precision, self.recall, self.accuracy))


def confusion_stats(pairs: Iterable[tuple[bool, bool]]) -> ConfusionStats:
    """Precision, recall and accuracy from (predicted, actual) pairs.

    Undefined ratios (no predicted / no actual positives) are reported as 1.0
    with the matching ``*_defined`` flag cleared.
    """
    tp = fp = fn = tn = 0
    for predicted, actual in pairs:
        if predicted and actual:
            tp += 1
        elif predicted:
            fp += 1
        elif actual:
            fn += 1
        else:
            tn += 1
    n = tp + fp + fn + tn
    if n == 0:
        raise ValueError("confusion_stats needs at least one pair")
    return ConfusionStats(
        precision=tp / (tp + fp) if tp + fp else 1.0,
        recall=tp / (tp + fn) if tp + fn else 1.0,
        accuracy=(tp + tn) / n,
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
        precision_defined=bool(tp + fp),
        recall_defined=bool(tp + fn),
    )


@dataclass(frozen=True)
class EvalConfig:
    t_u: float = DEFAULT_T_U
    policy: str = "top1"


@dataclass(frozen=True)
class TokenMetrics:
    token_id: str
    min_ade: float
    min_fde: float
    min_cte: Optional[float]  # None when the token has no ground-truth cut-in
    cutin_predicted: bool
    cutin_actual: bool


@dataclass(frozen=True)
class MetricsReport:
    per_token: tuple[TokenMetrics, ...]
    skipped: tuple[str, ...]
    mean_min_ade: Optional[float]
    mean_min_fde: Optional[float]
    mean_min_cte: Optional[float]
    n_cte: int
    confusion: Optional[ConfusionStats]
    config: EvalConfig = field(default_factory=EvalConfig)

    notes: tuple[str, ...] = (
        "minCTE is averaged over tokens with a ground-truth cut-in only",
        "tokens without a ground-truth cut-in count as actual negatives in classification",
    )


def _mean(values: list[float]) -> Optional[float]:
    return float(np.mean(values)) if values else None


def evaluate_token(token: Token, pred: Prediction, config: EvalConfig) -> TokenMetrics:
    gt = token.tv.future
    if gt is None:
        raise ValueError(f"token {token.id} has no ground-truth future")
    box = token.tv.bbox
    cte = None
    if token.t_c is not None:
        boundary = token_target(token).points
        times = mode_lamts(pred, box, boundary)
        cte = joint_min_cte([token.t_c], [[t] for t in times], config.t_u)
    return TokenMetrics(
        token_id=token.id,
        min_ade=min_ade(pred, gt),
        min_fde=min_fde(pred, gt),
        min_cte=cte,
        cutin_predicted=classify_cutin(pred, box, token.lanes, config.policy, start=token.tv.current),
        cutin_actual=token.t_c is not None,
    )


def evaluate(tokens: Sequence[Token], predictions: Sequence[Prediction], config: EvalConfig = EvalConfig()) -> MetricsReport:
    by_id: dict[str, Prediction] = {}
    for p in predictions:
        if p.token_id in by_id:
            raise ValueError(f"duplicate prediction for token {p.token_id}")
        by_id[p.token_id] = p
    rows, skipped = [], []
    for token in sorted(tokens, key=lambda t: t.id):
        pred = by_id.get(token.id)
        if pred is None:
            skipped.append(token.id)
            continue
        rows.append(evaluate_token(token, pred, config))
    ctes = [r.min_cte for r in rows if r.min_cte is not None]
    return MetricsReport(
        per_token=tuple(rows),
        skipped=tuple(skipped),
        mean_min_ade=_mean([r.min_ade for r in rows]),
        mean_min_fde=_mean([r.min_fde for r in rows]),
        mean_min_cte=_mean(ctes),
        n_cte=len(ctes),
        confusion=confusion_stats((r.cutin_predicted, r.cutin_actual) for r in rows) if rows else None,
        config=config,
    )


def format_report(report: MetricsReport) -> str:
    """Human-readable table in the column order minFDE, minADE, minCTE, Precis., Recall, Acc."""

    def f(v, digits=3):
        return "-" if v is None else f"{v:.{digits}f}"

    lines = [f"# {n}" for n in report.notes]
    lines.append(f"# t_u = {report.config.t_u:g} s, cut-in policy = {report.config.policy}")
    lines.append(f"{'token':<32} {'minFDE':>8} {'minADE':>8} {'minCTE':>8} {'pred':>5} {'gt':>5}")
    for r in report.per_token:
        lines.append(
            f"{r.token_id:<32} {f(r.min_fde):>8} {f(r.min_ade):>8} {f(r.min_cte):>8} "
            f"{int(r.cutin_predicted):>5} {int(r.cutin_actual):>5}"
        )
    c = report.confusion
    lines.append("")
    lines.append(f"{'':<10} {'minFDE':>8} {'minADE':>8} {'minCTE':>8} {'Precis.':>8} {'Recall':>8} {'Acc.':>8}")
    lines.append(
        f"{'mean':<10} {f(report.mean_min_fde):>8} {f(report.mean_min_ade):>8} {f(report.mean_min_cte):>8} "
        f"{f(c and c.precision):>8} {f(c and c.recall):>8} {f(c and c.accuracy):>8}"
    )
    lines.append(f"evaluated {len(report.per_token)} tokens ({report.n_cte} with cut-in), skipped {len(report.skipped)}")
    if c is not None and not c.precision_defined:
        lines.append("precision undefined (no predicted cut-ins), reported as 1.0")
    return "\n".join(lines)
