import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from espkit.metrics import (
    EvalConfig,
    classify_cutin,
    clamped_error,
    confusion_stats,
    evaluate,
    format_report,
    joint_min_cte,
    min_ade,
    min_cte,
    min_fde,
)
from espkit.synth import lane_change_future, scripted_predictor
from espkit.token_model import BoundingBox2D, FrameState, Mode, Prediction
from helpers import W, future, random_token, straight_lanes

BOX = BoundingBox2D(4.5, 1.9)
LANES = straight_lanes(y0=0.0)


def _pred(*trajs, scores=None):
    scores = scores or [1.0 / len(trajs)] * len(trajs)
    return Prediction("p", tuple(Mode(tuple(t), s) for t, s in zip(trajs, scores)))


def brute_ade_fde(modes, gt):
    best_ade = best_fde = math.inf
    valid = [i for i, f in enumerate(gt) if f.valid]
    for traj in modes:
        errs = [math.sqrt((traj[i].x - gt[i].x) ** 2 + (traj[i].y - gt[i].y) ** 2) for i in valid]
        best_ade = min(best_ade, sum(errs) / len(errs))
        best_fde = min(best_fde, errs[-1])
    return best_ade, best_fde


def random_traj(rng, n=50, valid=None):
    xy = np.cumsum(rng.normal(0, 1, size=(n, 2)), axis=0)
    return [
        FrameState((k + 1) / 10, float(x), float(y), 0.0, 1.0, True if valid is None else bool(valid[k]))
        for k, (x, y) in enumerate(xy)
    ]


def test_ade_fde_match_brute_force_random():
    rng = np.random.default_rng(0)
    for _ in range(300):
        valid = rng.random(50) > 0.1
        valid[int(rng.integers(0, 50))] = True
        gt = random_traj(rng, valid=valid)
        modes = [random_traj(rng) for _ in range(int(rng.integers(1, 7)))]
        ade, fde = brute_ade_fde(modes, gt)
        pred = _pred(*modes)
        assert min_ade(pred, gt) == pytest.approx(ade, rel=1e-9)
        assert min_fde(pred, gt) == pytest.approx(fde, rel=1e-9)


def test_ade_fde_errors():
    rng = np.random.default_rng(1)
    gt = random_traj(rng)
    with pytest.raises(ValueError):
        min_ade(_pred(random_traj(rng, n=49)), gt)
    with pytest.raises(ValueError):
        min_fde(_pred(random_traj(rng)), [FrameState(f.t, f.x, f.y, 0.0, 1.0, False) for f in gt])


def test_clamped_error_frame_grid_exact():
    assert clamped_error(2.2, 4.4, 5.0) == 2.2
    assert clamped_error(0.3, 0.1, 5.0) == 0.2
    assert clamped_error(1.0, None, 5.0) == 5.0
    assert clamped_error(0.1, 5.0, 3.0) == 3.0


def test_joint_min_cte_sums_agents_per_mode():
    # mode 0: |1-1| + |2-4| = 2, mode 1: |1-2| + |2-2| = 1
    assert joint_min_cte([1.0, 2.0], [[1.0, 4.0], [2.0, 2.0]], 5.0) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        joint_min_cte([1.0], [[1.0, 2.0]], 5.0)
    with pytest.raises(ValueError):
        joint_min_cte([1.0], [[1.0]], 0.0)


def lc(start, dur=3.0, y0=0.0, delta=W, speed=20.0):
    return lane_change_future(y0, delta, start, dur, speed)


def test_min_cte_shared_boundary_and_non_crossing():
    gt = lc(0.5)
    stay = future(0.0, 0.0, 20.0)
    assert min_cte(_pred(gt), gt, BOX, LANES) == 0.0
    assert min_cte(_pred(stay), gt, BOX, LANES) == 5.0
    assert min_cte(_pred(stay), gt, BOX, LANES, t_u=2.0) == 2.0
    with pytest.raises(ValueError):
        min_cte(_pred(gt), stay, BOX, LANES)


@given(st.floats(0.0, 3.5), st.floats(0.0, 3.5), st.floats(0.0, 3.5))
def test_min_cte_bounded_and_monotone_in_modes(g, a, b):
    gt = lc(g, dur=1.5)
    m1, m2 = lc(a, dur=1.5), lc(b, dur=1.5)
    one = min_cte(_pred(m1), gt, BOX, LANES)
    two = min_cte(_pred(m1, m2), gt, BOX, LANES)
    assert 0.0 <= two <= one <= 5.0


def test_classify_cutin_policies():
    gt = lc(0.5)
    stay = future(0.0, 0.0, 20.0)
    assert classify_cutin(_pred(gt), BOX, LANES)
    assert not classify_cutin(_pred(stay), BOX, LANES)
    p = _pred(stay, gt, scores=[0.7, 0.3])
    assert not classify_cutin(p, BOX, LANES, "top1")
    assert classify_cutin(p, BOX, LANES, "any")
    tie = _pred(gt, stay, scores=[0.5, 0.5])
    assert classify_cutin(tie, BOX, LANES, "top1")  # ties go to the lowest index
    with pytest.raises(ValueError):
        classify_cutin(p, BOX, LANES, "best")
    with pytest.raises(ValueError):
        classify_cutin(_pred(gt, scores=[None]), BOX, LANES, "top1")


def test_confusion_stats_and_undefined_ratios():
    c = confusion_stats([(True, True), (True, False), (False, True), (False, False)])
    assert (c.tp, c.fp, c.fn, c.tn) == (1, 1, 1, 1)
    assert tuple(c) == (0.5, 0.5, 0.5)
    c = confusion_stats([(False, False), (False, True)])
    assert c.precision == 1.0 and not c.precision_defined
    assert c.recall == 0.0 and c.recall_defined
    with pytest.raises(ValueError):
        confusion_stats([])


def test_evaluate_oracle_and_delayed():
    rng = np.random.default_rng(4)
    tokens = [random_token(rng, id=f"t{i:03d}") for i in range(40)]
    report = evaluate(tokens, [scripted_predictor(t) for t in tokens])
    assert report.mean_min_ade == 0.0 and report.mean_min_fde == 0.0
    assert report.mean_min_cte == 0.0
    assert report.confusion.accuracy == 1.0
    assert report.n_cte == sum(t.t_c is not None for t in tokens)
    assert [r.token_id for r in report.per_token] == sorted(t.id for t in tokens)


def test_evaluate_skips_missing_and_rejects_duplicates():
    rng = np.random.default_rng(5)
    tokens = [random_token(rng, id=f"t{i}") for i in range(3)]
    preds = [scripted_predictor(t) for t in tokens[:2]]
    report = evaluate(tokens, preds, EvalConfig(t_u=3.0, policy="any"))
    assert report.skipped == ("t2",)
    assert "skipped 1" in format_report(report)
    with pytest.raises(ValueError):
        evaluate(tokens, preds + preds[:1])
