import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_ap, brute_force_match, scenario, single
from shufflepose.errors import ConfigError
from shufflepose.oks import (
    COCO_KAPPAS, DEFAULT_THRESHOLDS, GroundTruth, Prediction, average_precision, box_area, greedy_match,
    interpolated_ap, oks, oks_matrix, uniform_kappas,
)


def test_oks_examples():
    gt = single(3.0, 4.0)
    assert oks(gt, gt, 50.0) == 1.0
    assert oks(single(1e9, 0.0), gt, 50.0) == 0.0
    value = oks(single(1.0, 0.0), single(0.0, 0.0), 100.0, np.array([0.1]))
    assert abs(value - math.exp(-0.5)) <= 1e-12
    assert round(value, 4) == 0.6065


def test_oks_ignores_invisible_and_handles_empty():
    gt = np.array([[0.0, 0.0, 2.0], [5.0, 5.0, 0.0]])
    pred = np.array([[0.0, 0.0, 1.0], [100.0, 100.0, 1.0]])
    assert oks(pred, gt, 10.0) == 1.0
    assert math.isnan(oks(pred, np.array([[0.0, 0.0, 0.0]] * 2), 10.0))


def test_oks_errors():
    with pytest.raises(ValueError):
        oks(single(0, 0), single(0, 0), 0.0)
    with pytest.raises(ConfigError):
        oks(single(0, 0), single(0, 0), 1.0, np.array([0.0]))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-500, 500), st.floats(-500, 500))
def test_oks_translation_invariant(seed, dx, dy):
    rng = np.random.default_rng(seed)
    gt = np.column_stack([rng.uniform(0, 100, (17, 2)), rng.choice([0, 2], 17)])
    pred = gt.copy()
    pred[:, :2] += rng.normal(0, 5, (17, 2))
    if not (gt[:, 2] > 0).any():
        gt[0, 2] = 2
    shift = np.array([dx, dy, 0.0])
    a = oks(pred, gt, 500.0, COCO_KAPPAS)
    b = oks(pred + shift, gt + shift, 500.0, COCO_KAPPAS)
    assert abs(a - b) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 50), st.floats(0, 50))
def test_oks_monotone_in_distance(d1, d2):
    near, far = sorted([d1, d2])
    gt = single(0.0, 0.0)
    assert oks(single(far, 0.0), gt, 100.0) <= oks(single(near, 0.0), gt, 100.0)


def test_box_area():
    kps = np.array([[0.0, 0.0, 2.0], [4.0, 3.0, 1.0], [100.0, 100.0, 0.0]])
    assert box_area(kps) == 12.0
    assert box_area(kps, 2.0) == 24.0
    assert box_area(kps[2:]) == 0.0


def test_scenario_matches_brute_force_oracle():
    preds, gts = scenario()
    sim = oks_matrix(preds, gts, uniform_kappas(1))
    scores = [p.score for p in preds]
    order = sorted(range(4), key=lambda i: -scores[i])
    summary = average_precision(preds, gts, kappas=uniform_kappas(1))
    for t in DEFAULT_THRESHOLDS:
        tp_oracle = np.array(brute_force_match(sim, scores, t), dtype=int)
        tp = np.array([m >= 0 for m in greedy_match(sim, order, t)], dtype=int)[order]
        assert np.array_equal(tp, tp_oracle)
        assert summary.per_threshold[t] == brute_force_ap(tp_oracle, len(gts))
    # three, two, then one person found as the threshold rises
    per_t = summary.per_threshold
    assert per_t[0.5] > per_t[0.6] > per_t[0.75] == per_t[0.95] > 0.0


def test_perfect_predictions_give_ap_one():
    rng = np.random.default_rng(0)
    gts, preds = [], []
    for img in range(5):
        kps = np.column_stack([rng.uniform(0, 96, (17, 2)), np.full(17, 2.0)])
        gts.append(GroundTruth(kps, 800.0, img))
        preds.append(Prediction(kps.copy(), rng.uniform(), img))
    s = average_precision(preds, gts)
    assert s.ap == s.ap50 == s.ap75 == s.ar == 1.0
    assert all(v == 1.0 for v in s.per_threshold.values())


def test_far_predictions_give_ap_zero():
    gts = [GroundTruth(single(0.0, 0.0), 10.0)]
    s = average_precision([Prediction(single(500.0, 500.0), 1.0)], gts)
    assert s.ap == 0.0 and s.ar == 0.0


def test_empty_sets():
    s = average_precision([Prediction(single(0, 0), 1.0)], [])
    assert s.ap == 0.0
    empty = average_precision([], [])
    assert empty.ap is None
    assert empty.report_lines() == ["AP=undefined", "AP50=undefined", "AP75=undefined", "AR=undefined"]


def test_thresholds_validated():
    with pytest.raises(ValueError):
        average_precision([], [GroundTruth(single(0, 0), 1.0)], thresholds=[0.5, 1.0])


def test_predictions_do_not_match_across_images():
    gts = [GroundTruth(single(0.0, 0.0), 10.0, image_id=0)]
    s = average_precision([Prediction(single(0.0, 0.0), 1.0, image_id=1)], gts)
    assert s.ap == 0.0


def test_interpolated_ap_hand_values():
    ap, rec = interpolated_ap(np.array([1, 0, 1]), 2)
    # precision envelope is 1 up to recall 0.5 and 2/3 beyond
    expect = (51 * 1.0 + 50 * (2 / 3)) / 101
    assert abs(ap - expect) < 1e-15 and rec == 1.0


def test_report_format():
    preds, gts = scenario()
    lines = average_precision(preds, gts).report_lines()
    assert [ln.split("=")[0] for ln in lines] == ["AP", "AP50", "AP75", "AR"]


def _random_scenario(seed):
    rng = np.random.default_rng(seed)
    gts = [GroundTruth(single(*rng.uniform(0, 60, 2)), rng.uniform(20, 200), int(rng.integers(0, 2)))
           for _ in range(rng.integers(1, 4))]
    preds = [Prediction(single(*rng.uniform(0, 60, 2)), float(rng.uniform()), int(rng.integers(0, 2)))
             for _ in range(rng.integers(1, 5))]
    return preds, gts


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_ap_invariant_to_monotone_score_rescaling(seed):
    preds, gts = _random_scenario(seed)
    rescaled = [Prediction(p.keypoints, math.exp(3 * p.score) - 7, p.image_id) for p in preds]
    assert average_precision(preds, gts).per_threshold == average_precision(rescaled, gts).per_threshold


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_ap_non_increasing_in_threshold(seed):
    preds, gts = _random_scenario(seed)
    per_t = average_precision(preds, gts).per_threshold
    values = [per_t[t] for t in sorted(per_t)]
    assert all(b <= a + 1e-15 for a, b in zip(values, values[1:]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_random_scenarios_match_oracle(seed):
    preds, gts = _random_scenario(seed)
    summary = average_precision(preds, gts)
    sim = oks_matrix(preds, gts, uniform_kappas(1))
    scores = [p.score for p in preds]
    for t in DEFAULT_THRESHOLDS:
        tp = brute_force_match(sim, scores, t)
        assert summary.per_threshold[t] == brute_force_ap(tp, len(gts))
