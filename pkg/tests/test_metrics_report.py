import json

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from netselect.errors import EmptySeries, LengthMismatch, NoValidPairs, SingleClass, UnpairedOutcomes
from netselect.metrics_report import (
    compare_report,
    confusion,
    mann_whitney_auc,
    percentiles,
    prediction_ratio,
    roc_auc,
    threshold,
    true_accuracy,
    write_evaluation,
)
from netselect.simulation import SimOutcome


def test_confusion_examples():
    y = [1] * 10 + [0] * 10
    cm = confusion(y, y)
    assert (cm.tp, cm.tn, cm.fp, cm.fn) == (10, 10, 0, 0)
    assert confusion([1] * 20, y).fp == 10


def test_confusion_fifty_sample_oracle():
    rng = np.random.default_rng(50)
    p, y = rng.integers(0, 2, 50), rng.integers(0, 2, 50)
    tp = fp = tn = fn = 0
    for a, b in zip(p, y):
        if a and b:
            tp += 1
        elif a:
            fp += 1
        elif b:
            fn += 1
        else:
            tn += 1
    cm = confusion(p, y)
    assert (cm.tp, cm.fp, cm.tn, cm.fn) == (tp, fp, tn, fn)
    assert cm.total == 50


def test_confusion_frozen_counts():
    preds = [1, 1, 0, 0, 1, 0, 1, 0]
    labels = [1, 0, 0, 1, 1, 0, 0, 0]
    cm = confusion(preds, labels)
    assert (cm.tp, cm.fp, cm.tn, cm.fn) == (2, 2, 3, 1)
    assert cm.tp_accuracy == 2 / 3
    assert cm.row_normalized() == [[0.6, 0.4], [1 / 3, 2 / 3]]


def test_confusion_length_mismatch():
    with pytest.raises(LengthMismatch):
        confusion([1, 0], [1])
    with pytest.raises(LengthMismatch):
        confusion([], [])


def test_true_accuracy_examples():
    assert true_accuracy([0.9, 0.8, 0.1], [1, 1, 0], 0.7) == 1.0
    assert true_accuracy([0.65] * 4, [0] * 4, 0.7) == 1.0
    assert true_accuracy([0.65] * 4, [0] * 4, 0.6) == 0.0
    # 0.7 counts as positive at threshold 0.7; hand count gives 4 of 6 correct
    assert true_accuracy([0.7, 0.69, 0.2, 0.95, 0.5, 0.71], [1, 1, 0, 0, 0, 1], 0.7) == 4 / 6


@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=50), st.floats(0, 1))
def test_true_accuracy_equals_confusion(pairs, t):
    p, y = map(np.array, zip(*pairs))
    cm = confusion(threshold(p, t), y)
    assert true_accuracy(p, y, t) == pytest.approx((cm.tp + cm.tn) / cm.total)


def test_auc_examples():
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]).auc == 1.0
    assert roc_auc([0.5] * 6, [0, 1, 0, 1, 1, 0]).auc == 0.5
    assert roc_auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]).auc == 0.0


def test_auc_frozen_value():
    # 3 positives, 3 negatives; of 9 pairs the positive wins 5 and ties 1: (2*5 + 1) / 18
    s = [0.9, 0.4, 0.4, 0.7, 0.2, 0.1]
    y = [1, 1, 0, 0, 1, 0]
    assert roc_auc(s, y).auc == 11 / 18


def test_auc_single_class():
    with pytest.raises(SingleClass):
        roc_auc([0.1, 0.2], [1, 1])


def test_auc_matches_mann_whitney_thirty():
    rng = np.random.default_rng(30)
    s = rng.random(30).round(1)
    y = rng.integers(0, 2, 30)
    assert abs(roc_auc(s, y).auc - mann_whitney_auc(s, y)) <= 1e-12


@given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 1)), min_size=2, max_size=60))
def test_auc_curve_shape_and_mann_whitney(pairs):
    s, y = map(np.array, zip(*pairs))
    if len(set(y.tolist())) < 2:
        return
    r = roc_auc(s.astype(float), y)
    assert r.fpr[0] == 0 and r.tpr[0] == 0 and r.fpr[-1] == 1 and r.tpr[-1] == 1
    assert np.all(np.diff(r.fpr) >= 0) and np.all(np.diff(r.tpr) >= 0)
    assert abs(r.auc - mann_whitney_auc(s, y)) <= 1e-12


@given(st.lists(st.tuples(st.floats(-5, 5), st.integers(0, 1)), min_size=2, max_size=40))
def test_auc_invariant_under_increasing_map(pairs):
    s, y = map(np.array, zip(*pairs))
    if len(set(y.tolist())) < 2:
        return
    t = np.exp(s) * 3 + 1
    # the map must stay strictly increasing after rounding on these values
    assume(np.array_equal(np.sign(s[:, None] - s[None, :]), np.sign(t[:, None] - t[None, :])))
    assert roc_auc(s, y).auc == roc_auc(t, y).auc


def test_prediction_ratio_examples():
    r = np.array([1.0, 2.0, 4.0])
    assert prediction_ratio(r, r).ratio == 1.0
    assert prediction_ratio(2 * r, r).ratio == 2.0
    res = prediction_ratio([1.0, 3.0, 5.0, 2.0], [2.0, 3.0, 4.0, 0.0])
    assert res.ratio == pytest.approx((0.5 + 1.0 + 1.25) / 3)
    assert (res.included, res.excluded) == (3, 1)


def test_prediction_ratio_no_valid_pairs():
    with pytest.raises(NoValidPairs):
        prediction_ratio([1.0, 2.0], [0.0, 0.0])


def test_percentile_examples():
    assert percentiles([0, 10, 20, 30, 40]).p50 == 20
    assert percentiles([7] * 5) == percentiles([7])
    s = percentiles(np.arange(101))
    assert (s.p25, s.p50, s.p75) == (25, 50, 75)
    with pytest.raises(EmptySeries):
        percentiles([])


@given(st.lists(st.floats(0, 1e3), min_size=1, max_size=50), st.lists(st.floats(0, 10), min_size=50, max_size=50))
def test_percentiles_monotone(xs, bumps):
    a = np.array(xs)
    b = a + np.array(bumps[: len(a)])
    pa, pb = percentiles(a), percentiles(b)
    assert pa.p25 <= pa.p50 <= pa.p75
    assert pa.p25 <= pb.p25 and pa.p50 <= pb.p50 and pa.p75 <= pb.p75


def _outcome(algo, drive, lost, lat):
    n = len(lost)
    return SimOutcome(algo, drive, np.arange(n), np.full(n, 720), np.array(lost), np.array(lat, float), np.full(n, -1))


def test_compare_report_rows(tmp_path):
    pairs = [
        (_outcome("ANS", f"d{i}", [0, 10, 0], [40, 50, 60]), _outcome("Baseline", f"d{i}", [24, 48, 0], [70, 80, 90]))
        for i in range(3)
    ]
    rows = compare_report(pairs, tmp_path)
    assert len(rows) == 6
    a, b = rows[0], rows[1]
    assert a["latency_p50"] == 50 and b["latency_p50"] == 80
    assert a["loss_p50"] <= b["loss_p50"]
    assert len(json.loads((tmp_path / "compare.json").read_text())) == 6
    assert (tmp_path / "compare.csv").read_text().count("\n") == 7


def test_compare_identical_pairs_identical_summaries():
    o = _outcome("ANS", "d", [1, 2, 3], [10, 20, 30])
    rows = compare_report([(o, o)])
    assert {k: v for k, v in rows[0].items() if k != "algorithm"} == {
        k: v for k, v in rows[1].items() if k != "algorithm"
    }


def test_compare_unpaired():
    with pytest.raises(UnpairedOutcomes):
        compare_report([(_outcome("ANS", "a", [0], [1]), _outcome("Baseline", "b", [0], [1]))])


def test_write_evaluation_files(tmp_path):
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, 40)
    p = np.clip(y * 0.5 + rng.random(40) * 0.5, 0, 1)
    s = write_evaluation(tmp_path, "handover", p, y, 0.7)
    for f in ("confusion.csv", "roc.csv", "percentiles.csv", "summary.json"):
        assert (tmp_path / f).exists()
    assert s["tp"] + s["fn"] == int(y.sum())
    s2 = write_evaluation(tmp_path / "r", "latency", np.array([10.0, 20.0]), np.array([10.0, 40.0]))
    assert s2["prediction_ratio"] == 0.75
    assert (tmp_path / "r" / "ratio.csv").exists()
