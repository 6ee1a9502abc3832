import math

import pytest
from hypothesis import given, strategies as st

from sep.core import MovementLabel, PredictedLabel, PredictionResponse
from sep.errors import ShapeError, UndefinedMetric
from sep.evalkit import (
    RUBRIC_METRICS,
    ConfusionCounts,
    accuracy,
    confusion,
    export_rubric,
    filter_informative,
    mcc,
    metric_report,
)

import oracles
from conftest import window

P, N = PredictedLabel.POSITIVE, PredictedLabel.NEGATIVE
TP, TN = MovementLabel.POSITIVE, MovementLabel.NEGATIVE


def test_worked_example():
    preds = [P, N, PredictedLabel.NEUTRAL, P]
    truths = [TP, TP, TN, TN]
    c = confusion(preds, truths)
    assert (c.tp, c.fn, c.fp, c.tn) == (1, 1, 2, 0)
    # the naive tally agrees
    assert oracles.tabulate([p.value for p in preds], [t.value for t in truths]) == c.to_dict()
    assert accuracy(confusion([P, N, P, N], [TP, TN, TN, TN])) == 0.75


def test_mcc_hand_value():
    c = ConfusionCounts(tp=3, fp=1, tn=2, fn=2)
    assert mcc(c) == pytest.approx(0.2581988897471611, abs=1e-12)
    assert accuracy(c) == 0.625


def test_exclude_mode_drops_non_decisive():
    preds = [P, PredictedLabel.MIXED, PredictedLabel.MALFORMED, N]
    c = confusion(preds, [TP, TP, TN, TN], non_decisive="exclude")
    assert c.to_dict() == {"tp": 1, "fp": 0, "tn": 1, "fn": 0}
    with pytest.raises(ValueError):
        confusion(preds, [TP] * 4, non_decisive="skip")


def test_errors():
    with pytest.raises(ShapeError):
        confusion([P], [TP, TN])
    with pytest.raises(ShapeError):
        confusion([], [])
    with pytest.raises(UndefinedMetric):
        accuracy(ConfusionCounts(0, 0, 0, 0))
    assert mcc(ConfusionCounts(5, 0, 0, 0)) == 0.0


labels = st.sampled_from(list(PredictedLabel))
truth = st.sampled_from(list(MovementLabel))


@given(st.lists(st.tuples(labels, truth), min_size=1, max_size=60))
def test_metrics_match_oracle(rows):
    preds, truths = zip(*rows)
    c = confusion(preds, truths)
    cells = oracles.tabulate([p.value for p in preds], [t.value for t in truths])
    assert c.to_dict() == cells
    assert c.total == len(rows)
    assert math.isclose(accuracy(c), oracles.accuracy(cells), rel_tol=1e-12)
    assert math.isclose(mcc(c), oracles.mcc(cells), rel_tol=1e-12, abs_tol=1e-15)
    assert -1.0 <= mcc(c) <= 1.0


@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_mcc_symmetric_under_class_swap(tp, fp, tn, fn):
    if tp + fp + tn + fn == 0:
        return
    a = mcc(ConfusionCounts(tp, fp, tn, fn))
    assert a == pytest.approx(mcc(ConfusionCounts(tn, fn, tp, fp)), abs=1e-12)


def test_filter_keeps_windows_with_facts_on_the_eve():
    ws = []
    for k in range(10):
        eve = ("news",) if k in (1, 4, 6, 9) else ()
        ws.append(window((("old",),) * 4 + (eve,), start=k))
    kept = filter_informative(ws)
    assert len(kept) == 4 and all(w.eve.informative for w in kept)

    class Sample:
        def __init__(self, w):
            self.window = w

    assert len(filter_informative([Sample(w) for w in ws])) == 4


def test_metric_report_shape():
    r = metric_report([P, N], [TP, TN], filter_name="informative")
    assert r == {"accuracy": 1.0, "mcc": 1.0, "counts": {"tp": 1, "fp": 0, "tn": 1, "fn": 0},
                 "n_samples": 2, "filter": "informative"}


def test_rubric_export():
    w = window()
    pred = PredictionResponse.canonical("Positive", "earnings beat and guidance rose")
    prompts_ = export_rubric(pred, w)
    assert [p.metric for p in prompts_] == [m for m, _ in RUBRIC_METRICS]
    assert len(prompts_) == 10
    for p in prompts_:
        text = p.messages[-1].content
        assert p.metric in text and "earnings beat and guidance rose" in text and "1" in text and "7" in text
        assert all(q in text for q in p.questions)
    bare = export_rubric(PredictionResponse.from_raw("Prediction: Negative"), w)
    assert "(no explanation given)" in bare[0].messages[-1].content
