import json

import numpy as np
import pytest

from cyin.metrics import (
    MetricDomainError,
    MetricReport,
    acc7,
    acc7_sample,
    accuracy,
    binary_f1,
    classification_report,
    mae,
    pearson_corr,
    regression_report,
    weighted_f1,
)


def test_acc7_perfect():
    y = np.array([-3.0, -1.2, 0.0, 2.7])
    assert acc7(y, y) == 1.0
    assert acc7_sample(y, y) == 1.0


def test_acc7_rounding():
    assert acc7([2.4], [2.0]) == 1.0
    assert acc7([2.6], [2.0]) == 0.0
    # half rounds away from zero
    assert acc7([1.5], [2.0]) == 1.0
    assert acc7([-1.5], [-2.0]) == 1.0


def test_acc7_class_balanced_example():
    labels = np.array([-3.0, -3.0, 0.0, 3.0])
    preds = np.array([-3.0, -2.0, 0.0, 3.0])
    assert acc7(preds, labels) == pytest.approx(2.5 / 3)
    assert acc7_sample(preds, labels) == pytest.approx(0.75)


def test_acc7_clamps_predictions():
    assert acc7([5.0], [3.0]) == 1.0
    assert acc7([-9.0], [-3.0]) == 1.0


def test_binary_f1_perfect_and_worst():
    labels = np.array([-1.0, -0.5, 0.5, 2.0])
    assert binary_f1(labels, labels) == 1.0
    assert binary_f1(np.array([1.0, 1.0]), np.array([-1.0, -2.0])) == 0.0


def test_binary_f1_hand_example():
    labels = np.array([-1.0, -1.0, 1.0])
    preds = np.array([-1.0, 1.0, 1.0])
    assert binary_f1(preds, labels) == pytest.approx(2 / 3)


def test_binary_f1_zero_counts_nonnegative():
    # a zero label lands in the non-negative class
    assert binary_f1(np.array([0.5]), np.array([0.0])) == 1.0


def test_mae_and_corr_basics():
    y = np.array([0.0, 1.0, 2.0])
    assert mae(y, y) == 0.0
    assert pearson_corr(y, y) == pytest.approx(1.0)
    assert pearson_corr(-y, y) == pytest.approx(-1.0)


def test_mae_corr_hand_example():
    preds = np.array([0.0, 1.0, 2.0])
    labels = np.array([0.0, 2.0, 4.0])
    assert mae(preds, labels) == pytest.approx(1.0)
    assert pearson_corr(preds, labels) == pytest.approx(1.0)


def test_corr_zero_variance_is_domain_error():
    with pytest.raises(MetricDomainError):
        pearson_corr(np.array([1.0, 1.0, 1.0]), np.array([0.0, 1.0, 2.0]))


def test_corr_affine_invariance():
    rng = np.random.default_rng(0)
    for _ in range(100):
        y = rng.standard_normal(20)
        p = rng.standard_normal(20)
        a = rng.uniform(0.1, 5.0)
        b = rng.uniform(-3, 3)
        assert pearson_corr(a * p + b, y) == pytest.approx(pearson_corr(p, y), abs=1e-9)


def test_metrics_permutation_invariant():
    rng = np.random.default_rng(1)
    y = rng.uniform(-3, 3, size=40)
    p = rng.uniform(-3, 3, size=40)
    perm = rng.permutation(40)
    assert acc7(p, y) == pytest.approx(acc7(p[perm], y[perm]))
    assert binary_f1(p, y) == pytest.approx(binary_f1(p[perm], y[perm]))
    assert mae(p, y) == pytest.approx(mae(p[perm], y[perm]))
    assert pearson_corr(p, y) == pytest.approx(pearson_corr(p[perm], y[perm]))


def test_accuracy_and_weighted_f1_perfect():
    y = np.array([0, 1, 2, 1])
    assert accuracy(y, y) == 1.0
    assert weighted_f1(y, y, 3) == 1.0
    assert accuracy(np.array([2]), np.array([2])) == 1.0
    assert weighted_f1(np.array([2]), np.array([2]), 3) == 1.0


def test_weighted_f1_hand_example():
    labels = np.array([0, 0, 1, 2])
    preds = np.array([0, 1, 1, 1])
    assert accuracy(preds, labels) == 0.5
    # class 0: P=1, R=1/2, F1=2/3; class 1: P=1/3, R=1, F1=1/2; class 2: F1=0
    # weighted by support: 1/2 * 2/3 + 1/4 * 1/2 + 1/4 * 0 = 11/24
    assert weighted_f1(preds, labels, 3) == pytest.approx(11 / 24)


def test_weighted_f1_bounds():
    rng = np.random.default_rng(3)
    for _ in range(20):
        y = rng.integers(0, 4, size=30)
        p = rng.integers(0, 4, size=30)
        wf1 = weighted_f1(p, y, 4)
        assert 0.0 <= wf1 <= 1.0


def test_weighted_f1_range_check():
    with pytest.raises(MetricDomainError):
        weighted_f1(np.array([4]), np.array([0]), 3)


def test_empty_inputs_rejected():
    with pytest.raises(MetricDomainError):
        mae(np.array([]), np.array([]))


def test_report_serialization():
    rep = regression_report(np.array([0.0, 1.0]), np.array([0.0, 2.0]), "random:0.3", 7)
    doc = json.loads(rep.to_json())
    assert doc["protocol"] == "random:0.3"
    assert doc["seed"] == 7
    assert set(doc["metrics"]) == {"acc7", "acc7_sample", "binary_f1", "mae", "corr"}
    row = rep.csv_row(["mae", "corr"])
    assert row[0] == "random:0.3" and row[1] == 7


def test_classification_report_contents():
    rep = classification_report(np.array([0, 1]), np.array([0, 0]), 2, "complete", 0)
    assert rep.metrics["accuracy"] == 0.5
    assert 0.0 <= rep.metrics["weighted_f1"] <= 1.0
