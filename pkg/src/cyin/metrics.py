"""Evaluation metrics: seven-bin accuracy, binary F1, MAE, Pearson correlation
for regression; top-1 accuracy and support-weighted F1 for classification."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

REGRESSION_METRICS = ("acc7", "acc7_sample", "binary_f1", "mae", "corr")
CLASSIFICATION_METRICS = ("accuracy", "weighted_f1")


class MetricDomainError(ValueError):
    pass


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def acc7(preds, labels) -> float:
    """Class-balanced seven-bin accuracy over rounded scores in [-3, 3].

    Predictions are clamped to [-3, 3], both sides rounded half away from
    zero; per-bin recall is averaged over the bins that actually occur in
    the labels (empty bins are excluded from the mean).
    """
    preds, labels = _check_nonempty(preds, labels)
    p = _round_half_away(np.clip(preds, -3, 3))
    y = _round_half_away(np.clip(labels, -3, 3))
    recalls = []
    for k in range(-3, 4):
        in_bin = y == k
        if in_bin.any():
            recalls.append((p[in_bin] == k).mean())
    return float(np.mean(recalls))


def acc7_sample(preds, labels) -> float:
    """Sample-mean seven-bin accuracy (fraction of matching rounded bins)."""
    preds, labels = _check_nonempty(preds, labels)
    p = _round_half_away(np.clip(preds, -3, 3))
    y = _round_half_away(np.clip(labels, -3, 3))
    return float((p == y).mean())


def binary_f1(preds, labels) -> float:
    """Support-weighted binary F1 after splitting at zero (>= 0 counts positive)."""
    preds, labels = _check_nonempty(preds, labels)
    p = np.asarray(preds) >= 0
    y = np.asarray(labels) >= 0
    n = len(y)
    total = 0.0
    for cls in (False, True):
        support = (y == cls).sum()
        if support == 0:
            continue
        tp = ((p == cls) & (y == cls)).sum()
        fp = ((p == cls) & (y != cls)).sum()
        fn = ((p != cls) & (y == cls)).sum()
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        total += (support / n) * f1
    return float(total)


def mae(preds, labels) -> float:
    preds, labels = _check_nonempty(preds, labels)
    return float(np.mean(np.abs(preds - labels)))


def pearson_corr(preds, labels) -> float:
    preds, labels = _check_nonempty(preds, labels)
    pc = preds - preds.mean()
    yc = labels - labels.mean()
    denom = np.sqrt((pc**2).sum() * (yc**2).sum())
    if denom == 0:
        raise MetricDomainError("correlation undefined: zero variance input")
    return float((pc * yc).sum() / denom)


def accuracy(pred_classes, label_classes) -> float:
    p, y = _check_nonempty(pred_classes, label_classes)
    return float((p == y).mean())


def weighted_f1(pred_classes, label_classes, num_classes: int) -> float:
    p, y = _check_nonempty(pred_classes, label_classes)
    if ((p < 0) | (p >= num_classes) | (y < 0) | (y >= num_classes)).any():
        raise MetricDomainError(f"class index out of range [0, {num_classes})")
    n = len(y)
    total = 0.0
    for cls in range(num_classes):
        support = (y == cls).sum()
        if support == 0:
            continue
        tp = ((p == cls) & (y == cls)).sum()
        fp = ((p == cls) & (y != cls)).sum()
        fn = ((p != cls) & (y == cls)).sum()
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        total += (support / n) * f1
    return float(total)


def _check_nonempty(a, b):
    a = np.asarray(a, dtype=float) if np.asarray(a).dtype.kind == "f" else np.asarray(a)
    b = np.asarray(b, dtype=float) if np.asarray(b).dtype.kind == "f" else np.asarray(b)
    if a.size == 0 or b.size == 0:
        raise MetricDomainError("metrics require nonempty inputs")
    if a.shape != b.shape:
        raise MetricDomainError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


@dataclass
class MetricReport:
    """Named metric values for one evaluation under one protocol."""

    metrics: dict[str, float]
    protocol: str
    seed: int
    extra: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {"protocol": self.protocol, "seed": self.seed, "metrics": self.metrics, **self.extra},
            sort_keys=True,
        )

    def csv_row(self, columns: list[str]) -> list:
        return [self.protocol, self.seed] + [self.metrics.get(c, "") for c in columns]


def regression_report(preds, labels, protocol: str, seed: int) -> MetricReport:
    return MetricReport(
        metrics={
            "acc7": acc7(preds, labels),
            "acc7_sample": acc7_sample(preds, labels),
            "binary_f1": binary_f1(preds, labels),
            "mae": mae(preds, labels),
            "corr": pearson_corr(preds, labels),
        },
        protocol=protocol,
        seed=seed,
    )


def classification_report(pred_classes, label_classes, num_classes: int, protocol: str, seed: int) -> MetricReport:
    return MetricReport(
        metrics={
            "accuracy": accuracy(pred_classes, label_classes),
            "weighted_f1": weighted_f1(pred_classes, label_classes, num_classes),
        },
        protocol=protocol,
        seed=seed,
    )
