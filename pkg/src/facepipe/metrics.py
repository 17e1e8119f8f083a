"""Confusion-matrix construction and summary metrics.

Covers overall accuracy, per-class sensitivity (recall), its unweighted
and support-weighted means, and the sample standard deviation across
per-class sensitivities. Zero-support classes are excluded from the
means and the SD rather than counted as zero.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # (K, K) int64; rows = true class, cols = predicted
    classes: tuple

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def support(self, label) -> int:
        return int(self.counts[self.classes.index(label)].sum())


def confusion(pairs, classes) -> ConfusionMatrix:
    """Tally (predicted, true) pairs into a matrix over `classes`."""
    classes = tuple(classes)
    index = {label: i for i, label in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for predicted, true in pairs:
        if true not in index:
            raise ValueError(f"unknown true label {true!r}")
        if predicted not in index:
            raise ValueError(f"unknown predicted label {predicted!r}")
        counts[index[true], index[predicted]] += 1
    return ConfusionMatrix(counts=counts, classes=classes)


def sensitivities(cm: ConfusionMatrix) -> dict:
    """Per-class recall for every class with support > 0."""
    result = {}
    for i, label in enumerate(cm.classes):
        support = int(cm.counts[i].sum())
        if support > 0:
            result[label] = float(cm.counts[i, i]) / support
    return result


def excluded_classes(cm: ConfusionMatrix) -> list:
    return [label for i, label in enumerate(cm.classes) if int(cm.counts[i].sum()) == 0]


def accuracy(cm: ConfusionMatrix) -> float:
    total = cm.total
    if total == 0:
        raise ValueError("confusion matrix is empty")
    return float(np.trace(cm.counts)) / total


def mean_sensitivity(cm: ConfusionMatrix) -> float:
    """Unweighted mean of per-class sensitivities (ignores imbalance)."""
    sens = sensitivities(cm)
    if not sens:
        raise ValueError("no class has support")
    return sum(sens.values()) / len(sens)


def weighted_sensitivity(cm: ConfusionMatrix, mode: str) -> float:
    """Weighted mean of sensitivities: 'uniform' or by class 'support'.

    Support weighting is algebraically the overall accuracy.
    """
    if mode == "uniform":
        return mean_sensitivity(cm)
    if mode == "support":
        sens = sensitivities(cm)
        if not sens:
            raise ValueError("no class has support")
        total = cm.total
        return sum(cm.support(label) / total * s for label, s in sens.items())
    raise ValueError(f"mode must be 'uniform' or 'support', got {mode!r}")


def sensitivity_sd(cm: ConfusionMatrix) -> float:
    """Sample standard deviation (n-1) across per-class sensitivities."""
    sens = list(sensitivities(cm).values())
    if len(sens) < 2:
        raise ValueError("need at least 2 classes with support")
    mean = sum(sens) / len(sens)
    return math.sqrt(sum((s - mean) ** 2 for s in sens) / (len(sens) - 1))


@dataclass(frozen=True)
class MetricsReport:
    classes: tuple
    accuracy: float
    per_class_sensitivity: dict
    support: dict
    mean_sensitivity: float
    weighted_sensitivity: dict  # mode tag -> value
    sensitivity_sd: float
    excluded_classes: list


def build_report(cm: ConfusionMatrix) -> MetricsReport:
    """All summary metrics of one confusion matrix."""
    return MetricsReport(
        classes=cm.classes,
        accuracy=accuracy(cm),
        per_class_sensitivity=sensitivities(cm),
        support={label: cm.support(label) for label in cm.classes},
        mean_sensitivity=mean_sensitivity(cm),
        weighted_sensitivity={
            "uniform": weighted_sensitivity(cm, "uniform"),
            "support": weighted_sensitivity(cm, "support"),
        },
        sensitivity_sd=sensitivity_sd(cm),
        excluded_classes=excluded_classes(cm),
    )


def _label_name(label) -> str:
    return getattr(label, "value", str(label))


def report_to_json(report: MetricsReport, label: str = "") -> str:
    obj = {
        "label": label,
        "classes": [_label_name(c) for c in report.classes],
        "accuracy": report.accuracy,
        "per_class_sensitivity": {
            _label_name(c): s for c, s in report.per_class_sensitivity.items()
        },
        "support": {_label_name(c): n for c, n in report.support.items()},
        "mean_sensitivity": report.mean_sensitivity,
        "weighted_sensitivity": report.weighted_sensitivity,
        "sensitivity_sd": report.sensitivity_sd,
        "excluded_classes": [_label_name(c) for c in report.excluded_classes],
    }
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def report_csv_header(classes) -> list[str]:
    return ["label", "accuracy", *[_label_name(c) for c in classes],
            "balanced_accuracy", "mean_sensitivity", "sensitivity_sd"]


def report_csv_row(report: MetricsReport, label: str = "") -> list[str]:
    """One row in results-table column order: accuracy, per-class
    sensitivities, balanced accuracy (uniform mode), mean sensitivity, SD."""
    cells = [label, repr(report.accuracy)]
    for c in report.classes:
        s = report.per_class_sensitivity.get(c)
        cells.append("" if s is None else repr(s))
    cells.append(repr(report.weighted_sensitivity["uniform"]))
    cells.append(repr(report.mean_sensitivity))
    cells.append(repr(report.sensitivity_sd))
    return cells


def report_to_csv(report: MetricsReport, label: str = "") -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(report_csv_header(report.classes))
    writer.writerow(report_csv_row(report, label))
    return out.getvalue()
