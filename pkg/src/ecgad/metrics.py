"""Evaluation metrics: rank-based AUROC, confusion counts, best-F1 threshold
sweep, precision at fixed recall, and the Dice overlap coefficient.

Thresholding convention everywhere: a score is predicted positive iff
score >= threshold. Reported F1/sensitivity/specificity use the best-F1
threshold; the report records that policy.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import DomainError


def _check_two_classes(labels: np.ndarray) -> tuple[int, int]:
    pos = int((labels == 1).sum())
    neg = int((labels == 0).sum())
    if pos == 0 or neg == 0:
        raise DomainError("need at least one positive and one negative label")
    return pos, neg


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC with half credit for ties; invariant to any strictly
    increasing transform of the scores."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos, neg = _check_two_classes(labels)
    ranks = rankdata(scores)  # average ranks handle ties with 0.5 credit
    u = ranks[labels == 1].sum() - pos * (pos + 1) / 2
    return float(u / (pos * neg))


def confusion_at(scores, labels, threshold: float) -> tuple[int, int, int, int]:
    """(TP, FP, TN, FN) with positives predicted at score >= threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pred = scores >= threshold
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    tn = int(np.sum(~pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    return tp, fp, tn, fn


def _sweep(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """For every distinct score value t (descending): TP and FP at threshold t."""
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    tps = np.cumsum(labels[order] == 1)
    fps = np.cumsum(labels[order] == 0)
    # last index of each tie block = counts with threshold at that value
    distinct = np.nonzero(np.diff(sorted_scores, append=-np.inf))[0]
    return sorted_scores[distinct], tps[distinct], fps[distinct]


def f1_best(scores, labels) -> tuple[float, float]:
    """Max F1 over all distinct-score thresholds; ties resolved to the lowest
    threshold achieving the max."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos, _ = _check_two_classes(labels)
    thresholds, tps, fps = _sweep(scores, labels)
    fns = pos - tps
    f1 = 2 * tps / np.maximum(2 * tps + fps + fns, 1)
    best = np.max(f1)
    idx = np.nonzero(f1 == best)[0][-1]  # thresholds descend, last hit = lowest
    return float(best), float(thresholds[idx])


def precision_at_recall(scores, labels, target: float = 0.90) -> float:
    """Precision at the highest threshold whose recall is at least ``target``."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos, _ = _check_two_classes(labels)
    thresholds, tps, fps = _sweep(scores, labels)
    recall = tps / pos
    ok = np.nonzero(recall >= target)[0]
    if ok.size == 0:  # only possible for target > 1
        raise DomainError(f"no threshold reaches recall {target}")
    idx = ok[0]  # thresholds descend: first hit = highest threshold
    return float(tps[idx] / (tps[idx] + fps[idx]))


def dice(pred_mask, true_mask) -> float:
    """2|P & G| / (|P| + |G|); both masks empty counts as perfect overlap."""
    pred = np.asarray(pred_mask).astype(bool)
    true = np.asarray(true_mask).astype(bool)
    if pred.shape != true.shape:
        raise DomainError(f"mask shapes differ: {pred.shape} vs {true.shape}")
    denom = int(pred.sum()) + int(true.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((pred & true).sum()) / denom


@dataclass
class MetricsReport:
    auroc: float
    f1: float
    sensitivity: float
    specificity: float
    precision_at_recall90: float
    threshold_used: float
    tp: int
    fp: int
    tn: int
    fn: int
    threshold_policy: str = "max_f1"
    point_auroc: float | None = None
    dice: float | None = None
    point_threshold: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))


def detection_report(scores, labels, recall_target: float = 0.90) -> MetricsReport:
    """Patient-level report at the best-F1 operating threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    f1, threshold = f1_best(scores, labels)
    tp, fp, tn, fn = confusion_at(scores, labels, threshold)
    return MetricsReport(
        auroc=auroc(scores, labels),
        f1=f1,
        sensitivity=tp / (tp + fn),
        specificity=tn / (tn + fp),
        precision_at_recall90=precision_at_recall(scores, labels, recall_target),
        threshold_used=threshold,
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
    )


def add_localization(report: MetricsReport, point_scores, point_labels) -> MetricsReport:
    """Attach point-level AUROC and Dice (at the best-F1 point threshold)."""
    point_scores = np.asarray(point_scores, dtype=np.float64)
    point_labels = np.asarray(point_labels)
    report.point_auroc = auroc(point_scores, point_labels)
    _, threshold = f1_best(point_scores, point_labels)
    report.point_threshold = threshold
    report.dice = dice(point_scores >= threshold, point_labels == 1)
    return report
