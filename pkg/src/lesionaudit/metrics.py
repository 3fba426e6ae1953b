"""Accuracy, recall, ROC-AUC and confusion matrices."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class MetricsBundle:
    accuracy: float
    auc: float
    recall: float
    per_class_recall: tuple[float, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_class_recall"] = [None if np.isnan(v) else v for v in self.per_class_recall]
        return d


def confusion(preds, truth, k: int) -> np.ndarray:
    """K×K counts; rows are true classes, columns predicted."""
    preds = np.asarray(preds, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if preds.shape != truth.shape:
        raise MetricsError(f"length mismatch: {preds.shape[0]} predictions vs {truth.shape[0]} labels")
    for name, arr in (("prediction", preds), ("label", truth)):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise MetricsError(f"{name} outside 0..{k - 1}")
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (truth, preds), 1)
    return cm


def accuracy(cm: np.ndarray) -> float:
    total = cm.sum()
    if total == 0:
        raise MetricsError("empty confusion matrix")
    return float(np.trace(cm) / total)


def per_class_recall(cm: np.ndarray) -> np.ndarray:
    """Diagonal over row sums; NaN for classes absent from the truth."""
    if cm.sum() == 0:
        raise MetricsError("empty confusion matrix")
    rows = cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(rows > 0, np.diag(cm) / np.maximum(rows, 1), np.nan)


def recall(cm: np.ndarray, positive: int | None = 1, averaging: str = "macro") -> float:
    """Binary recall TP/(TP+FN) for ``positive``, or the macro mean when ``positive`` is None."""
    per = per_class_recall(cm)
    if positive is not None:
        if cm.sum(axis=1)[positive] == 0:
            return 0.0
        return float(per[positive])
    if averaging != "macro":
        raise MetricsError(f"unsupported averaging {averaging!r}")
    return float(np.nanmean(per))


def roc_auc_binary(scores, truth) -> float:
    """P(positive outscores negative) + ½·P(tie), via midranks of the pooled scores."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    truth = np.asarray(truth).ravel().astype(bool)
    if scores.shape != truth.shape:
        raise MetricsError("scores and labels differ in length")
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricsError("AUC needs both classes present")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    # tie groups: boundaries where the sorted value changes
    starts = np.flatnonzero(np.r_[True, sorted_scores[1:] != sorted_scores[:-1]])
    ends = np.r_[starts[1:], sorted_scores.size]
    midranks = (starts + ends + 1) / 2.0  # average of 1-based ranks start+1..end
    ranks = np.empty(scores.size)
    ranks[order] = np.repeat(midranks, ends - starts)
    u = ranks[truth].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_auc_multiclass(probs, truth) -> float:
    """Macro one-vs-rest AUC over the classes present in ``truth``."""
    probs = np.asarray(probs, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    present = np.unique(truth)
    if present.size < 2:
        raise MetricsError("multiclass AUC needs at least two classes present")
    return float(np.mean([roc_auc_binary(probs[:, c], truth == c) for c in present]))


def bundle(probs, truth, threshold: float = 0.5) -> MetricsBundle:
    """Headline metrics from B×K probabilities (K=1 means binary)."""
    probs = np.asarray(probs, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    if probs.ndim == 1:
        probs = probs[:, None]
    if probs.shape[1] == 1:
        preds = (probs[:, 0] >= threshold).astype(np.int64)
        cm = confusion(preds, truth, 2)
        return MetricsBundle(accuracy(cm), roc_auc_binary(probs[:, 0], truth), recall(cm, positive=1),
                             tuple(float(v) for v in per_class_recall(cm)))
    preds = probs.argmax(axis=1)
    cm = confusion(preds, truth, probs.shape[1])
    return MetricsBundle(accuracy(cm), roc_auc_multiclass(probs, truth), recall(cm, positive=None),
                         tuple(float(v) for v in per_class_recall(cm)))
