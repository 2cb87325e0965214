"""Precision-recall curves and their area."""
from typing import Iterable, Sequence

import numpy as np

from stereosparse.core.errors import DomainError, ShapeError
from stereosparse.models.evaluation import PRCurve
from stereosparse.models.network import DetectionGrid

def pr_curve(scores: np.ndarray, labels: np.ndarray) -> PRCurve:
    """Sweep every distinct score as a threshold, highest first; tied scores form one point."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if scores.shape != labels.shape:
        raise ShapeError(f"scores shape {scores.shape} does not match labels shape {labels.shape}")
    positives = int(np.sum(labels > 0))
    if positives == 0:
        raise DomainError("precision-recall is undefined without positive labels")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], (labels[order] > 0).astype(np.int64)
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[ends]
    predicted = ends + 1
    return PRCurve(recall=tp / positives, precision=tp / predicted, thresholds=s[ends],
                   positive_count=positives, total_count=int(scores.size))

def auc(curve: PRCurve) -> float:
    """Trapezoidal area over recall; the first point's precision is extended back to recall 0."""
    recall = np.r_[0.0, curve.recall]
    precision = np.r_[curve.precision[0], curve.precision]
    return float(np.sum(np.diff(recall) * (precision[1:] + precision[:-1]) / 2.0))

def grid_auc(grids: Sequence[DetectionGrid]) -> float:
    """PR-AUC over every window of labelled detection grids."""
    if any(g.labels is None for g in grids):
        raise DomainError("every detection grid needs labels to be scored")
    scores = np.concatenate([g.probs.ravel() for g in grids])
    labels = np.concatenate([g.labels.ravel() for g in grids])
    return auc(pr_curve(scores, labels))

def positive_fraction(labels: Iterable[np.ndarray]) -> float:
    """Chance-level PR-AUC: the share of positive windows."""
    flat = np.concatenate([np.asarray(l, dtype=np.float64).ravel() for l in labels])
    if flat.size == 0:
        raise DomainError("no labels to count")
    return float(np.sum(flat > 0)) / flat.size
