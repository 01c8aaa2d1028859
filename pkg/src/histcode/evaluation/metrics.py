"""Classification and correlation metrics."""

from __future__ import annotations

import numpy as np

from ..errors import ConstantVector, SingleClass, TooFewValues


def midranks(x) -> np.ndarray:
    """1-based ranks with tied values sharing the average of their positions."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x), dtype=np.float64)
    start = 0
    for end in np.append(np.flatnonzero(np.diff(xs) != 0) + 1, len(x)):
        ranks[order[start:end]] = 0.5 * (start + 1 + end)
        start = end
    return ranks


def _binary(labels, scores):
    y = np.asarray(labels).astype(int).ravel()
    s = np.asarray(scores, dtype=np.float64).ravel()
    if y.shape != s.shape:
        raise ValueError("labels and scores must have the same length")
    if not set(np.unique(y)) <= {0, 1}:
        raise ValueError("labels must be 0/1")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        raise SingleClass("ROC/PR metrics need both classes")
    return y, s


def roc_auc(labels, scores) -> float:
    """Mann-Whitney U over n_pos * n_neg, ties counted as one half."""
    y, s = _binary(labels, scores)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    u = midranks(s)[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _cumulative_counts(y, s):
    order = np.argsort(-s, kind="mergesort")
    ys, ss = y[order], s[order]
    last = np.append(np.flatnonzero(np.diff(ss) != 0), len(ss) - 1)
    tp = np.cumsum(ys)[last]
    fp = (last + 1) - tp
    return tp, fp, ss[last]


def roc_points(labels, scores):
    """``(fpr, tpr, thresholds)`` at each distinct score, starting from (0, 0)."""
    y, s = _binary(labels, scores)
    tp, fp, thr = _cumulative_counts(y, s)
    fpr = np.concatenate([[0.0], fp / (len(y) - y.sum())])
    tpr = np.concatenate([[0.0], tp / y.sum()])
    return fpr, tpr, np.concatenate([[np.inf], thr])


def pr_points(labels, scores):
    """``(recall, precision, thresholds)``; starts at recall 0, precision 1."""
    y, s = _binary(labels, scores)
    tp, fp, thr = _cumulative_counts(y, s)
    recall = np.concatenate([[0.0], tp / y.sum()])
    precision = np.concatenate([[1.0], tp / (tp + fp)])
    return recall, precision, np.concatenate([[np.inf], thr])


def predict_labels(probs, threshold: float = 0.5) -> np.ndarray:
    # strict: p == 0.5 goes to class 0, as argmax over two equal logits does
    return (np.asarray(probs, dtype=np.float64) > threshold).astype(int)


def confusion(labels, preds) -> np.ndarray:
    """2x2 counts ``[[tn, fp], [fn, tp]]``."""
    y = np.asarray(labels).astype(int)
    p = np.asarray(preds).astype(int)
    out = np.zeros((2, 2), dtype=np.int64)
    np.add.at(out, (y, p), 1)
    return out


def accuracy(labels, probs, threshold: float = 0.5) -> float:
    y = np.asarray(labels).astype(int)
    if len(y) == 0:
        raise ValueError("accuracy of an empty set")
    return float(np.mean(predict_labels(probs, threshold) == y))


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("pearson needs two aligned vectors of length >= 2")
    xc, yc = x - x.mean(), y - y.mean()
    nx, ny = np.sqrt(xc @ xc), np.sqrt(yc @ yc)
    if nx == 0 or ny == 0:
        raise ConstantVector("correlation with a constant vector is undefined")
    return float(np.clip((xc @ yc) / (nx * ny), -1.0, 1.0))


def spearman(x, y) -> float:
    return pearson(midranks(x), midranks(y))


def random_baseline(real_values, n_draws: int, seed) -> np.ndarray:
    """Uniform draws between the 5th and 95th percentiles of ``real_values``."""
    real = np.asarray(real_values, dtype=np.float64).ravel()
    if len(real) < 20:
        raise TooFewValues(f"need at least 20 values for percentile bounds, got {len(real)}")
    lo, hi = np.percentile(real, [5, 95])
    return np.random.default_rng(seed).uniform(lo, hi, size=n_draws)
