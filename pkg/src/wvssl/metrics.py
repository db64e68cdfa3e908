"""Metric primitives: micro-averaged AUROC via the rank statistic with tie
correction, micro F1, MAE/RMSE, and the two supervised training losses.

Micro-averaging pools every (sample, class) prediction into one binary
problem before computing the metric.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError, UndefinedMetricError

BCE_EPS = 1e-7


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the average of their rank range."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    n = len(values)
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def micro_auroc(labels, scores) -> float:
    """AUROC of all pooled (sample, class) pairs.

    Equals P(score+ > score-) + 0.5 P(score+ == score-) over positive/negative
    pairs, computed via the Mann-Whitney rank statistic.
    """
    y = np.asarray(labels).ravel()
    s = np.asarray(scores, dtype=np.float64).ravel()
    if y.shape != s.shape:
        raise DataError(f"label/score shape mismatch: {y.shape} vs {s.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise DataError("labels must be binary")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            "AUROC undefined: pooled set needs at least one positive and one negative")
    ranks = _average_ranks(s)
    pos_rank_sum = ranks[y == 1].sum()
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def per_class_auroc(label_matrix, score_matrix, classes=None) -> dict:
    """AUROC per class column; single-class columns are omitted."""
    Y = np.asarray(label_matrix)
    S = np.asarray(score_matrix, dtype=np.float64)
    if Y.shape != S.shape:
        raise DataError(f"shape mismatch: {Y.shape} vs {S.shape}")
    names = list(classes) if classes is not None else list(range(Y.shape[1]))
    out = {}
    for c in range(Y.shape[1]):
        try:
            out[str(names[c])] = micro_auroc(Y[:, c], S[:, c])
        except UndefinedMetricError:
            continue
    return out


def f1_micro(labels, predictions) -> float:
    """Micro-aggregated TP / (TP + 0.5 (FP + FN)) over all pooled pairs."""
    y = np.asarray(labels).ravel()
    p = np.asarray(predictions).ravel()
    if y.shape != p.shape:
        raise DataError(f"label/prediction shape mismatch: {y.shape} vs {p.shape}")
    if not np.all((y == 0) | (y == 1)) or not np.all((p == 0) | (p == 1)):
        raise DataError("f1_micro expects binary labels and binarized predictions")
    tp = int(np.sum((y == 1) & (p == 1)))
    fp = int(np.sum((y == 0) & (p == 1)))
    fn = int(np.sum((y == 1) & (p == 0)))
    if tp + fp + fn == 0:
        raise UndefinedMetricError("F1 undefined: no positives in labels or predictions")
    return tp / (tp + 0.5 * (fp + fn))


def binarize(scores, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(scores, dtype=np.float64) >= threshold).astype(np.int64)


def mae_rmse(targets, predictions) -> tuple:
    y = np.asarray(targets, dtype=np.float64).ravel()
    p = np.asarray(predictions, dtype=np.float64).ravel()
    if y.shape != p.shape:
        raise DataError(f"target/prediction shape mismatch: {y.shape} vs {p.shape}")
    if len(y) == 0:
        raise DataError("empty inputs")
    err = y - p
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err * err)))
    # power-mean inequality; tolerate only float rounding on the boundary
    assert rmse >= mae - 1e-12 * max(1.0, mae)
    return mae, rmse


def classification_loss(labels, probabilities) -> float:
    """Sum over samples and classes of binary cross-entropy.

    Probabilities at exactly 0 or 1 are clamped to [BCE_EPS, 1 - BCE_EPS]
    so perfect predictions yield a finite near-zero loss.
    """
    y = np.asarray(labels, dtype=np.float64)
    p = np.asarray(probabilities, dtype=np.float64)
    if y.shape != p.shape:
        raise DataError(f"shape mismatch: {y.shape} vs {p.shape}")
    if np.any((p < 0) | (p > 1)):
        raise DataError("probabilities outside [0, 1]")
    p = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    return float(-np.sum(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def regression_loss(targets, predictions) -> float:
    """Sum over samples of 0.1 |error| + error^2 (absolute-error term keeps
    gradients alive near zero; the squared term dominates)."""
    y = np.asarray(targets, dtype=np.float64).ravel()
    p = np.asarray(predictions, dtype=np.float64).ravel()
    if y.shape != p.shape:
        raise DataError(f"shape mismatch: {y.shape} vs {p.shape}")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(p))):
        raise DataError("non-finite inputs")
    err = y - p
    return float(np.sum(0.1 * np.abs(err) + err * err))
