from typing import Dict, Optional, Sequence

import numpy as np

from core.errors import EvaluationError


def _labels(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.int64).reshape(-1)
    if arr.size == 0:
        raise EvaluationError(f"{name} is empty")
    return arr


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    t, p = _labels(y_true, "y_true"), _labels(y_pred, "y_pred")
    if t.size != p.size:
        raise EvaluationError(f"{t.size} true labels vs {p.size} predictions")
    if t.min() < 0 or p.min() < 0 or t.max() >= num_classes or p.max() >= num_classes:
        raise EvaluationError(f"labels must lie in [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def per_class_f1(cm: np.ndarray) -> np.ndarray:
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    actual = cm.sum(axis=1).astype(np.float64)
    denom = predicted + actual
    # 2tp / (2tp + fp + fn); 0 where the class never occurs in either
    return np.divide(2.0 * tp, denom, out=np.zeros_like(tp), where=denom > 0)


def weighted_f1(y_true, y_pred, num_classes: int) -> float:
    """Per-class F1 averaged with weights = class support / total."""
    cm = confusion_matrix(y_true, y_pred, num_classes)
    support = cm.sum(axis=1).astype(np.float64)
    return float((per_class_f1(cm) * support).sum() / support.sum())


def accuracy(y_true, y_pred) -> float:
    t, p = _labels(y_true, "y_true"), _labels(y_pred, "y_pred")
    return float((t == p).mean())


def bmi_mae(preds, targets) -> float:
    p = np.asarray(preds, dtype=np.float64).reshape(-1)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if p.size != t.size or p.size == 0:
        raise EvaluationError(f"bmi_mae needs equal nonempty inputs, got {p.size} and {t.size}")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(t))):
        raise EvaluationError("bmi_mae: non-finite values")
    return float(np.abs(p - t).mean())


def argmax_lowest(probs: np.ndarray) -> np.ndarray:
    """Row-wise argmax; exact ties resolve to the lowest class index."""
    return np.asarray(probs).argmax(axis=-1)


def constant_predictor_f1(y_true, num_classes: int, predicted_class: Optional[int] = None) -> float:
    """Weighted F1 of always predicting one class (the majority class by default)."""
    t = _labels(y_true, "y_true")
    counts = np.bincount(t, minlength=num_classes)
    c = int(counts.argmax()) if predicted_class is None else int(predicted_class)
    share = counts[c] / t.size
    return float(share * 2.0 * counts[c] / (counts[c] + t.size))


def mean_or_nan(values: Sequence[float]) -> float:
    vals = [v for v in values if v == v]
    return float(np.mean(vals)) if vals else float("nan")


def summarize_scores(scores: Dict[str, float]) -> Dict[str, float]:
    out = {k: float(v) for k, v in scores.items()}
    out["mean"] = mean_or_nan(list(out.values()))
    return out
