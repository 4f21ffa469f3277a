"""Segmentation metrics from pooled confusion counts.

Counting happens once into an integer confusion matrix; every score is then
derived from those counts with plain expressions, so results are identical
no matter how the pixels were batched. Pixels labelled 255 in the ground
truth and pixels outside the validity mask never enter the counts.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, LabelDomainError, UndefinedMetricError
from .raster import IGNORE_VALUE

DELINEATION_CLASS_NAMES = ("unburned", "burned")


def confusion_matrix(
    pred: np.ndarray, gt: np.ndarray, valid: np.ndarray, n_classes: int
) -> np.ndarray:
    """(K, K) integer counts, rows = ground truth class, cols = prediction.

    Only pixels with valid == True and gt != 255 are counted. Predictions
    must already be class ids below n_classes.
    """
    if pred.shape != gt.shape or valid.shape != gt.shape:
        raise DimensionError(
            f"shape mismatch: pred {pred.shape}, gt {gt.shape}, valid {valid.shape}"
        )
    if valid.dtype != np.bool_:
        raise DimensionError(f"validity mask must be boolean, got {valid.dtype}")
    mask = valid & (gt != IGNORE_VALUE)
    p = pred[mask].astype(np.int64)
    g = gt[mask].astype(np.int64)
    if p.size and (p.min() < 0 or p.max() >= n_classes):
        raise LabelDomainError(
            f"prediction values must be in [0, {n_classes}), found {int(p.max())}"
        )
    if g.size and (g.min() < 0 or g.max() >= n_classes):
        raise LabelDomainError(
            f"ground-truth values must be in [0, {n_classes}) or 255, "
            f"found {int(g.max())}"
        )
    counts = np.bincount(g * n_classes + p, minlength=n_classes * n_classes)
    return counts.reshape(n_classes, n_classes)


def per_class_scores(cm: np.ndarray) -> dict:
    """Precision/recall/F1/IoU per class, zero where undefined.

    All scores are computed directly from the integer counts: F1 as
    2*tp / (2*tp + fp + fn) and IoU as tp / (tp + fp + fn).
    """
    k = cm.shape[0]
    out = {
        "precision": [],
        "recall": [],
        "f1": [],
        "iou": [],
        "support_gt": [],
        "support_pred": [],
    }
    for c in range(k):
        tp = int(cm[c, c])
        sg = int(cm[c].sum())
        sp = int(cm[:, c].sum())
        fp = sp - tp
        fn = sg - tp
        out["support_gt"].append(sg)
        out["support_pred"].append(sp)
        out["precision"].append(tp / sp if sp > 0 else 0.0)
        out["recall"].append(tp / sg if sg > 0 else 0.0)
        out["f1"].append(2 * tp / (2 * tp + fp + fn) if tp + fp + fn > 0 else 0.0)
        out["iou"].append(tp / (tp + fp + fn) if tp + fp + fn > 0 else 0.0)
    return out


def macro_scores(cm: np.ndarray) -> dict:
    """Macro-average F1 and IoU over classes that actually occur.

    A class enters the average when it has ground-truth or predicted
    support; classes absent from both are skipped rather than diluting the
    mean with zeros. Raises UndefinedMetricError when nothing was counted.
    """
    per = per_class_scores(cm)
    included = [
        c
        for c in range(cm.shape[0])
        if per["support_gt"][c] > 0 or per["support_pred"][c] > 0
    ]
    if not included:
        raise UndefinedMetricError("no class has any support; macro scores undefined")
    macro_f1 = sum(per["f1"][c] for c in included) / len(included)
    macro_iou = sum(per["iou"][c] for c in included) / len(included)
    return {"macro_f1": macro_f1, "macro_iou": macro_iou, "included": included}


def evaluate_segmentation(
    pred: np.ndarray, gt: np.ndarray, valid: np.ndarray, n_classes: int
) -> dict:
    """One-call report: confusion, per-class scores, macro averages."""
    cm = confusion_matrix(pred, gt, valid, n_classes)
    report = {"confusion": cm.tolist(), "per_class": per_class_scores(cm)}
    report.update(macro_scores(cm))
    return report


def evaluate_delineation(pred: np.ndarray, gt: np.ndarray, valid: np.ndarray) -> dict:
    """Binary burned/unburned report with named class entries."""
    report = evaluate_segmentation(pred, gt, valid, 2)
    per = report["per_class"]
    for i, name in enumerate(DELINEATION_CLASS_NAMES):
        report[f"f1_{name}"] = per["f1"][i]
        report[f"iou_{name}"] = per["iou"][i]
    return report


def summarize_values(values: list[float]) -> dict:
    """Mean and sample standard deviation (ddof=1; zero for a single value)."""
    if not values:
        raise UndefinedMetricError("cannot summarize an empty list of values")
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return {"mean": float(arr.mean()), "std": std, "n": int(arr.size)}
