"""
Segmentation and classification metrics
"""

from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd

from .data import IGNORE_INDEX


def confusion_matrix(pred: np.ndarray, true: np.ndarray, num_classes: int,
                     ignore_index: Optional[int] = IGNORE_INDEX) -> np.ndarray:
    """
    [K, K] counts with rows = ground truth, columns = prediction

    Pixels whose truth equals ignore_index are skipped.

    Raises:
        ValueError: shape mismatch or a label outside [0, K)
    """
    pred, true = np.asarray(pred), np.asarray(true)
    if pred.shape != true.shape:
        raise ValueError(f"prediction {pred.shape} and truth {true.shape} differ in shape")
    keep = np.ones(true.shape, dtype=bool) if ignore_index is None else true != ignore_index
    p, t = pred[keep].astype(np.int64), true[keep].astype(np.int64)
    for name, arr in (("prediction", p), ("truth", t)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"{name} labels must lie in [0, {num_classes}), got [{arr.min()}, {arr.max()}]")
    count = np.bincount(num_classes * t + p, minlength=num_classes ** 2)
    return count.reshape(num_classes, num_classes)


def iou_from_confusion(conf: np.ndarray) -> Tuple[np.ndarray, float]:
    """Per-class IoU (nan where a class is absent from both sides) and their nan-mean"""
    intersection = np.diag(conf).astype(np.float64)
    union = conf.sum(axis=0) + conf.sum(axis=1) - np.diag(conf)
    with np.errstate(divide="ignore", invalid="ignore"):
        per_class = np.where(union > 0, intersection / np.maximum(union, 1), np.nan)
    present = ~np.isnan(per_class)
    mean = float(per_class[present].mean()) if present.any() else float("nan")
    return per_class, mean


def miou(pred_mask: np.ndarray, true_mask: np.ndarray, num_classes: int,
         ignore_index: Optional[int] = IGNORE_INDEX) -> Tuple[np.ndarray, float]:
    """(per_class_iou, mean_iou); classes absent from prediction and truth are left out of the mean"""
    return iou_from_confusion(confusion_matrix(pred_mask, true_mask, num_classes, ignore_index))


def pixel_accuracy(pred_mask: np.ndarray, true_mask: np.ndarray,
                   ignore_index: Optional[int] = IGNORE_INDEX) -> float:
    pred_mask, true_mask = np.asarray(pred_mask), np.asarray(true_mask)
    keep = np.ones(true_mask.shape, dtype=bool) if ignore_index is None else true_mask != ignore_index
    total = int(keep.sum())
    if total == 0:
        return float("nan")
    return float((pred_mask[keep] == true_mask[keep]).sum() / total)


def top1(logits: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose arg-max equals the label"""
    logits, labels = np.asarray(logits), np.asarray(labels)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ValueError(f"top1 expects logits [B, K] and labels [B], got {logits.shape} and {labels.shape}")
    return float((logits.argmax(axis=-1) == labels).mean())


class SegmentationMeter:
    """Accumulates a confusion matrix over batches"""

    def __init__(self, num_classes: int, ignore_index: Optional[int] = IGNORE_INDEX):
        self.num_classes = num_classes
        self.ignore_index = ignore_index
        self.confusion = np.zeros((num_classes, num_classes), dtype=np.int64)

    def add_batch(self, pred: np.ndarray, true: np.ndarray) -> None:
        self.confusion += confusion_matrix(pred, true, self.num_classes, self.ignore_index)

    def pixel_accuracy(self) -> float:
        total = self.confusion.sum()
        return float(np.diag(self.confusion).sum() / total) if total else float("nan")

    def per_class_iou(self) -> np.ndarray:
        return iou_from_confusion(self.confusion)[0]

    def mean_iou(self) -> float:
        return iou_from_confusion(self.confusion)[1]

    def summary(self) -> Dict[str, float]:
        return {"miou": self.mean_iou(), "pixel_accuracy": self.pixel_accuracy()}

    def to_frame(self) -> pd.DataFrame:
        """One row per class: IoU, ground-truth pixels, predicted pixels"""
        return pd.DataFrame({
            "class": np.arange(self.num_classes),
            "iou": self.per_class_iou(),
            "true_pixels": self.confusion.sum(axis=1),
            "pred_pixels": self.confusion.sum(axis=0),
        })
