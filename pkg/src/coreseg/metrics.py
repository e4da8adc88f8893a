"""Segmentation metrics: confusion matrix, accuracies, and MSE.

Definitions:
* global accuracy  = correct pixels / total pixels (confusion trace / total);
* per-class accuracy = confusion diagonal / row sum, rows indexed by truth;
* class average   = unweighted mean of per-class accuracies over classes
  that occur in the truth;
* MSE (classification) = mean squared error of class indices scaled to
  [0, 1] by 1/(C - 1), so it is comparable across palettes.
"""
import os
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError
from .images import Palette, labels_from_image, load_image


@dataclass
class MetricsReport:
    confusion: np.ndarray  # (C, C), rows = truth, columns = prediction
    per_class: np.ndarray  # accuracy per class, nan where absent from truth
    global_accuracy: float
    class_average: float
    mse: float
    class_names: list

    @property
    def total_pixels(self):
        return int(self.confusion.sum())


def confusion_matrix(truth, pred, num_classes):
    truth = np.asarray(truth).reshape(-1)
    pred = np.asarray(pred).reshape(-1)
    if truth.shape != pred.shape:
        raise ShapeError(f"truth {truth.shape} vs prediction {pred.shape}")
    flat = truth * num_classes + pred
    counts = np.bincount(flat, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


def metrics_from_confusion(confusion, class_names, mse):
    confusion = np.asarray(confusion, dtype=np.int64)
    total = confusion.sum()
    row_sums = confusion.sum(axis=1)
    per_class = np.full(confusion.shape[0], np.nan)
    present = row_sums > 0
    per_class[present] = confusion.diagonal()[present] / row_sums[present]
    return MetricsReport(
        confusion=confusion,
        per_class=per_class * 100.0,
        global_accuracy=float(confusion.trace() / total) * 100.0,
        class_average=float(np.nanmean(per_class)) * 100.0,
        mse=mse,
        class_names=list(class_names),
    )


def _matched_pairs(pred_dir, truth_dir):
    pred_files = {f for f in os.listdir(pred_dir) if f.endswith((".png", ".raw"))}
    truth_files = {f for f in os.listdir(truth_dir) if f.endswith((".png", ".raw"))}
    missing = sorted(pred_files ^ truth_files)
    if missing:
        raise ValidationError(
            "prediction/truth file sets differ, unmatched: " + ", ".join(missing))
    if not pred_files:
        raise ValidationError("no files to evaluate")
    return sorted(pred_files)


def evaluate(pred_dir, truth_dir, palette: Palette) -> MetricsReport:
    """Score a directory of predicted label images against ground truth."""
    names = _matched_pairs(pred_dir, truth_dir)
    num_classes = palette.num_classes
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    sq_err = 0.0
    total = 0
    for name in names:
        pred_img = load_image(os.path.join(pred_dir, name))
        truth_img = load_image(os.path.join(truth_dir, name))
        if pred_img.shape != truth_img.shape:
            raise ShapeError(
                f"{name}: prediction {pred_img.shape[1:]} vs truth "
                f"{truth_img.shape[1:]}")
        pred = labels_from_image(pred_img, palette)
        truth = labels_from_image(truth_img, palette)
        confusion += confusion_matrix(truth, pred, num_classes)
        if num_classes > 1:
            scale = 1.0 / (num_classes - 1)
            sq_err += float(np.sum(((pred - truth) * scale) ** 2))
        total += truth.size
    return metrics_from_confusion(confusion, palette.class_names, sq_err / total)


def format_report(report: MetricsReport) -> str:
    """Plain-text table plus a machine-readable key=value section."""
    width = max(12, max(len(n) for n in report.class_names) + 2)
    lines = [f"{'Class':<{width}}Accuracy (%)"]
    for name, acc in zip(report.class_names, report.per_class):
        shown = "-" if np.isnan(acc) else f"{acc:.2f}"
        lines.append(f"{name:<{width}}{shown}")
    lines.append(f"{'Class Avg.':<{width}}{report.class_average:.2f}")
    lines.append(f"{'Global Avg.':<{width}}{report.global_accuracy:.2f}")
    lines.append("")
    lines.append(f"global_accuracy={report.global_accuracy:.6f}")
    lines.append(f"class_average={report.class_average:.6f}")
    lines.append(f"mse={report.mse:.6f}")
    lines.append(f"total_pixels={report.total_pixels}")
    for name, acc in zip(report.class_names, report.per_class):
        key = name.replace(" ", "_")
        lines.append(f"class_accuracy.{key}=" +
                     ("nan" if np.isnan(acc) else f"{acc:.6f}"))
    return "\n".join(lines) + "\n"
