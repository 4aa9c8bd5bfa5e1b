"""Area-weighted semantic-segmentation metrics.

All accumulation is in surface area (m²), not triangle counts, so metrics
are invariant under face subdivision. Rows of the confusion matrix are
ground-truth classes 1..6; ground-truth-unclassified faces are skipped
entirely. Predicted-unclassified area lands in an internal 7th column: it
counts against overall accuracy and recall but never in any predicted-class
total, so a model is penalized for abstaining without inflating another
class's false positives.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .mesh import CLASS_NAMES
from .segmentation import upper_bound_labels


class ConfusionMatrix:
    """6x7 area matrix: rows GT class 1..6, col 6 = predicted unclassified."""

    def __init__(self, matrix=None):
        self.matrix = np.zeros((6, 7)) if matrix is None \
            else np.asarray(matrix, dtype=np.float64)
        if self.matrix.shape != (6, 7):
            raise ValueError("confusion matrix must be 6x7")

    def add_labels(self, areas, gt, pred) -> "ConfusionMatrix":
        areas = np.asarray(areas, dtype=np.float64)
        gt = np.asarray(gt, dtype=np.int64)
        pred = np.asarray(pred, dtype=np.int64)
        keep = gt != 0
        cols = np.where(pred[keep] >= 1, pred[keep] - 1, 6)
        np.add.at(self.matrix, (gt[keep] - 1, cols), areas[keep])
        return self

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.matrix + other.matrix)

    @property
    def total_area(self) -> float:
        return float(self.matrix.sum())


def accumulate(cm, mesh_gt, mesh_pred) -> ConfusionMatrix:
    """Fold one tile's GT/prediction meshes into the confusion matrix.

    Both meshes must share geometry; cm may be None to start a fresh matrix.
    """
    if mesh_gt.n_faces != mesh_pred.n_faces \
            or not np.array_equal(mesh_gt.faces, mesh_pred.faces) \
            or not np.array_equal(mesh_gt.vertices, mesh_pred.vertices):
        raise ValueError("ground-truth and prediction meshes differ in shape")
    if cm is None:
        cm = ConfusionMatrix()
    return cm.add_labels(mesh_gt.face_areas, mesh_gt.face_labels,
                         mesh_pred.face_labels)


def confusion_from_labels(mesh, gt_labels, pred_labels,
                          cm: ConfusionMatrix = None) -> ConfusionMatrix:
    if cm is None:
        cm = ConfusionMatrix()
    return cm.add_labels(mesh.face_areas, gt_labels, pred_labels)


@dataclass
class MetricsReport:
    precision: np.ndarray  # (6,) per class 1..6; 0 where undefined
    recall: np.ndarray
    f1: np.ndarray
    iou: np.ndarray
    present: np.ndarray = field(repr=False)  # classes in the GT/pred union
    oa: float = 0.0
    macc: float = 0.0
    miou: float = 0.0
    mf1: float = 0.0
    total_area: float = 0.0

    def to_json(self) -> str:
        per_class = {}
        for i in range(6):
            per_class[CLASS_NAMES[i + 1]] = {
                "precision": float(self.precision[i]),
                "recall": float(self.recall[i]),
                "f1": float(self.f1[i]),
                "iou": float(self.iou[i]),
                "present": bool(self.present[i]),
            }
        return json.dumps({
            "overall_accuracy": self.oa,
            "mean_accuracy": self.macc,
            "mean_iou": self.miou,
            "mean_f1": self.mf1,
            "total_area": self.total_area,
            "per_class": per_class,
        }, indent=2)

    def write_csv(self, stream) -> None:
        writer = csv.writer(stream)
        writer.writerow(["class", "precision", "recall", "f1", "iou"])
        for i in range(6):
            writer.writerow([CLASS_NAMES[i + 1],
                             repr(float(self.precision[i])),
                             repr(float(self.recall[i])),
                             repr(float(self.f1[i])),
                             repr(float(self.iou[i]))])


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


def report(cm: ConfusionMatrix) -> MetricsReport:
    """Per-class and mean metrics; means cover GT/pred-present classes only."""
    mat = cm.matrix
    total = mat.sum()
    if total <= 0:
        raise ValueError("confusion matrix is empty (no evaluated area)")
    tp = np.diag(mat[:, :6])
    gt_total = mat.sum(axis=1)
    pred_total = mat[:, :6].sum(axis=0)  # 7th column is not a class
    fp = pred_total - tp
    fn = gt_total - tp
    precision = _safe_div(tp, tp + fp)
    recall = _safe_div(tp, tp + fn)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    iou = _safe_div(tp, tp + fp + fn)
    present = (gt_total > 0) | (pred_total > 0)
    return MetricsReport(
        precision=precision, recall=recall, f1=f1, iou=iou, present=present,
        oa=float(tp.sum() / total),
        macc=float(recall[present].mean()),
        miou=float(iou[present].mean()),
        mf1=float(f1[present].mean()),
        total_area=float(total),
    )


def evaluate_upper_bound(mesh, segments) -> MetricsReport:
    """Ceiling metrics when every segment takes its area-majority GT label."""
    best = upper_bound_labels(mesh, segments)
    return report(confusion_from_labels(mesh, mesh.face_labels, best))


def aggregate_reports(reports) -> dict:
    """Mean and population std of the scalar metrics across repeated runs."""
    keys = ("oa", "macc", "miou", "mf1")
    out = {}
    for key in keys:
        vals = np.array([getattr(r, key) for r in reports])
        out[key] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return out
