"""Segmentation metrics, cloud-cover binned robustness reports and ablation tables."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import LabelOutOfRange, MissingCloudMask, ShapeMismatch
from .sits_core import IGNORE_INDEX, SitsPair, cloud_cover_ratio

DEFAULT_BIN_EDGES = (0.0, 0.05, 0.15, 0.25, 1.0)


@dataclass
class MetricsReport:
    confusion_matrix: np.ndarray
    per_class_iou: list
    miou: float
    n_pixels_evaluated: int
    cloud_bins: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "confusion_matrix": self.confusion_matrix.tolist(),
            "per_class_iou": self.per_class_iou,
            "miou": self.miou,
            "n_pixels_evaluated": self.n_pixels_evaluated,
            "cloud_bins": self.cloud_bins,
        }


def accumulate_confusion(pred, label, num_classes: int, ignore_index: int = IGNORE_INDEX,
                         cm: np.ndarray | None = None) -> np.ndarray:
    """Add one prediction to ``cm`` (rows ground truth, columns prediction)."""
    pred = np.asarray(pred).astype(np.int64)
    label = np.asarray(label).astype(np.int64)
    if pred.shape != label.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs label {label.shape}")
    if cm is None:
        cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    keep = label != ignore_index
    gt, pr = label[keep], pred[keep]
    if gt.size and (gt.min() < 0 or gt.max() >= num_classes or pr.min() < 0 or pr.max() >= num_classes):
        raise LabelOutOfRange(f"class ids must lie in [0, {num_classes})")
    cm += np.bincount(gt * num_classes + pr, minlength=num_classes ** 2).reshape(num_classes, num_classes)
    return cm


def miou(cm: np.ndarray) -> MetricsReport:
    """Per-class IoU; classes absent from both truth and prediction are skipped in the mean."""
    cm = np.asarray(cm, dtype=np.int64)
    tp = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=1) + cm.sum(axis=0) - tp
    present = (cm.sum(axis=1) + cm.sum(axis=0)) > 0
    iou = np.where(present, tp / np.where(union > 0, union, 1), np.nan)
    per_class = [None if np.isnan(v) else float(v) for v in iou]
    mean = float(np.mean(iou[present])) if present.any() else 0.0
    return MetricsReport(cm, per_class, mean, int(cm.sum()))


def evaluate(predict_fn: Callable[[SitsPair], np.ndarray], dataset: Sequence[SitsPair], num_classes: int,
             ignore_index: int = IGNORE_INDEX) -> MetricsReport:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for pair in dataset:
        accumulate_confusion(predict_fn(pair), pair.label, num_classes, ignore_index, cm)
    return miou(cm)


def assign_bin(ratio: float, edges: Sequence[float]) -> int:
    """Index of the ``[lo, hi)`` bin holding ``ratio``; the last bin also takes ``hi``."""
    for i in range(len(edges) - 1):
        if edges[i] <= ratio < edges[i + 1]:
            return i
    if ratio == edges[-1]:
        return len(edges) - 2
    raise ValueError(f"ratio {ratio} outside bin edges {edges}")


def cloud_report(predict_fn, dataset: Sequence[SitsPair], num_classes: int,
                 bin_edges: Sequence[float] = DEFAULT_BIN_EDGES, baseline_fn=None,
                 ignore_index: int = IGNORE_INDEX) -> MetricsReport:
    """mIoU overall and per cloud-cover bin; with ``baseline_fn`` also per-bin deltas."""
    for pair in dataset:
        if pair.cloud_mask is None:
            raise MissingCloudMask(f"sample {pair.location_id} has no cloud mask")
    K = num_classes
    total = np.zeros((K, K), dtype=np.int64)
    per_bin = [np.zeros((K, K), dtype=np.int64) for _ in range(len(bin_edges) - 1)]
    base_bins = [np.zeros((K, K), dtype=np.int64) for _ in per_bin]
    counts = [0] * len(per_bin)
    for pair in dataset:
        b = assign_bin(cloud_cover_ratio(pair.cloud_mask), bin_edges)
        pred = predict_fn(pair)
        accumulate_confusion(pred, pair.label, K, ignore_index, per_bin[b])
        accumulate_confusion(pred, pair.label, K, ignore_index, total)
        if baseline_fn is not None:
            accumulate_confusion(baseline_fn(pair), pair.label, K, ignore_index, base_bins[b])
        counts[b] += 1

    report = miou(total)
    for i, cm in enumerate(per_bin):
        entry = {
            "ratio_lo": float(bin_edges[i]),
            "ratio_hi": float(bin_edges[i + 1]),
            "miou": miou(cm).miou if counts[i] else None,
            "n_samples": counts[i],
        }
        if baseline_fn is not None:
            base = miou(base_bins[i]).miou if counts[i] else None
            entry["baseline_miou"] = base
            entry["miou_delta"] = None if base is None else entry["miou"] - base
        report.cloud_bins.append(entry)
    return report


def ablation_table(runs: Sequence[tuple[str, MetricsReport | float]]) -> tuple[str, str]:
    """Text table and JSON ``{name: miou}``, rows sorted by name."""
    if not runs:
        raise ValueError("ablation_table needs at least one run")
    scores = {name: (r.miou if isinstance(r, MetricsReport) else float(r)) for name, r in runs}
    return render_table(scores), json.dumps(scores, sort_keys=True)


def render_table(scores: dict) -> str:
    names = sorted(scores)
    width = max(len("run"), *(len(n) for n in names))
    lines = [f"{'run':<{width}}  {'mIoU':>7}", f"{'-' * width}  {'-' * 7}"]
    lines += [f"{n:<{width}}  {scores[n]:>7.4f}" for n in names]
    return "\n".join(lines) + "\n"


def table_from_json(text: str) -> str:
    return render_table(json.loads(text))
