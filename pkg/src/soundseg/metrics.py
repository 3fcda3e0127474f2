"""Segmentation quality metrics: mean IoU and F-score, plus batch evaluation.

Frame-level Jaccard is averaged over frames for mIoU (an empty/empty frame
counts as 1: nothing to find, nothing found). The F-score pools pixels over
all frames by default (micro); a macro mode averages per-frame scores.
Manifests are JSON-object-per-line records binding prediction and ground
truth files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError
from .pgm import read_binary_mask
from .validation import check_binary, check_same_shape

__all__ = [
    "EvalReport", "miou", "miou_semantic", "fscore", "confusion_counts",
    "evaluate_pairs", "evaluate_manifest", "read_manifest",
]

DEFAULT_BETA2 = 0.3


@dataclass
class EvalReport:
    per_frame_iou: list[float]
    miou: float
    precision: float
    recall: float
    f_score: float
    tp: int
    fp: int
    fn: int
    beta2: float = DEFAULT_BETA2
    average: str = "micro"
    per_class_iou: dict[int, float] | None = None
    degenerate_frames: list[int] = field(default_factory=list)

    def to_record(self) -> dict:
        out = {
            "miou": self.miou,
            "precision": self.precision,
            "recall": self.recall,
            "f_score": self.f_score,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "beta2": self.beta2,
            "average": self.average,
            "frames": len(self.per_frame_iou),
        }
        if self.degenerate_frames:
            out["degenerate_frames"] = self.degenerate_frames
        return out


def _check_pairs(preds, gts) -> tuple[list[np.ndarray], list[np.ndarray]]:
    if len(preds) != len(gts):
        raise ShapeError(f"{len(preds)} predictions vs {len(gts)} ground truths")
    preds = [check_binary(p, "pred") for p in preds]
    gts = [check_binary(g, "gt") for g in gts]
    for p, g in zip(preds, gts):
        check_same_shape(p, g, "pred/gt pair")
    return preds, gts


def confusion_counts(pred: np.ndarray, gt: np.ndarray) -> tuple[int, int, int]:
    """(TP, FP, FN) foreground pixel counts for one mask pair."""
    tp = int(((pred == 1) & (gt == 1)).sum())
    fp = int(((pred == 1) & (gt == 0)).sum())
    fn = int(((pred == 0) & (gt == 1)).sum())
    return tp, fp, fn


def _frame_iou(pred: np.ndarray, gt: np.ndarray) -> float:
    tp, fp, fn = confusion_counts(pred, gt)
    union = tp + fp + fn
    if union == 0:
        return 1.0  # both empty: nothing to find, nothing found
    return tp / union


def miou(preds, gts) -> float:
    """Mean over frames of foreground Jaccard |P n G| / |P u G|."""
    preds, gts = _check_pairs(preds, gts)
    if not preds:
        raise ValueError("miou: empty mask lists")
    return float(np.mean([_frame_iou(p, g) for p, g in zip(preds, gts)]))


def miou_semantic(preds, gts, n_classes: int) -> float:
    """Per-class IoU pooled over frames, averaged over classes present in gts.

    Background (class 0) is treated as a class like any other.
    """
    if len(preds) != len(gts) or not preds:
        raise ShapeError(f"{len(preds)} predictions vs {len(gts)} ground truths")
    inter = np.zeros(n_classes, dtype=np.int64)
    union = np.zeros(n_classes, dtype=np.int64)
    present = np.zeros(n_classes, dtype=bool)
    for pred, gt in zip(preds, gts):
        pred = np.asarray(pred, dtype=np.int64)
        gt = np.asarray(gt, dtype=np.int64)
        check_same_shape(pred, gt, "pred/gt pair")
        for arr, name in ((pred, "pred"), (gt, "gt")):
            if arr.min() < 0 or arr.max() >= n_classes:
                raise ValueError(f"{name}: class id outside [0, {n_classes})")
        for k in range(n_classes):
            p, g = pred == k, gt == k
            inter[k] += (p & g).sum()
            union[k] += (p | g).sum()
            present[k] |= g.any()
    ious = [inter[k] / union[k] if union[k] else 1.0
            for k in range(n_classes) if present[k]]
    return float(np.mean(ious))


def _f_from_counts(tp: int, fp: int, fn: int, beta2: float) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    denom = beta2 * precision + recall
    f = ((1.0 + beta2) * precision * recall / denom) if denom else 0.0
    return precision, recall, f


def fscore(preds, gts, beta2: float = DEFAULT_BETA2,
           average: str = "micro") -> float:
    """F-measure ((1 + b2) P R) / (b2 P + R) over foreground pixels.

    micro pools pixels across frames; macro averages per-frame scores
    (degenerate frames score 0 by the zero-denominator rule).
    """
    if beta2 < 0:
        raise ValueError(f"beta2 must be >= 0, got {beta2}")
    preds, gts = _check_pairs(preds, gts)
    if not preds:
        raise ValueError("fscore: empty mask lists")
    if average == "macro":
        scores = [_f_from_counts(*confusion_counts(p, g), beta2)[2]
                  for p, g in zip(preds, gts)]
        return float(np.mean(scores))
    if average != "micro":
        raise ValueError(f"unknown average {average!r}")
    totals = np.zeros(3, dtype=np.int64)
    for p, g in zip(preds, gts):
        totals += confusion_counts(p, g)
    return _f_from_counts(*totals, beta2)[2]


def evaluate_pairs(preds, gts, beta2: float = DEFAULT_BETA2,
                   average: str = "micro") -> EvalReport:
    """Full report for aligned prediction/ground-truth mask lists."""
    preds, gts = _check_pairs(preds, gts)
    if not preds:
        raise ValueError("evaluate_pairs: empty mask lists")
    per_frame = [_frame_iou(p, g) for p, g in zip(preds, gts)]
    degenerate = [i for i, (p, g) in enumerate(zip(preds, gts))
                  if p.sum() == 0 and g.sum() == 0]
    totals = np.zeros(3, dtype=np.int64)
    for p, g in zip(preds, gts):
        totals += confusion_counts(p, g)
    precision, recall, f_micro = _f_from_counts(*totals, beta2)
    f = f_micro if average == "micro" else fscore(preds, gts, beta2, average)
    return EvalReport(
        per_frame_iou=per_frame,
        miou=float(np.mean(per_frame)),
        precision=precision,
        recall=recall,
        f_score=f,
        tp=int(totals[0]),
        fp=int(totals[1]),
        fn=int(totals[2]),
        beta2=beta2,
        average=average,
        degenerate_frames=degenerate,
    )


def read_manifest(path: str | Path) -> list[dict]:
    """Parse a JSON-object-per-line manifest; blank lines are skipped."""
    records = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"manifest line {lineno}: {exc}") from exc
        if not isinstance(record, dict):
            raise FormatError(f"manifest line {lineno}: expected an object")
        record["_line"] = lineno
        records.append(record)
    return records


def evaluate_manifest(path: str | Path, beta2: float = DEFAULT_BETA2,
                      average: str = "micro") -> EvalReport:
    """Evaluate every gt/pred pair named by a manifest, in file order."""
    records = read_manifest(path)
    if not records:
        raise ValueError(f"empty manifest: {path}")
    base = Path(path).parent
    preds, gts = [], []
    for record in records:
        for key in ("gt", "pred"):
            if key not in record:
                raise FormatError(
                    f"manifest line {record['_line']}: missing field {key!r}")
        for key, bucket in (("pred", preds), ("gt", gts)):
            mask_path = Path(record[key])
            if not mask_path.is_absolute():
                mask_path = base / mask_path
            try:
                bucket.append(read_binary_mask(mask_path))
            except FileNotFoundError as exc:
                raise FileNotFoundError(
                    f"manifest line {record['_line']}: {exc}") from exc
            except FormatError as exc:
                raise FormatError(
                    f"manifest line {record['_line']}: {exc}") from exc
    return evaluate_pairs(preds, gts, beta2, average)
