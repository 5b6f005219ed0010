"""Detection scoring and timing utilities.

Average precision follows the all-point interpolation: the precision
envelope is made monotone from the right and integrated over every
recall step. Matching is greedy in confidence order; a detection claims
the still-unmatched ground-truth box of the same image with the highest
overlap, provided that overlap reaches the threshold.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import InputError, ParseError
from .loss import BoundingBox


@dataclass(frozen=True)
class Detection:
    """One scored box prediction for an image."""

    image_id: str
    box: BoundingBox
    confidence: float
    label: str = "person"

    def __post_init__(self):
        c = float(self.confidence)
        if not math.isfinite(c) or not 0.0 <= c <= 1.0:
            raise InputError(f"confidence must lie in [0, 1], got {self.confidence!r}")
        object.__setattr__(self, "confidence", c)


@dataclass(frozen=True)
class APResult:
    ap: float
    tp: int
    fp: int
    num_gt: int


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two (x, y, w, h) boxes."""
    x0 = max(a.x, b.x)
    y0 = max(a.y, b.y)
    x1 = min(a.x + a.w, b.x + b.w)
    y1 = min(a.y + a.h, b.y + b.h)
    iw = max(0.0, x1 - x0)
    ih = max(0.0, y1 - y0)
    inter = iw * ih
    union = a.area() + b.area() - inter
    return inter / union


def match_detections(detections: list[Detection],
                     ground_truth: list[tuple[str, BoundingBox]],
                     iou_threshold: float = 0.5) -> list[bool]:
    """Greedy confidence-ordered matching.

    Returns true/false flags aligned with the input detection order.
    Each ground-truth box is claimed at most once; ties on overlap go to
    the lowest ground-truth index.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise InputError(f"iou_threshold must lie in (0, 1], got {iou_threshold}")
    by_image: dict[str, list[int]] = {}
    for idx, (image_id, _) in enumerate(ground_truth):
        by_image.setdefault(image_id, []).append(idx)
    claimed = [False] * len(ground_truth)
    flags = [False] * len(detections)
    order = sorted(range(len(detections)),
                   key=lambda i: -detections[i].confidence)
    for i in order:
        det = detections[i]
        best_iou = 0.0
        best_idx = -1
        for gt_idx in by_image.get(det.image_id, ()):
            if claimed[gt_idx]:
                continue
            overlap = iou(det.box, ground_truth[gt_idx][1])
            if overlap > best_iou:
                best_iou = overlap
                best_idx = gt_idx
        if best_idx >= 0 and best_iou >= iou_threshold:
            claimed[best_idx] = True
            flags[i] = True
    return flags


def voc_ap(tp_flags: list[bool], confidences: list[float],
           num_gt: int) -> float:
    """All-point interpolated average precision.

    tp_flags and confidences are aligned; num_gt counts every positive
    ground-truth box, matched or not. Zero ground truth scores 0.
    """
    if len(tp_flags) != len(confidences):
        raise InputError("tp_flags and confidences must have equal length")
    if num_gt < 0:
        raise InputError("num_gt must be non-negative")
    if num_gt == 0 or not tp_flags:
        return 0.0
    order = np.argsort(-np.asarray(confidences, dtype=np.float64),
                       kind="stable")
    tp = np.asarray(tp_flags, dtype=np.float64)[order]
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(1.0 - tp)
    recall = tp_cum / num_gt
    precision = tp_cum / (tp_cum + fp_cum)
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def evaluate_detections(detections: list[Detection],
                        ground_truth: list[tuple[str, BoundingBox]],
                        iou_threshold: float = 0.5) -> APResult:
    """Match, then score: returns AP plus raw true/false positive counts."""
    flags = match_detections(detections, ground_truth, iou_threshold)
    confidences = [d.confidence for d in detections]
    ap = voc_ap(flags, confidences, len(ground_truth))
    tp = sum(flags)
    return APResult(ap=ap, tp=tp, fp=len(flags) - tp, num_gt=len(ground_truth))


def ingest_detections(path) -> list[Detection]:
    """Read detections from a JSON-lines file.

    Each line carries {"id", "class", "box": [x, y, w, h], "score"}.
    Malformed lines raise ParseError with the offending line number.
    """
    detections: list[Detection] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                entry = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            if not isinstance(entry, dict):
                raise ParseError("expected a JSON object", line=lineno)
            missing = {"id", "class", "box", "score"} - entry.keys()
            if missing:
                raise ParseError(
                    f"missing keys {sorted(missing)}", line=lineno)
            box = entry["box"]
            if not isinstance(box, (list, tuple)) or len(box) != 4:
                raise ParseError("box must be a 4-element [x, y, w, h] list",
                                 line=lineno)
            try:
                detections.append(Detection(
                    image_id=str(entry["id"]),
                    box=BoundingBox(*box),
                    confidence=entry["score"],
                    label=str(entry["class"])))
            except InputError as exc:
                raise ParseError(str(exc), line=lineno) from exc
    return detections


@dataclass(frozen=True)
class LatencyStats:
    """Pooled wall-clock samples of a repeatedly applied operation."""

    min: float
    mean: float
    std: float
    samples: int
    degenerate: bool = False

    @classmethod
    def from_samples(cls, samples) -> "LatencyStats":
        arr = np.asarray(samples, dtype=np.float64)
        if arr.size == 0:
            raise InputError("at least one timing sample is required")
        if arr.size < 2:
            return cls(min=float(arr.min()), mean=float(arr.mean()),
                       std=0.0, samples=1, degenerate=True)
        return cls(min=float(arr.min()), mean=float(arr.mean()),
                   std=float(arr.std(ddof=1)), samples=int(arr.size))


def latency_bench(op, images, repeats: int = 10,
                  timer=time.perf_counter) -> LatencyStats:
    """Time op(image) over every image, repeats times each, pooled.

    One untimed warm-up call runs first so one-off setup cost does not
    leak into the samples. The timer is injectable for testing.
    """
    images = list(images)
    if not images:
        raise InputError("at least one image is required")
    if repeats < 1:
        raise InputError("repeats must be at least 1")
    op(images[0])
    samples = []
    for image in images:
        for _ in range(repeats):
            t0 = timer()
            op(image)
            t1 = timer()
            samples.append(t1 - t0)
    return LatencyStats.from_samples(samples)


REPORT_COLUMNS = ("method", "preset", "mean_bpp", "bpp_std", "ap", "tp", "fp")


def rate_precision_report(rows, path) -> None:
    """Write rate/accuracy rows to CSV with a fixed column order."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for i, row in enumerate(rows):
            missing = [c for c in REPORT_COLUMNS if c not in row]
            if missing:
                raise InputError(f"report row {i} is missing {missing}")
            writer.writerow([row[c] for c in REPORT_COLUMNS])
