"""Evaluation toolkit: scale recall, miss rate by size, average precision.

Scale recall asks whether a face size is mapped into the detector's covered
range by at least one planned zoom; boundaries count (closed on both ends).
AP uses all-points interpolation of the precision-recall curve.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .detector import Detection, iou
from .histogram import ScaleHistogram, SquareBox
from .proposal import DetectorRange, ProposalParams, ZoomAction, plan_from_histogram


@dataclass(frozen=True)
class RecallPoint:
    threshold: float
    avg_proposals_per_image: float
    recall: float

    def __post_init__(self):
        if not 0.0 <= self.recall <= 1.0:
            raise ValueError(f"recall must be in [0, 1], got {self.recall}")
        if self.avg_proposals_per_image < 0:
            raise ValueError("avg proposals must be >= 0")


@dataclass(frozen=True)
class SizeBinMiss:
    left_log2: float
    right_log2: float
    miss_rate: float
    population: int


def scale_recalled(face_size: float, plan: Sequence[ZoomAction], drange: DetectorRange) -> bool:
    return any(
        drange.smin <= face_size * a.scale_factor <= drange.smax for a in plan
    )


def plan_recall(
    predictions: Sequence[ScaleHistogram],
    gt_sizes: Sequence[Sequence[float]],
    drange: DetectorRange,
    params: ProposalParams,
) -> Tuple[List[Tuple[float, bool]], float]:
    """(size, recalled) per face plus average selected proposals per image."""
    if len(predictions) != len(gt_sizes):
        raise ValueError("need one ground-truth size list per prediction")
    if len(predictions) == 0:
        raise ValueError("empty prediction set")
    flags: List[Tuple[float, bool]] = []
    total_selected = 0
    for hist, sizes in zip(predictions, gt_sizes):
        selected, plan = plan_from_histogram(hist, params, drange)
        total_selected += len(selected)
        for s in sizes:
            flags.append((s, scale_recalled(s, plan, drange)))
    return flags, total_selected / len(predictions)


def recall_curve(
    predictions: Sequence[ScaleHistogram],
    gt_sizes: Sequence[Sequence[float]],
    drange: DetectorRange,
    thresholds: Sequence[float],
    params: ProposalParams = ProposalParams(),
) -> List[RecallPoint]:
    """Sweep the selection threshold through the full proposal chain."""
    points = []
    for t in thresholds:
        flags, avg = plan_recall(
            predictions, gt_sizes, drange, replace(params, threshold=t)
        )
        if not flags:
            raise ValueError("no ground-truth faces in the evaluation set")
        rec = sum(ok for _, ok in flags) / len(flags)
        points.append(RecallPoint(threshold=t, avg_proposals_per_image=avg, recall=rec))
    return points


def missrate_by_size(
    flags: Sequence[Tuple[float, bool]], bin_edges_log2: Sequence[float]
) -> List[SizeBinMiss]:
    """Group (size, recalled) pairs into log2-size bins; skip empty bins.

    Bins are [left, right), except the last which also includes its right
    edge so the top of the span is not dropped.
    """
    edges = list(bin_edges_log2)
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError("bin edges must be strictly increasing, at least two")
    total = [0] * (len(edges) - 1)
    missed = [0] * (len(edges) - 1)
    last = len(edges) - 2
    for size, recalled in flags:
        v = math.log2(size)
        for i in range(len(edges) - 1):
            if edges[i] <= v < edges[i + 1] or (i == last and v == edges[i + 1]):
                total[i] += 1
                missed[i] += not recalled
                break
    return [
        SizeBinMiss(edges[i], edges[i + 1], missed[i] / total[i], total[i])
        for i in range(len(edges) - 1)
        if total[i] > 0
    ]


def average_precision(
    dets: Sequence[Tuple[str, Detection]],
    gts: Dict[str, Sequence[SquareBox]],
    iou_threshold: float = 0.5,
) -> float:
    """All-points interpolated AP with greedy one-to-one matching."""
    n_gt = sum(len(v) for v in gts.values())
    if n_gt == 0:
        raise ValueError("no ground-truth boxes")
    if not dets:
        return 0.0
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][1].score, i))
    matched = {img: [False] * len(boxes) for img, boxes in gts.items()}
    tp = np.zeros(len(order))
    for rank, i in enumerate(order):
        img, det = dets[i]
        boxes = gts.get(img, ())
        best, best_iou = -1, iou_threshold
        for j, g in enumerate(boxes):
            if matched[img][j]:
                continue
            v = iou(det.box, g)
            if v >= best_iou:
                best, best_iou = j, v
        if best >= 0:
            matched[img][best] = True
            tp[rank] = 1.0
    tp_cum = np.cumsum(tp)
    recall = tp_cum / n_gt
    precision = tp_cum / np.arange(1, len(order) + 1)
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    return float(np.sum((mrec[1:] - mrec[:-1]) * mpre[1:]))


def write_recall_curve_csv(path, points: Sequence[RecallPoint]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["threshold", "avg_proposals", "recall"])
        for p in points:
            w.writerow([str(p.threshold), str(p.avg_proposals_per_image), str(p.recall)])


def write_missrate_csv(path, bins: Sequence[SizeBinMiss]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["bin_left_log2", "bin_right_log2", "miss_rate", "population"])
        for b in bins:
            w.writerow([str(b.left_log2), str(b.right_log2), str(b.miss_rate), str(b.population)])


def write_ap_csv(path, ap: float) -> None:
    with open(path, "w", newline="") as f:
        csv.writer(f).writerow(["average_precision", str(ap)])
