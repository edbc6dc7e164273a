"""Average precision over rotated-IoU matches, pooled across frames."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bev import RoiBox, rotated_iou


@dataclass(frozen=True)
class DetectionRecord:
    box: RoiBox
    score: float
    frame: int = 0

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError("score must be finite")


def _frame_gts(gts) -> dict[int, list[RoiBox]]:
    if isinstance(gts, dict):
        return {int(k): list(v) for k, v in gts.items()}
    return {0: list(gts)}


def match_detections(dets, gts, iou_thr: float) -> tuple[np.ndarray, int]:
    """Greedy matching in descending score order.

    Each detection takes the still-unmatched ground truth (same frame) with the
    highest IoU, provided it is >= ``iou_thr``. Returns the TP flags in sorted
    order and the total ground-truth count.
    """
    by_frame = _frame_gts(gts)
    n_gt = sum(len(v) for v in by_frame.values())
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, dets[i].frame, i))
    taken = {f: np.zeros(len(v), dtype=bool) for f, v in by_frame.items()}
    tp = np.zeros(len(dets), dtype=bool)
    for rank, i in enumerate(order):
        d = dets[i]
        frame_gts = by_frame.get(d.frame, [])
        best, best_j = -1.0, -1
        for j, g in enumerate(frame_gts):
            if taken[d.frame][j]:
                continue
            iou = rotated_iou(d.box, g)
            if iou >= iou_thr and iou > best:
                best, best_j = iou, j
        if best_j >= 0:
            taken[d.frame][best_j] = True
            tp[rank] = True
    return tp, n_gt


def average_precision(tp: np.ndarray, n_gt: int) -> float:
    """All-point interpolated AP from ranked TP flags."""
    n_det = len(tp)
    if n_gt == 0:
        return 1.0 if n_det == 0 else 0.0
    if n_det == 0:
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, n_det + 1)
    # monotone envelope, right to left
    env = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_r) * env))


def ap_at_iou(dets, gts, iou_thr: float) -> float:
    """AP of ``dets`` (DetectionRecords) against ``gts``.

    ``gts`` is either a list of boxes (single frame 0) or a ``{frame: boxes}``
    mapping; detections are pooled over frames.
    """
    if not (0.0 < iou_thr < 1.0):
        raise ValueError("iou_thr must lie in (0, 1)")
    dets = list(dets)
    tp, n_gt = match_detections(dets, gts, iou_thr)
    return average_precision(tp, n_gt)
