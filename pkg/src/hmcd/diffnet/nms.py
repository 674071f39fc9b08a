"""Per-category non-maximum suppression, greedy or linear soft-NMS."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..boxes import Detection, as_xyxy_array, iou_matrix

DEFAULT_IOU = 0.45
DEFAULT_SCORE_FLOOR = 0.001


def _nms_group(dets: list[Detection], iou_thresh: float, mode: str, score_floor: float) -> list[Detection]:
    boxes = as_xyxy_array(dets)
    scores = np.array([d.confidence for d in dets], dtype=float)
    ious = iou_matrix(boxes, boxes)
    remaining = list(range(len(dets)))
    kept: list[Detection] = []
    while remaining:
        # highest score first, earlier input wins ties
        best = max(remaining, key=lambda k: (scores[k], -k))
        remaining.remove(best)
        kept.append(dets[best].with_confidence(scores[best]))
        survivors = []
        for k in remaining:
            overlap = ious[best, k]
            if mode == "hard":
                if overlap > iou_thresh:
                    continue
            elif overlap >= iou_thresh:
                scores[k] *= 1.0 - overlap
                if scores[k] < score_floor:
                    continue
            survivors.append(k)
        remaining = survivors
    return kept


def nms(
    dets: Sequence[Detection],
    iou_thresh: float = DEFAULT_IOU,
    mode: str = "soft_linear",
    score_floor: float = DEFAULT_SCORE_FLOOR,
) -> list[Detection]:
    """Suppress overlapping detections independently within each category.

    ``hard`` drops any box whose IoU with an already kept box exceeds
    ``iou_thresh``. ``soft_linear`` instead multiplies the score of each box
    overlapping by at least ``iou_thresh`` with ``1 - IoU`` and drops it once
    the score falls below ``score_floor``. Output is sorted by score.
    """
    if mode not in ("hard", "soft_linear"):
        raise ValueError(f"unknown NMS mode {mode!r}")
    groups: dict = {}
    for d in dets:
        groups.setdefault(d.category, []).append(d)
    kept = []
    for group in groups.values():
        kept.extend(_nms_group(group, iou_thresh, mode, score_floor))
    return sorted(kept, key=lambda d: -d.confidence)
