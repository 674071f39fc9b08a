"""Detection metrics, clip-level voting, and the detector + difference baseline."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .boxes import CATEGORY_ORDER, ChangeBox, ChangeCategory, Detection, as_xyxy_array, iou_matrix
from .errors import ContractError

log = logging.getLogger(__name__)

DEFAULT_IOU_THRESH = 0.5
DEFAULT_VOTE_THRESHOLD = 3
REPORT_SCHEMA_VERSION = 1


@dataclass
class CategoryCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0


@dataclass
class MatchResult:
    """Counts per category plus the matched ``(image, detection, gt)`` index triples.

    ``records`` keeps ``(confidence, category, is_tp)`` for every detection,
    which is all a ranking metric needs.
    """

    counts: dict[ChangeCategory, CategoryCounts] = field(
        default_factory=lambda: {c: CategoryCounts() for c in CATEGORY_ORDER})
    pairs: list[tuple[int, int, int]] = field(default_factory=list)
    records: list[tuple[float, ChangeCategory, bool]] = field(default_factory=list)

    def merge(self, other: "MatchResult", image: int) -> None:
        for c in CATEGORY_ORDER:
            mine, theirs = self.counts[c], other.counts[c]
            mine.tp += theirs.tp
            mine.fp += theirs.fp
            mine.fn += theirs.fn
        self.pairs.extend((image, d, g) for _, d, g in other.pairs)
        self.records.extend(other.records)


def _check_iou(iou_thresh: float) -> None:
    if not 0.0 < iou_thresh < 1.0:
        raise ContractError(f"iou_thresh must lie in (0, 1), got {iou_thresh}")


def _category(box) -> ChangeCategory:
    if box.category is None:
        raise ContractError("matching needs boxes with a change category")
    return ChangeCategory.parse(box.category)


def _confidence(box) -> float:
    return float(getattr(box, "confidence", 1.0))


def match_detections(dets: Sequence, gts: Sequence, iou_thresh: float = DEFAULT_IOU_THRESH) -> MatchResult:
    """Greedy matching for one image.

    Detections are visited by descending confidence (ties keep input order);
    each takes the unmatched same-category GT with the highest IoU, if that
    IoU reaches ``iou_thresh``.
    """
    _check_iou(iou_thresh)
    res = MatchResult()
    det_cats = [_category(d) for d in dets]
    gt_cats = [_category(g) for g in gts]
    ious = iou_matrix(as_xyxy_array(dets), as_xyxy_array(gts))
    taken = np.zeros(len(gts), dtype=bool)
    order = sorted(range(len(dets)), key=lambda k: -_confidence(dets[k]))
    for k in order:
        cat = det_cats[k]
        best, best_iou = -1, iou_thresh
        for g in range(len(gts)):
            if taken[g] or gt_cats[g] is not cat:
                continue
            if ious[k, g] >= best_iou and (best < 0 or ious[k, g] > ious[k, best]):
                best, best_iou = g, ious[k, g]
        if best >= 0:
            taken[best] = True
            res.counts[cat].tp += 1
            res.pairs.append((0, k, best))
        else:
            res.counts[cat].fp += 1
        res.records.append((_confidence(dets[k]), cat, best >= 0))
    for g, cat in enumerate(gt_cats):
        if not taken[g]:
            res.counts[cat].fn += 1
    return res


def match_dataset(det_sets: Sequence[Sequence], gt_sets: Sequence[Sequence],
                  iou_thresh: float = DEFAULT_IOU_THRESH) -> MatchResult:
    if len(det_sets) != len(gt_sets):
        raise ContractError("need one detection list per ground-truth list")
    total = MatchResult()
    for i, (d, g) in enumerate(zip(det_sets, gt_sets)):
        total.merge(match_detections(d, g, iou_thresh), i)
    return total


def _ratios(tp: int, fp: int, fn: int) -> dict[str, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return {"tp": tp, "fp": fp, "fn": fn, "precision": p, "recall": r, "f_score": f}


def prf(match: MatchResult) -> dict:
    """Precision, recall and F-score per category and micro-averaged (0 when undefined)."""
    per = {c.value: _ratios(n.tp, n.fp, n.fn) for c, n in match.counts.items()}
    tot = [sum(getattr(n, k) for n in match.counts.values()) for k in ("tp", "fp", "fn")]
    return {"per_category": per, "micro": _ratios(*tot)}


@dataclass
class PRCurve:
    category: ChangeCategory
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    num_gt: int


def pr_curve(records: Sequence[tuple[float, bool]], num_gt: int, category: ChangeCategory) -> PRCurve:
    """Operating points at each distinct confidence, from the highest down.

    Detections sharing a confidence enter together, so the curve does not
    depend on how ties happen to be ordered.
    """
    conf = np.array([r[0] for r in records], dtype=float)
    hit = np.array([r[1] for r in records], dtype=bool)
    order = np.argsort(-conf, kind="stable")
    conf, hit = conf[order], hit[order]
    tp = np.cumsum(hit)
    n = np.arange(1, len(conf) + 1)
    last_of_group = np.r_[conf[1:] != conf[:-1], True] if len(conf) else np.zeros(0, dtype=bool)
    tp, n, thr = tp[last_of_group], n[last_of_group], conf[last_of_group]
    recall = tp / num_gt if num_gt else np.zeros(len(tp))
    return PRCurve(category, thr, tp / n, recall, num_gt)


def ap_from_curve(curve: PRCurve) -> float:
    """All-point interpolated area under the precision envelope."""
    if curve.num_gt == 0:
        return math.nan
    r = np.r_[0.0, curve.recall]
    p = np.r_[0.0, curve.precision]
    # envelope: best precision at this recall or any higher one
    env = np.maximum.accumulate(p[::-1])[::-1]
    return float(np.sum((r[1:] - r[:-1]) * env[1:]))


def average_precision(det_sets: Sequence[Sequence], gt_sets: Sequence[Sequence],
                      category: ChangeCategory | str, iou_thresh: float = DEFAULT_IOU_THRESH) -> float:
    """AP of one category over a dataset; NaN when the category has no GT boxes."""
    cat = ChangeCategory.parse(category)
    return ap_from_curve(_curves(match_dataset(det_sets, gt_sets, iou_thresh))[cat])


def _curves(match: MatchResult) -> dict[ChangeCategory, PRCurve]:
    out = {}
    for c in CATEGORY_ORDER:
        recs = [(conf, hit) for conf, cat, hit in match.records if cat is c]
        out[c] = pr_curve(recs, match.counts[c].tp + match.counts[c].fn, c)
    return out


@dataclass
class MapResult:
    map: float
    ap: dict[ChangeCategory, float]
    curves: dict[ChangeCategory, PRCurve]
    excluded: list[ChangeCategory]


def map_metric(det_sets: Sequence[Sequence], gt_sets: Sequence[Sequence],
               iou_thresh: float = DEFAULT_IOU_THRESH) -> MapResult:
    """Unweighted mean AP over the categories that have ground truth."""
    curves = _curves(match_dataset(det_sets, gt_sets, iou_thresh))
    ap = {c: ap_from_curve(curves[c]) for c in CATEGORY_ORDER}
    excluded = [c for c in CATEGORY_ORDER if curves[c].num_gt == 0]
    for c in excluded:
        log.warning("category %s has no ground-truth boxes; left out of mAP", c.value)
    valid = [ap[c] for c in CATEGORY_ORDER if c not in excluded]
    return MapResult(float(np.mean(valid)) if valid else math.nan, ap, curves, excluded)


@dataclass(frozen=True)
class ClipVerdict:
    clip_id: str
    predicted: ChangeCategory
    counts: dict[str, int]
    vote_threshold: int

    def to_json(self) -> dict:
        return {"clip_id": self.clip_id, "predicted": self.predicted.value,
                "counts": dict(self.counts), "vote_threshold": self.vote_threshold}


def clip_classify(frame_dets: Sequence[Sequence], vote_threshold: int = DEFAULT_VOTE_THRESHOLD,
                  clip_id: str = "") -> ClipVerdict:
    """Vote over all boxes of a clip.

    The change category with the most boxes wins if its count exceeds
    ``vote_threshold`` (to_add wins a tie with to_del); otherwise the clip
    is ``correct``.
    """
    if vote_threshold < 1:
        raise ContractError("vote_threshold must be >= 1")
    if len(frame_dets) == 0:
        raise ContractError(f"clip {clip_id!r} has no frames")
    counts = Counter(_category(b) for frame in frame_dets for b in frame)
    n_add, n_del = counts[ChangeCategory.TO_ADD], counts[ChangeCategory.TO_DEL]
    if max(n_add, n_del) > vote_threshold:
        pred = ChangeCategory.TO_ADD if n_add >= n_del else ChangeCategory.TO_DEL
    else:
        pred = ChangeCategory.CORRECT
    return ClipVerdict(clip_id, pred, {c.value: counts[c] for c in CATEGORY_ORDER}, vote_threshold)


def top1(verdicts: Sequence[ClipVerdict], truth: Mapping[str, ChangeCategory]) -> float:
    if not verdicts:
        raise ContractError("no clips to score")
    return sum(v.predicted is truth[v.clip_id] for v in verdicts) / len(verdicts)


def baseline_diff(
    dets_plain: Sequence[Detection],
    projected: Sequence[tuple[str, Sequence[float]]],
    iou_thresh: float = DEFAULT_IOU_THRESH,
    candidates: Sequence[Detection] | None = None,
) -> list[Detection]:
    """Detector + difference post-process.

    Plain detections (no change category) are associated greedily, by
    descending confidence, with the projected map boxes. A matched pair is
    ``correct`` at the detected box, an unmatched detection is ``to_add``,
    and an unmatched projection is ``to_del``. A ``to_del`` box scores
    ``1 - c``, where ``c`` is the highest confidence among the pre-NMS
    ``candidates`` overlapping it by at least ``iou_thresh`` (1.0 when no
    candidates are given or none overlap).
    """
    _check_iou(iou_thresh)
    proj_boxes = [ChangeBox.from_xyxy(b, ChangeCategory.TO_DEL, eid) for eid, b in projected]
    ious = iou_matrix(as_xyxy_array(dets_plain), as_xyxy_array(proj_boxes))
    taken = np.zeros(len(proj_boxes), dtype=bool)
    out = []
    for k in sorted(range(len(dets_plain)), key=lambda k: -dets_plain[k].confidence):
        d = dets_plain[k]
        free = np.where(~taken & (ious[k] >= iou_thresh))[0]
        if len(free):
            g = free[np.argmax(ious[k, free])]
            taken[g] = True
            out.append(Detection(d.cx, d.cy, d.w, d.h, ChangeCategory.CORRECT, d.confidence, d.class_probs))
        else:
            out.append(Detection(d.cx, d.cy, d.w, d.h, ChangeCategory.TO_ADD, d.confidence, d.class_probs))
    cand_iou = iou_matrix(as_xyxy_array(proj_boxes), as_xyxy_array(candidates)) if candidates else None
    for g, p in enumerate(proj_boxes):
        if taken[g]:
            continue
        c = 0.0
        if cand_iou is not None:
            near = cand_iou[g] >= iou_thresh
            if near.any():
                c = max(candidates[k].confidence for k in np.where(near)[0])
        out.append(Detection(p.cx, p.cy, p.w, p.h, ChangeCategory.TO_DEL, 1.0 - c))
    return out


def labels_as_detections(boxes: Sequence[ChangeBox], confidence: float = 1.0) -> list[Detection]:
    return [Detection(b.cx, b.cy, b.w, b.h, b.category, confidence) for b in boxes]


def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


def build_report(*, prf_metrics: dict | None = None, map_result: MapResult | None = None,
                 top1_value: float | None = None, headline: str = "map", config: dict | None = None,
                 extra: dict | None = None) -> dict:
    """Metrics report; non-finite values (e.g. AP of an absent category) become null."""
    rep = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "headline": headline,
        "per_category": (prf_metrics or {}).get("per_category", {}),
        "micro": (prf_metrics or {}).get("micro", {}),
        "map": map_result.map if map_result else None,
        "ap": {c.value: v for c, v in map_result.ap.items()} if map_result else {},
        "top1": top1_value,
        "config": config or {},
    }
    rep.update(extra or {})
    return _clean(rep)


def write_report(path: str | Path, report: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")


def write_pr_csv(directory: str | Path, curves: Mapping[ChangeCategory, PRCurve]) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for c, curve in curves.items():
        path = directory / f"pr_{c.value}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "precision", "recall"])
            for t, p, r in zip(curve.thresholds, curve.precision, curve.recall):
                w.writerow([f"{t:.8g}", f"{p:.8g}", f"{r:.8g}"])
        paths.append(path)
    return paths
