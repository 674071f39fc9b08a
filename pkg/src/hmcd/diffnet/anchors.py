"""Anchor priors and the box transform between raw head outputs and pixels.

Per cell ``(i, j)`` (row, column) of a grid with stride ``s`` and anchor
``(pw, ph)``::

    bx = (sigmoid(tx) + j) * s      bw = pw * exp(tw)
    by = (sigmoid(ty) + i) * s      bh = ph * exp(th)

Channel layout per anchor: ``tx, ty, tw, th, conf, p_correct, p_to_del, p_to_add``.
"""

from __future__ import annotations

import logging

import numpy as np
import torch

from ..boxes import CATEGORY_ORDER, NUM_CLASSES, Detection
from .model import NUM_ANCHORS, STRIDES

log = logging.getLogger(__name__)

# YOLOv3 COCO priors at 416 px
_YOLO_PRIORS_416 = np.array([
    [10, 13], [16, 30], [33, 23], [30, 61], [62, 45], [59, 119], [116, 90], [156, 198], [373, 326],
], dtype=float)
ATTRS = NUM_CLASSES + 5


def default_anchors(input_size: int) -> np.ndarray:
    return _YOLO_PRIORS_416 * (input_size / 416.0)


def sort_by_area(anchors) -> np.ndarray:
    a = np.asarray(anchors, dtype=float).reshape(-1, 2)
    return a[np.argsort(a[:, 0] * a[:, 1], kind="stable")]


def wh_iou(wh: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """IoU of center-aligned boxes, (N, 2) x (K, 2) -> (N, K)."""
    wh = np.asarray(wh, dtype=float).reshape(-1, 2)
    anchors = np.asarray(anchors, dtype=float).reshape(-1, 2)
    inter = np.minimum(wh[:, None, 0], anchors[None, :, 0]) * np.minimum(wh[:, None, 1], anchors[None, :, 1])
    union = wh[:, 0:1] * wh[:, 1:2] + (anchors[:, 0] * anchors[:, 1])[None, :] - inter
    return inter / union


def kmeans_anchors(wh, k: int = 9, seed: int = 0, iters: int = 300) -> np.ndarray:
    """k-means on box sizes with ``1 - IoU`` as the distance; sorted by area."""
    wh = np.asarray(wh, dtype=float).reshape(-1, 2)
    uniq = np.unique(np.round(wh, 6), axis=0)
    if len(uniq) < k:
        raise ValueError(f"need at least {k} distinct box sizes for k-means, got {len(uniq)}")
    rng = np.random.default_rng(seed)
    centers = uniq[rng.choice(len(uniq), size=k, replace=False)]
    assign = None
    for _ in range(iters):
        new_assign = np.argmax(wh_iou(wh, centers), axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = wh[assign == c]
            if len(members):
                centers[c] = np.median(members, axis=0)
    return sort_by_area(centers)


def fit_anchors(wh, input_size: int, k: int = 9, seed: int = 0) -> np.ndarray:
    """k-means priors, or scaled YOLOv3 priors when there are too few distinct boxes."""
    try:
        return kmeans_anchors(wh, k, seed)
    except ValueError as exc:
        log.warning("using fallback anchor priors: %s", exc)
        return sort_by_area(default_anchors(input_size))


def anchors_for_scale(anchors: np.ndarray, scale: int) -> np.ndarray:
    """Scale 0 (coarsest) gets the three largest priors, scale 2 the smallest."""
    a = sort_by_area(anchors)
    group = len(STRIDES) - 1 - scale
    return a[group * NUM_ANCHORS:(group + 1) * NUM_ANCHORS]


def split_raw(raw: torch.Tensor) -> torch.Tensor:
    """``B x 24 x S x S`` -> ``B x 3 x S x S x 8``."""
    b, _, s, s2 = raw.shape
    return raw.view(b, NUM_ANCHORS, ATTRS, s, s2).permute(0, 1, 3, 4, 2)


def decode_scale(raw: torch.Tensor, anchors: np.ndarray, stride: int) -> dict[str, torch.Tensor]:
    """Differentiable decode of one scale; boxes as ``cx, cy, w, h`` in pixels."""
    p = split_raw(raw)
    s_h, s_w = p.shape[2], p.shape[3]
    rows = torch.arange(s_h, dtype=p.dtype, device=p.device).view(1, 1, s_h, 1)
    cols = torch.arange(s_w, dtype=p.dtype, device=p.device).view(1, 1, 1, s_w)
    anc = torch.as_tensor(np.asarray(anchors), dtype=p.dtype, device=p.device)
    pw = anc[:, 0].view(1, NUM_ANCHORS, 1, 1)
    ph = anc[:, 1].view(1, NUM_ANCHORS, 1, 1)
    cx = (torch.sigmoid(p[..., 0]) + cols) * stride
    cy = (torch.sigmoid(p[..., 1]) + rows) * stride
    w = pw * torch.exp(p[..., 2])
    h = ph * torch.exp(p[..., 3])
    return {
        "boxes": torch.stack([cx, cy, w, h], dim=-1),
        "conf_logit": p[..., 4],
        "class_logits": p[..., 5:],
    }


def encode_box(cx: float, cy: float, w: float, h: float, anchor, stride: int,
               eps: float = 1e-9) -> tuple[int, int, np.ndarray]:
    """Inverse transform: the responsible cell ``(i, j)`` and ``(tx, ty, tw, th)``."""
    j = int(np.floor(cx / stride))
    i = int(np.floor(cy / stride))
    fx = np.clip(cx / stride - j, eps, 1 - eps)
    fy = np.clip(cy / stride - i, eps, 1 - eps)
    t = np.array([
        np.log(fx / (1 - fx)),
        np.log(fy / (1 - fy)),
        np.log(w / anchor[0]),
        np.log(h / anchor[1]),
    ])
    return i, j, t


def decode_boxes(raw: list[torch.Tensor], anchors, conf_thresh: float = 0.25) -> list[list[Detection]]:
    """Decode every image of a batch into detections above ``conf_thresh``."""
    batch = raw[0].shape[0]
    out: list[list[Detection]] = [[] for _ in range(batch)]
    with torch.no_grad():
        for scale, (r, stride) in enumerate(zip(raw, STRIDES)):
            d = decode_scale(r.double(), anchors_for_scale(anchors, scale), stride)
            conf = torch.sigmoid(d["conf_logit"])
            probs = torch.softmax(d["class_logits"], dim=-1)
            for b in range(batch):
                keep = torch.nonzero(conf[b] >= conf_thresh, as_tuple=False)
                for a, i, j in keep.tolist():
                    cx, cy, w, h = d["boxes"][b, a, i, j].tolist()
                    pr = probs[b, a, i, j]
                    out[b].append(Detection(
                        cx, cy, w, h, CATEGORY_ORDER[int(torch.argmax(pr))],
                        float(conf[b, a, i, j]), tuple(pr.tolist()),
                    ))
    return out
