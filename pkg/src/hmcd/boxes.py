"""Change categories, labelled boxes, detections and plain IoU arithmetic.

Boxes are axis-aligned in pixel coordinates. Pixel ``(row, col)`` covers
``[col, col + 1) x [row, row + 1)`` so an image of width ``W`` spans
``[0, W]`` horizontally. Stored as center/size, converted to corner form
(``x1, y1, x2, y2``) for overlap arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np


class ChangeCategory(str, Enum):
    CORRECT = "correct"
    TO_DEL = "to_del"
    TO_ADD = "to_add"

    @classmethod
    def parse(cls, value: "str | ChangeCategory") -> "ChangeCategory":
        if isinstance(value, ChangeCategory):
            return value
        if value == "be_corrected":
            return cls.CORRECT
        return cls(value)

    @property
    def index(self) -> int:
        """Position in the network's class logits (correct, to_del, to_add)."""
        return CATEGORY_ORDER.index(self)


CATEGORY_ORDER: tuple[ChangeCategory, ...] = (
    ChangeCategory.CORRECT,
    ChangeCategory.TO_DEL,
    ChangeCategory.TO_ADD,
)
NUM_CLASSES = len(CATEGORY_ORDER)


def xyxy_from_cxcywh(cx: float, cy: float, w: float, h: float) -> np.ndarray:
    return np.array([cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0])


@dataclass(frozen=True)
class ChangeBox:
    """A 2D box with a change category, as used for labels."""

    cx: float
    cy: float
    w: float
    h: float
    category: ChangeCategory
    element_id: str | None = None

    def __post_init__(self) -> None:
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box size must be positive, got w={self.w} h={self.h}")
        object.__setattr__(self, "category", ChangeCategory.parse(self.category))

    @property
    def xyxy(self) -> np.ndarray:
        return xyxy_from_cxcywh(self.cx, self.cy, self.w, self.h)

    @classmethod
    def from_xyxy(cls, xyxy: Sequence[float], category, element_id=None) -> "ChangeBox":
        x1, y1, x2, y2 = (float(v) for v in xyxy)
        return cls((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1, category, element_id)

    def to_json(self) -> dict:
        return {
            "cx": float(self.cx),
            "cy": float(self.cy),
            "w": float(self.w),
            "h": float(self.h),
            "category": self.category.value,
            "element_id": self.element_id,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ChangeBox":
        return cls(
            float(d["cx"]), float(d["cy"]), float(d["w"]), float(d["h"]),
            ChangeCategory.parse(d["category"]), d.get("element_id"),
        )


@dataclass(frozen=True)
class Detection:
    """A scored box. ``category`` may be None for a plain (category-free) detector."""

    cx: float
    cy: float
    w: float
    h: float
    category: ChangeCategory | None
    confidence: float
    class_probs: tuple[float, ...] = field(default=(), compare=False)

    @property
    def xyxy(self) -> np.ndarray:
        return xyxy_from_cxcywh(self.cx, self.cy, self.w, self.h)

    def with_confidence(self, confidence: float) -> "Detection":
        return Detection(self.cx, self.cy, self.w, self.h, self.category,
                         float(confidence), self.class_probs)

    def to_json(self) -> dict:
        return {
            "cx": float(self.cx),
            "cy": float(self.cy),
            "w": float(self.w),
            "h": float(self.h),
            "category": None if self.category is None else self.category.value,
            "confidence": float(self.confidence),
            "class_probs": [float(p) for p in self.class_probs],
        }

    @classmethod
    def from_json(cls, d: dict) -> "Detection":
        cat = d.get("category")
        return cls(
            float(d["cx"]), float(d["cy"]), float(d["w"]), float(d["h"]),
            None if cat is None else ChangeCategory.parse(cat),
            float(d["confidence"]), tuple(d.get("class_probs", ())),
        )


def as_xyxy_array(boxes: Iterable) -> np.ndarray:
    """Stack ChangeBox/Detection objects (or raw 4-vectors) into an (N, 4) array."""
    rows = [b.xyxy if hasattr(b, "xyxy") else np.asarray(b, dtype=float) for b in boxes]
    if not rows:
        return np.zeros((0, 4))
    return np.stack(rows).astype(float)


def box_area(xyxy: np.ndarray) -> np.ndarray:
    xyxy = np.asarray(xyxy, dtype=float)
    return np.clip(xyxy[..., 2] - xyxy[..., 0], 0, None) * np.clip(xyxy[..., 3] - xyxy[..., 1], 0, None)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (N, 4) and (M, 4) corner-form boxes."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0, None)
    inter = wh[..., 0] * wh[..., 1]
    union = box_area(a)[:, None] + box_area(b)[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


def iou(a, b) -> float:
    return float(iou_matrix(np.asarray(a)[None], np.asarray(b)[None])[0, 0])


def intersection_area(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    w = min(a[2], b[2]) - max(a[0], b[0])
    h = min(a[3], b[3]) - max(a[1], b[1])
    return max(w, 0.0) * max(h, 0.0)
