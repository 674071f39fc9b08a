"""Synthetic change labels for single images and for video clips.

Single images: every visible map element is randomly kept (``correct``) or
dropped from the raster input (``to_add``, the map misses a real element),
and optionally one phantom element is painted into the raster only
(``to_del``). Clips: the same is done on a keyframe, the labels are lifted
to 3D and re-projected into every frame of the clip.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .boxes import ChangeBox, ChangeCategory, intersection_area
from .camera import (
    CameraFrame,
    ProjectedElement,
    back_project,
    fill_box,
    polygon_pixel_mask,
    project_element,
    rasterize,
)
from .errors import ContractError
from .map_model import ElementKind, HDMap, MapElement, RoiConfig, query_roi

log = logging.getLogger(__name__)

DEFAULT_P_DEL = 0.5
DEFAULT_PRIOR_THRESHOLD = 2
LABELS_SCHEMA_VERSION = "1"


@dataclass(frozen=True, eq=False)
class PriorRegion:
    mask: np.ndarray
    threshold: int
    counts: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class Label3D:
    world_center: np.ndarray
    category: ChangeCategory
    width: float
    height: float
    element_id: str | None = None
    normal: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not (self.width > 0 and self.height > 0):
            raise ContractError("Label3D extents must be positive")


class SicdSample(NamedTuple):
    raster: np.ndarray
    boxes: list[ChangeBox]
    projected: list[ProjectedElement]


class VscdFrame(NamedTuple):
    frame: CameraFrame
    raster: np.ndarray
    boxes: list[ChangeBox]


@dataclass
class VscdClip:
    frames: list[VscdFrame]
    labels3d: list[Label3D]
    keyframe_index: int


def _box_mask(xyxy, height: int, width: int) -> np.ndarray:
    x1, y1, x2, y2 = (float(c) for c in xyxy)
    return polygon_pixel_mask(np.array([[x1, y1], [x2, y1], [x2, y2], [x1, y2]]), height, width)


def build_prior_region(
    label_sets: Sequence[Sequence[ChangeBox]],
    image_size: tuple[int, int],
    threshold: int = DEFAULT_PRIOR_THRESHOLD,
) -> PriorRegion:
    """Pixels covered by at least ``threshold`` real traffic-light boxes.

    ``image_size`` is ``(height, width)``.
    """
    if threshold < 1:
        raise ContractError("prior threshold must be >= 1")
    if len(label_sets) == 0:
        raise ContractError("cannot build a prior region from an empty label set")
    H, W = image_size
    counts = np.zeros((H, W), dtype=np.int32)
    for boxes in label_sets:
        for b in boxes:
            counts += _box_mask(b.xyxy, H, W)
    return PriorRegion(counts >= threshold, int(threshold), counts)


def mean_shape(boxes: Sequence[ChangeBox]) -> tuple[float, float] | None:
    """Average (aspect = w / h, height) of a set of boxes."""
    if not boxes:
        return None
    return float(np.mean([b.w / b.h for b in boxes])), float(np.mean([b.h for b in boxes]))


def place_to_del(
    prior: PriorRegion,
    existing_boxes: Sequence[ChangeBox],
    rng: np.random.Generator,
    fallback_shape: tuple[float, float] | None = None,
) -> ChangeBox | None:
    """Drop one phantom-light box into the prior area away from real lights.

    The box center is a uniformly drawn pixel of ``prior.mask`` minus the
    real light boxes. Its aspect ratio and height are the per-image means of
    ``existing_boxes`` (``fallback_shape`` when the image has none). A single
    draw is made: the result is None when the candidate area is empty, the
    box leaves the image, or it touches a real light box.
    """
    H, W = prior.mask.shape
    candidate = prior.mask.copy()
    for b in existing_boxes:
        candidate &= ~_box_mask(b.xyxy, H, W)
    rows, cols = np.nonzero(candidate)
    if len(rows) == 0:
        return None
    shape = mean_shape(existing_boxes) or fallback_shape
    if shape is None:
        return None
    aspect, h = shape
    k = int(rng.integers(len(rows)))
    box = ChangeBox(cols[k] + 0.5, rows[k] + 0.5, aspect * h, h, ChangeCategory.TO_DEL)
    x1, y1, x2, y2 = box.xyxy
    if x1 < 0 or y1 < 0 or x2 > W or y2 > H:
        return None
    if any(intersection_area(box.xyxy, b.xyxy) > 0 for b in existing_boxes):
        return None
    return box


def synthesize_sicd_frame(
    frame: CameraFrame,
    elements: Sequence[MapElement],
    prior: PriorRegion | None,
    rng_seed,
    *,
    p_del: float = DEFAULT_P_DEL,
    fallback_shape: tuple[float, float] | None = None,
    assignment: Sequence[ChangeCategory] | None = None,
    kinds: Sequence[ElementKind] = (ElementKind.TRAFFIC_SIGNAL,),
) -> SicdSample:
    """Synthesize the raster input and change labels for one image.

    ``elements`` are the ROI-filtered map elements for this frame. Each one
    that projects into the image is labelled ``correct`` or ``to_add`` with
    equal probability (or per ``assignment``, in projection order); ``to_add``
    elements are left out of the raster. With probability ``p_del`` a
    ``to_del`` box is placed and painted into the raster.
    """
    rng = np.random.default_rng(rng_seed)
    K = frame.intrinsics
    _, projected = rasterize(elements, frame.pose, K, kinds)
    by_id = {e.id: e for e in elements}
    visible = [p for p in projected if p.box is not None]

    if assignment is None:
        draws = rng.random(len(visible))
        cats = [ChangeCategory.TO_ADD if d < 0.5 else ChangeCategory.CORRECT for d in draws]
    else:
        cats = [ChangeCategory.parse(c) for c in assignment]
        if len(cats) != len(visible):
            raise ContractError(f"assignment has {len(cats)} entries for {len(visible)} visible elements")

    boxes = [ChangeBox.from_xyxy(p.box, c, p.element_id) for p, c in zip(visible, cats)]
    kept = [by_id[b.element_id] for b in boxes if b.category is ChangeCategory.CORRECT]
    raster, _ = rasterize(kept, frame.pose, K, kinds)

    if prior is not None and rng.random() < p_del:
        phantom = place_to_del(prior, boxes, rng, fallback_shape)
        if phantom is not None:
            fill_box(raster, phantom.xyxy, channel=0)
            boxes.append(phantom)
    return SicdSample(raster, boxes, projected)


def estimate_depth_for_del(labels: Sequence[tuple[ChangeBox, float]]) -> float:
    """Mean depth of the keyframe's ``correct`` and ``to_add`` labels."""
    depths = [d for b, d in labels
              if b.category in (ChangeCategory.CORRECT, ChangeCategory.TO_ADD) and d is not None]
    if not depths:
        raise ContractError("no correct/to_add label with known depth to borrow from")
    return float(np.mean(depths))


def _phantom_element(label: Label3D, ident: str) -> MapElement:
    return MapElement(ident, label.world_center, label.normal, label.width, label.height)


def lift_labels(sample: SicdSample, frame: CameraFrame, hd_map: HDMap) -> list[Label3D]:
    """Lift a keyframe's 2D labels into world-space records."""
    K, pose = frame.intrinsics, frame.pose
    depth_of = {p.element_id: p.depth for p in sample.projected}
    labels3d = []
    for b in sample.boxes:
        if b.category is ChangeCategory.TO_DEL:
            continue
        e = hd_map.get(b.element_id)
        labels3d.append(Label3D(e.center, b.category, e.width, e.height, e.id, e.normal))
    for b in sample.boxes:
        if b.category is not ChangeCategory.TO_DEL:
            continue
        try:
            d = estimate_depth_for_del([(x, depth_of.get(x.element_id)) for x in sample.boxes])
        except ContractError:
            log.warning("frame %s: to_del box dropped, no depth reference", frame.name)
            continue
        center = back_project((b.cx, b.cy), d, pose, K)
        # fronto-parallel to the keyframe camera
        labels3d.append(Label3D(
            center, ChangeCategory.TO_DEL, b.w * d / K.fx, b.h * d / K.fy,
            b.element_id, -pose.forward,
        ))
    return labels3d


def synthesize_vscd_clip(
    frames: Sequence[CameraFrame],
    hd_map: HDMap,
    prior: PriorRegion | None,
    rng_seed,
    *,
    roi: RoiConfig = RoiConfig(),
    p_del: float = DEFAULT_P_DEL,
    fallback_shape: tuple[float, float] | None = None,
    assignment: Sequence[ChangeCategory] | None = None,
) -> VscdClip:
    """Synthesize one change event on the middle frame and propagate it.

    Every frame gets a raster without the ``to_add`` elements and with the
    phantom ``to_del`` element, plus labels for all labelled elements that
    project into it. Map elements that were not labelled on the keyframe but
    come into view later are labelled ``correct``.
    """
    if len(frames) < 1:
        raise ContractError("a clip needs at least one frame")
    K = frames[0].intrinsics
    if any(f.intrinsics != K for f in frames):
        raise ContractError("all frames of a clip must share intrinsics")

    key_idx = len(frames) // 2
    key = frames[key_idx]
    key_elems = query_roi(hd_map, key.pose.position, key.pose.forward, roi)
    sample = synthesize_sicd_frame(key, key_elems, prior, rng_seed, p_del=p_del,
                                   fallback_shape=fallback_shape, assignment=assignment)
    labels3d = lift_labels(sample, key, hd_map)

    phantoms = [_phantom_element(l, f"to_del_{i}") for i, l in enumerate(labels3d)
                if l.category is ChangeCategory.TO_DEL]
    labelled = {l.element_id: l.category for l in labels3d if l.element_id is not None}
    to_add_ids = {i for i, c in labelled.items() if c is ChangeCategory.TO_ADD}

    out = []
    for f in frames:
        elems = query_roi(hd_map, f.pose.position, f.pose.forward, roi)
        raster, projected = rasterize(
            [e for e in elems if e.id not in to_add_ids] + phantoms, f.pose, K)
        boxes = []
        for e in elems:
            p = project_element(e, f.pose, K)
            if p.box is None:
                continue
            boxes.append(ChangeBox.from_xyxy(p.box, labelled.get(e.id, ChangeCategory.CORRECT), e.id))
        # to_add elements are kept in the label set even when they leave the
        # ROI on this frame: the camera still sees them
        for eid in sorted(to_add_ids - {e.id for e in elems}):
            p = project_element(hd_map.get(eid), f.pose, K)
            if p.box is not None:
                boxes.append(ChangeBox.from_xyxy(p.box, ChangeCategory.TO_ADD, eid))
        for ph in phantoms:
            p = project_element(ph, f.pose, K)
            if p.box is not None:
                boxes.append(ChangeBox.from_xyxy(p.box, ChangeCategory.TO_DEL, None))
        out.append(VscdFrame(f, raster, boxes))
    return VscdClip(out, labels3d, key_idx)


def labels_to_json(frame_name: str, boxes: Sequence[ChangeBox]) -> dict:
    return {"frame": frame_name, "boxes": [b.to_json() for b in boxes]}


def labels_from_json(d: dict) -> list[ChangeBox]:
    return [ChangeBox.from_json(b) for b in d["boxes"]]
