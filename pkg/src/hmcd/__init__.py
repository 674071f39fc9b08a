"""HD-map change detection: map/camera geometry, training-data synthesis,
a two-branch difference detector, and the evaluation protocols around it."""

from .boxes import CATEGORY_ORDER, ChangeBox, ChangeCategory, Detection
from .camera import Intrinsics, Pose, back_project, project, rasterize
from .map_model import ElementKind, HDMap, MapElement, RoiConfig, query_roi

__version__ = "0.1.0"

__all__ = [
    "CATEGORY_ORDER",
    "ChangeBox",
    "ChangeCategory",
    "Detection",
    "ElementKind",
    "HDMap",
    "Intrinsics",
    "MapElement",
    "Pose",
    "RoiConfig",
    "back_project",
    "project",
    "query_roi",
    "rasterize",
]
