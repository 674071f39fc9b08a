"""HD map elements, map files and the region-of-interest query."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ContractError, SchemaError

MAP_SCHEMA_VERSION = "1"
_UNIT_TOL = 1e-6


class ElementKind(str, Enum):
    TRAFFIC_SIGNAL = "traffic_signal"
    TRAFFIC_SIGN = "traffic_sign"


@dataclass(frozen=True, eq=False)
class MapElement:
    """A planar map element: center and facing direction in world meters."""

    id: str
    center: np.ndarray
    normal: np.ndarray
    width: float
    height: float
    kind: ElementKind = ElementKind.TRAFFIC_SIGNAL

    def __post_init__(self) -> None:
        center = np.asarray(self.center, dtype=float).reshape(3)
        normal = np.asarray(self.normal, dtype=float).reshape(3)
        if abs(np.linalg.norm(normal) - 1.0) > _UNIT_TOL:
            raise ContractError(f"element {self.id!r}: normal must be unit length, got {normal}")
        if not (self.width > 0 and self.height > 0):
            raise ContractError(f"element {self.id!r}: width and height must be positive")
        center.setflags(write=False)
        normal.setflags(write=False)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "width", float(self.width))
        object.__setattr__(self, "height", float(self.height))
        object.__setattr__(self, "kind", ElementKind(self.kind))

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "center": [float(v) for v in self.center],
            "normal": [float(v) for v in self.normal],
            "width_m": self.width,
            "height_m": self.height,
            "kind": self.kind.value,
        }

    @classmethod
    def from_json(cls, d: dict) -> "MapElement":
        try:
            return cls(
                id=str(d["id"]),
                center=d["center"],
                normal=d["normal"],
                width=float(d["width_m"]),
                height=float(d["height_m"]),
                kind=ElementKind(d.get("kind", ElementKind.TRAFFIC_SIGNAL.value)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad map element record {d!r}: {exc}") from exc


@dataclass(frozen=True)
class HDMap:
    map_id: str
    elements: tuple[MapElement, ...] = field(default=())

    def __post_init__(self) -> None:
        elements = tuple(self.elements)
        ids = [e.id for e in elements]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ContractError(f"duplicate element ids in map {self.map_id!r}: {dupes}")
        object.__setattr__(self, "elements", elements)

    def __len__(self) -> int:
        return len(self.elements)

    def get(self, element_id: str) -> MapElement:
        for e in self.elements:
            if e.id == element_id:
                return e
        raise KeyError(element_id)

    def to_json(self) -> dict:
        return {"map_id": self.map_id, "elements": [e.to_json() for e in self.elements]}

    @classmethod
    def from_json(cls, d: dict) -> "HDMap":
        if not isinstance(d, dict) or "elements" not in d or "map_id" not in d:
            raise SchemaError("map file needs 'map_id' and 'elements'")
        return cls(str(d["map_id"]), tuple(MapElement.from_json(e) for e in d["elements"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "HDMap":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_json(data)


@dataclass(frozen=True)
class RoiConfig:
    tau_dis: float = 100.0
    tau_ori_cos: float = math.cos(5 * math.pi / 6)

    def __post_init__(self) -> None:
        if not self.tau_dis > 0:
            raise ContractError("tau_dis must be positive")
        if not -1.0 <= self.tau_ori_cos <= 1.0:
            raise ContractError("tau_ori_cos must lie in [-1, 1]")


def query_roi(
    hd_map: HDMap,
    camera_position,
    camera_forward,
    cfg: RoiConfig = RoiConfig(),
) -> list[MapElement]:
    """Return the elements near the camera whose normal faces back at it.

    An element passes when its center is closer than ``cfg.tau_dis`` and the
    cosine between the camera's optical axis and the element normal is below
    ``cfg.tau_ori_cos``. Both comparisons are strict. Elements behind the
    camera are not removed here. Result is sorted by element id.
    """
    position = np.asarray(camera_position, dtype=float).reshape(3)
    forward = np.asarray(camera_forward, dtype=float).reshape(3)
    if abs(np.linalg.norm(forward) - 1.0) > _UNIT_TOL:
        raise ContractError(f"camera_forward must be a unit vector, got norm {np.linalg.norm(forward)}")
    picked = []
    for e in hd_map.elements:
        if np.linalg.norm(position - e.center) >= cfg.tau_dis:
            continue
        if float(forward @ e.normal) >= cfg.tau_ori_cos:
            continue
        picked.append(e)
    return sorted(picked, key=lambda e: e.id)
