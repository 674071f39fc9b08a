"""Pinhole camera model, map-element geometry and camera-view rasterization.

Camera frame convention: x right, y down, z forward (optical axis).
``Pose.rotation`` maps camera-frame vectors into the world frame, so a
world point ``P`` has camera coordinates ``R^T (P - position)``.
Pixel ``(row, col)`` has its center at ``(col + 0.5, row + 0.5)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from PIL import Image
from scipy.spatial.transform import Rotation

from .errors import (
    ContractError,
    DegenerateOrientationError,
    DegenerateProjectionError,
    InvalidDepthError,
    SchemaError,
)
from .map_model import ElementKind, MapElement

FRAMES_SCHEMA_VERSION = "1"
WORLD_UP = np.array([0.0, 0.0, 1.0])
FILL_VALUE = 255
_MIN_DEPTH = 1e-9


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ContractError("focal lengths must be positive")
        if int(self.width) < 1 or int(self.height) < 1:
            raise ContractError("image size must be at least 1x1")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_json(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": int(self.width), "height": int(self.height)}

    @classmethod
    def from_json(cls, d: dict) -> "Intrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True, eq=False)
class Pose:
    """World-from-camera pose; quaternion stored scalar-first (w, x, y, z)."""

    position: np.ndarray
    quaternion: np.ndarray

    def __post_init__(self) -> None:
        q = np.asarray(self.quaternion, dtype=float).reshape(4)
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise ContractError(f"quaternion must have unit norm, got {np.linalg.norm(q)}")
        object.__setattr__(self, "quaternion", q)
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))

    @property
    def rotation(self) -> np.ndarray:
        return Rotation.from_quat(self.quaternion, scalar_first=True).as_matrix()

    @property
    def forward(self) -> np.ndarray:
        fwd = self.rotation[:, 2]
        return fwd / np.linalg.norm(fwd)

    @classmethod
    def from_rotation(cls, position, rotation: np.ndarray) -> "Pose":
        q = Rotation.from_matrix(rotation).as_quat(scalar_first=True)
        return cls(position, q / np.linalg.norm(q))

    @classmethod
    def look_at(cls, position, forward, up=WORLD_UP) -> "Pose":
        """Camera at ``position`` looking along ``forward`` with image-up near ``up``."""
        f = np.asarray(forward, dtype=float)
        f = f / np.linalg.norm(f)
        right = np.cross(f, np.asarray(up, dtype=float))
        if np.linalg.norm(right) < 1e-9:
            raise DegenerateOrientationError("forward is parallel to up")
        right /= np.linalg.norm(right)
        down = np.cross(f, right)
        return cls.from_rotation(position, np.column_stack([right, down, f]))

    def to_json(self) -> dict:
        return {"position": [float(v) for v in self.position],
                "quaternion": [float(v) for v in self.quaternion]}

    @classmethod
    def from_json(cls, d: dict) -> "Pose":
        return cls(d["position"], d["quaternion"])


@dataclass(frozen=True, eq=False)
class CameraFrame:
    image: np.ndarray
    pose: Pose
    intrinsics: Intrinsics
    clip_id: str = ""
    frame_idx: int = 0

    def __post_init__(self) -> None:
        shape = np.shape(self.image)
        if len(shape) != 3 or shape[2] != 3 or shape[:2] != (self.intrinsics.height, self.intrinsics.width):
            raise ContractError(
                f"image shape {shape} does not match intrinsics "
                f"{self.intrinsics.height}x{self.intrinsics.width}x3"
            )
        if self.frame_idx < 0:
            raise ContractError("frame_idx must be non-negative")

    @property
    def name(self) -> str:
        return f"{self.clip_id}_{self.frame_idx:05d}"


def project(points, pose: Pose, K: Intrinsics):
    """Project world points to ``(u, v, depth)``.

    Accepts a single 3-vector (returns floats) or an ``(N, 3)`` array (returns
    arrays). Points behind the camera are projected too; callers cull on
    depth.
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 3)
    cam = (pts - pose.position) @ pose.rotation
    z = cam[:, 2]
    if np.any(np.abs(z) < _MIN_DEPTH):
        raise DegenerateProjectionError("point lies on the camera's principal plane")
    u = K.fx * cam[:, 0] / z + K.cx
    v = K.fy * cam[:, 1] / z + K.cy
    if single:
        return float(u[0]), float(v[0]), float(z[0])
    return u, v, z


def back_project(pixel, depth: float, pose: Pose, K: Intrinsics) -> np.ndarray:
    """Lift a pixel at a given z-depth back to world coordinates."""
    if not depth > 0:
        raise InvalidDepthError(f"depth must be positive, got {depth}")
    u, v = (float(c) for c in np.asarray(pixel, dtype=float).reshape(2))
    ray = np.linalg.solve(K.matrix, depth * np.array([u, v, 1.0]))
    return pose.rotation @ ray + pose.position


def element_corners(e: MapElement) -> np.ndarray:
    """Corners of the element's upright rectangle, shape (4, 3).

    Order: top-left, top-right, bottom-right, bottom-left as seen from the
    side the normal points to.
    """
    horizontal = np.cross(WORLD_UP, e.normal)
    n = np.linalg.norm(horizontal)
    if n < 1e-6:
        raise DegenerateOrientationError(f"element {e.id!r} normal is parallel to world up")
    # viewer's right when looking at the element face (along -normal)
    right = horizontal / n
    half_w = right * (e.width / 2.0)
    half_h = WORLD_UP * (e.height / 2.0)
    c = e.center
    return np.stack([c - half_w + half_h, c + half_w + half_h, c + half_w - half_h, c - half_w - half_h])


def _is_top_left(dx: float, dy: float) -> bool:
    # inside lies where the edge function is positive, y axis points down
    return dy < 0 or (dy == 0 and dx > 0)


def polygon_pixel_mask(polygon_uv: np.ndarray, height: int, width: int) -> np.ndarray:
    """Boolean mask of pixels whose centers lie inside a convex polygon.

    Ties on an edge are owned by top and left edges so adjacent polygons
    never double-cover a pixel.
    """
    poly = np.asarray(polygon_uv, dtype=float).reshape(-1, 2)
    mask = np.zeros((height, width), dtype=bool)
    n = len(poly)
    signed = 0.0
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        signed += x0 * y1 - x1 * y0
    if signed == 0.0:
        return mask
    if signed < 0:
        poly = poly[::-1]

    c0 = max(int(np.floor(poly[:, 0].min() - 0.5)), 0)
    c1 = min(int(np.ceil(poly[:, 0].max() - 0.5)), width - 1)
    r0 = max(int(np.floor(poly[:, 1].min() - 0.5)), 0)
    r1 = min(int(np.ceil(poly[:, 1].max() - 0.5)), height - 1)
    if c1 < c0 or r1 < r0:
        return mask
    px = np.arange(c0, c1 + 1, dtype=float) + 0.5
    py = np.arange(r0, r1 + 1, dtype=float) + 0.5
    gx, gy = np.meshgrid(px, py)
    inside = np.ones_like(gx, dtype=bool)
    for i in range(n):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % n]
        dx, dy = bx - ax, by - ay
        edge = dx * (gy - ay) - dy * (gx - ax)
        if _is_top_left(dx, dy):
            inside &= edge >= 0
        else:
            inside &= edge > 0
    mask[r0:r1 + 1, c0:c1 + 1] = inside
    return mask


class ProjectedElement(NamedTuple):
    element_id: str
    box: np.ndarray | None  # clipped xyxy, None when culled or out of frame
    depth: float  # z-depth of the element center
    corners_uv: np.ndarray | None


def clip_box(xyxy: np.ndarray, width: int, height: int) -> np.ndarray | None:
    x1 = min(max(xyxy[0], 0.0), width)
    x2 = min(max(xyxy[2], 0.0), width)
    y1 = min(max(xyxy[1], 0.0), height)
    y2 = min(max(xyxy[3], 0.0), height)
    if x2 - x1 <= 0 or y2 - y1 <= 0:
        return None
    return np.array([x1, y1, x2, y2])


def project_element(e: MapElement, pose: Pose, K: Intrinsics) -> ProjectedElement:
    corners = element_corners(e)
    cam_z = (np.vstack([corners, e.center]) - pose.position) @ pose.rotation[:, 2]
    if np.any(cam_z <= _MIN_DEPTH):
        return ProjectedElement(e.id, None, float(cam_z[-1]), None)
    u, v, _ = project(corners, pose, K)
    uv = np.column_stack([u, v])
    box = clip_box(np.array([u.min(), v.min(), u.max(), v.max()]), K.width, K.height)
    return ProjectedElement(e.id, box, float(cam_z[-1]), uv)


def rasterize(
    elements: Sequence[MapElement],
    pose: Pose,
    K: Intrinsics,
    kinds: Sequence[ElementKind] = (ElementKind.TRAFFIC_SIGNAL,),
    fill_value: int = FILL_VALUE,
) -> tuple[np.ndarray, list[ProjectedElement]]:
    """Render elements into an ``H x W x len(kinds)`` uint8 raster.

    Each element whose corners all lie in front of the camera is drawn as a
    filled quad in its kind's channel. The second return value lists every
    input element with its clipped image box (None if culled or out of view).
    """
    kinds = [ElementKind(k) for k in kinds]
    raster = np.zeros((K.height, K.width, len(kinds)), dtype=np.uint8)
    projected = []
    for e in elements:
        if e.kind not in kinds:
            raise ContractError(f"element {e.id!r} has kind {e.kind.value!r} with no raster channel")
        p = project_element(e, pose, K)
        projected.append(p)
        if p.box is None:
            continue
        mask = polygon_pixel_mask(p.corners_uv, K.height, K.width)
        raster[..., kinds.index(e.kind)][mask] = fill_value
    return raster, projected


def fill_box(raster: np.ndarray, xyxy, channel: int = 0, fill_value: int = FILL_VALUE) -> None:
    """Paint an axis-aligned box into one raster channel in place."""
    x1, y1, x2, y2 = (float(c) for c in xyxy)
    quad = np.array([[x1, y1], [x2, y1], [x2, y2], [x1, y2]])
    mask = polygon_pixel_mask(quad, raster.shape[0], raster.shape[1])
    raster[..., channel][mask] = fill_value


def read_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB") if im.mode not in ("L", "RGB") else im).copy()


def write_png(path: str | Path, pixels: np.ndarray) -> None:
    arr = np.asarray(pixels, dtype=np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    # fixed PNG settings keep files byte-stable across runs
    Image.fromarray(arr).save(path, format="PNG", optimize=False, compress_level=6)


def frame_record(frame: CameraFrame, image_path: str) -> dict:
    return {
        "image_path": image_path,
        "pose": frame.pose.to_json(),
        "intrinsics": frame.intrinsics.to_json(),
        "clip_id": frame.clip_id,
        "frame_idx": int(frame.frame_idx),
    }


def write_frames_manifest(path: str | Path, records: Sequence[dict]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_frames(path: str | Path) -> list[CameraFrame]:
    """Read a JSON-lines frames manifest; image paths resolve relative to it."""
    path = Path(path)
    frames = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            image = read_png(path.parent / rec["image_path"])
            frames.append(CameraFrame(
                image=image,
                pose=Pose.from_json(rec["pose"]),
                intrinsics=Intrinsics.from_json(rec["intrinsics"]),
                clip_id=str(rec["clip_id"]),
                frame_idx=int(rec["frame_idx"]),
            ))
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    return frames
