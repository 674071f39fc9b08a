"""A procedural street scene used as a stand-in for recorded camera data.

The world is a straight road along +x with signalised intersections and
roadside boards. Camera images are flat-shaded renderings of that world:
sky/road background with pixel noise, boards, and traffic signals drawn as
dark housings with three lamps. Rendering goes through the same pinhole
model as the rasterizer, so map boxes and image evidence line up exactly.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .camera import (
    CameraFrame,
    Intrinsics,
    Pose,
    element_corners,
    frame_record,
    polygon_pixel_mask,
    project,
    write_frames_manifest,
    write_png,
)
from .map_model import HDMap, MapElement

SIGNAL_HOUSING = (28, 28, 30)
LAMP_COLORS = ((230, 40, 30), (240, 190, 30), (40, 220, 90))
LAMP_OFF = (70, 70, 72)
CAMERA_HEIGHT = 1.6


def default_intrinsics(size: int = 128) -> Intrinsics:
    f = 1.4 * size
    return Intrinsics(fx=f, fy=f, cx=size / 2, cy=size / 2, width=size, height=size)


@dataclass(frozen=True)
class Board:
    """Roadside scenery that is not part of the map."""

    element: MapElement
    color: tuple[int, int, int]


@dataclass(frozen=True)
class SyntheticWorld:
    hd_map: HDMap
    boards: tuple[Board, ...] = field(default=())
    intersections: tuple[float, ...] = field(default=())


def _unit_yaw(yaw: float) -> np.ndarray:
    return np.array([np.cos(yaw), np.sin(yaw), 0.0])


def make_world(
    seed: int = 0,
    n_intersections: int = 8,
    spacing: float = 110.0,
    first: float = 30.0,
) -> SyntheticWorld:
    rng = np.random.default_rng(seed)
    elements: list[MapElement] = []
    boards: list[Board] = []
    xs = tuple(first + k * spacing for k in range(n_intersections))
    for k, x in enumerate(xs):
        n_sig = int(rng.integers(1, 4))
        ys = np.sort(rng.uniform(-3.0, 3.0, size=n_sig))
        for j, y in enumerate(ys):
            yaw = np.pi + rng.uniform(-0.15, 0.15)
            elements.append(MapElement(
                id=f"sig_{k:03d}_{j}",
                center=[x + rng.uniform(-1, 1), y, rng.uniform(3.0, 4.2)],
                normal=_unit_yaw(yaw),
                width=rng.uniform(0.7, 0.9),
                height=rng.uniform(1.8, 2.2),
            ))
        # oncoming-direction head; the orientation test must reject it
        elements.append(MapElement(
            id=f"sig_{k:03d}_back",
            center=[x + 12.0, rng.uniform(-3.0, 3.0), rng.uniform(3.0, 4.2)],
            normal=[1.0, 0.0, 0.0],
            width=0.8,
            height=2.0,
        ))
        for b in range(int(rng.integers(1, 3))):
            side = rng.choice([-1.0, 1.0])
            color = tuple(int(c) for c in rng.integers(60, 230, size=3))
            boards.append(Board(
                MapElement(
                    id=f"board_{k:03d}_{b}",
                    center=[x + rng.uniform(-20, 20), side * rng.uniform(5.0, 8.0), rng.uniform(1.5, 3.5)],
                    normal=_unit_yaw(np.pi + rng.uniform(-0.4, 0.4)),
                    width=rng.uniform(1.0, 3.0),
                    height=rng.uniform(0.8, 2.0),
                ),
                color,
            ))
    return SyntheticWorld(HDMap(f"synthetic_{seed}", tuple(elements)), tuple(boards), xs)


def sample_poses(world: SyntheticWorld, n: int, seed: int = 0,
                 distance: tuple[float, float] = (8.0, 24.0)) -> list[Pose]:
    """Camera poses placed ``distance`` meters before a random intersection."""
    rng = np.random.default_rng(seed)
    poses = []
    for _ in range(n):
        x = world.intersections[int(rng.integers(len(world.intersections)))]
        pos = [x - rng.uniform(*distance), rng.uniform(-1.0, 1.0), CAMERA_HEIGHT]
        poses.append(Pose.look_at(pos, _unit_yaw(rng.uniform(-0.05, 0.05))))
    return poses


def clip_poses(world: SyntheticWorld, n_frames: int, seed: int = 0,
               step: float = 1.5, start_distance: tuple[float, float] = (24.0, 32.0)) -> list[Pose]:
    """Consecutive poses driving straight towards one intersection."""
    rng = np.random.default_rng(seed)
    x = world.intersections[int(rng.integers(len(world.intersections)))]
    x0 = x - rng.uniform(*start_distance)
    y = rng.uniform(-1.0, 1.0)
    forward = _unit_yaw(rng.uniform(-0.04, 0.04))
    return [Pose.look_at([x0 + i * step * forward[0], y + i * step * forward[1], CAMERA_HEIGHT], forward)
            for i in range(n_frames)]


def _disc_mask(u: float, v: float, radius: float, height: int, width: int) -> np.ndarray:
    rows = (np.arange(height) + 0.5)[:, None]
    cols = (np.arange(width) + 0.5)[None, :]
    return (cols - u) ** 2 + (rows - v) ** 2 <= radius ** 2


def _faces_camera(e: MapElement, pose: Pose) -> bool:
    return float(e.normal @ (pose.position - e.center)) > 0


def render_world(
    world: SyntheticWorld,
    pose: Pose,
    K: Intrinsics,
    seed: int = 0,
    hidden: Sequence[str] = (),
) -> tuple[np.ndarray, np.ndarray]:
    """Render a camera image and the per-pixel traffic-signal evidence mask.

    ``hidden`` lists signal ids that are absent from the rendered world.
    """
    rng = np.random.default_rng(seed)
    H, W = K.height, K.width
    rows = (np.arange(H) + 0.5)[:, None] * np.ones((1, W))
    horizon = K.cy
    sky = np.stack([150 + 60 * rows / H, 185 + 40 * rows / H, np.full_like(rows, 235.0)], -1)
    road = np.repeat((95.0 + 25 * (rows - horizon) / H)[..., None], 3, axis=-1)
    img = np.where((rows < horizon)[..., None], sky, road)
    img += rng.normal(0.0, 6.0, size=img.shape)

    drawables = [(b.element, "board", b.color) for b in world.boards]
    drawables += [(e, "signal", None) for e in world.hd_map.elements if e.id not in set(hidden)]
    depth_of = []
    for e, kind, color in drawables:
        d = float((e.center - pose.position) @ pose.rotation[:, 2])
        depth_of.append(d)
    evidence = np.zeros((H, W), dtype=bool)
    for idx in np.argsort(depth_of, kind="stable")[::-1]:
        e, kind, color = drawables[idx]
        corners = element_corners(e)
        if np.any((corners - pose.position) @ pose.rotation[:, 2] <= 0.1) or not _faces_camera(e, pose):
            continue
        u, v, _ = project(corners, pose, K)
        mask = polygon_pixel_mask(np.column_stack([u, v]), H, W)
        if kind == "board":
            img[mask] = color
            evidence &= ~mask
            continue
        img[mask] = SIGNAL_HOUSING
        evidence |= mask
        lit = zlib.crc32(e.id.encode()) % 3
        for i, offset in enumerate((1.0, 0.0, -1.0)):
            lamp = e.center + np.array([0.0, 0.0, offset * e.height / 3.2]) + 0.02 * e.normal
            lu, lv, ld = project(lamp, pose, K)
            radius = 0.3 * e.width * K.fx / ld
            disc = _disc_mask(lu, lv, radius, H, W) & mask
            img[disc] = LAMP_COLORS[lit] if i == lit else LAMP_OFF
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), evidence


def render_frames(world: SyntheticWorld, poses: Sequence[Pose], K: Intrinsics,
                  clip_id: str, seed: int = 0) -> list[CameraFrame]:
    frames = []
    for i, pose in enumerate(poses):
        image, _ = render_world(world, pose, K, seed=hash_seed(seed, clip_id, i))
        frames.append(CameraFrame(image, pose, K, clip_id=clip_id, frame_idx=i))
    return frames


def hash_seed(*parts) -> int:
    return zlib.crc32("/".join(str(p) for p in parts).encode())


def write_scene(out_dir: str | Path, world: SyntheticWorld, frames: Sequence[CameraFrame]) -> tuple[Path, Path]:
    """Write ``map.json``, ``frames.jsonl`` and ``images/*.png``; return the two file paths."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    map_path = out / "map.json"
    world.hd_map.save(map_path)
    records = []
    for f in frames:
        rel = f"images/{f.name}.png"
        write_png(out / rel, f.image)
        records.append(frame_record(f, rel))
    manifest = out / "frames.jsonl"
    write_frames_manifest(manifest, records)
    return map_path, manifest


def make_sicd_scene(out_dir, n_frames: int, seed: int = 0, size: int = 128) -> tuple[Path, Path]:
    """Generate a world plus ``n_frames`` independent views of it on disk."""
    world = make_world(seed)
    K = default_intrinsics(size)
    poses = sample_poses(world, n_frames, seed=seed)
    frames = []
    for i, pose in enumerate(poses):
        image, _ = render_world(world, pose, K, seed=hash_seed(seed, "sicd", i))
        frames.append(CameraFrame(image, pose, K, clip_id="sicd", frame_idx=i))
    return write_scene(out_dir, world, frames)


def make_vscd_scene(out_dir, n_clips: int, clip_len: int, seed: int = 0, size: int = 128) -> tuple[Path, Path]:
    world = make_world(seed)
    K = default_intrinsics(size)
    frames = []
    for c in range(n_clips):
        clip_id = f"clip{c:04d}"
        poses = clip_poses(world, clip_len, seed=hash_seed(seed, clip_id))
        frames.extend(render_frames(world, poses, K, clip_id, seed=seed))
    return write_scene(out_dir, world, frames)
