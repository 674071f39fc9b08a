"""On-disk change-detection datasets: writing synthesized samples and reading them back.

Layout of a dataset directory::

    manifest.jsonl      one record per frame (paths, pose, intrinsics, clip)
    clips.json          frames grouped by clip id, with the clip-level category
    images/<frame>.png  camera image
    rasters/<frame>.png rasterized map input
    labels/<frame>.json change boxes
    labels.tar          deterministic archive of labels/
    summary.json        per-category counts, seed, archive digest
"""

from __future__ import annotations

import hashlib
import io
import json
import tarfile
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .boxes import CATEGORY_ORDER, ChangeBox, ChangeCategory
from .camera import CameraFrame, Intrinsics, Pose, load_frames, rasterize, read_png, write_png
from .map_model import HDMap, RoiConfig, query_roi
from .synthesis import (
    DEFAULT_P_DEL,
    DEFAULT_PRIOR_THRESHOLD,
    LABELS_SCHEMA_VERSION,
    build_prior_region,
    labels_from_json,
    labels_to_json,
    mean_shape,
    synthesize_sicd_frame,
    synthesize_vscd_clip,
)


@dataclass
class Sample:
    name: str
    image: np.ndarray  # H x W x 3 uint8
    raster: np.ndarray  # H x W x C uint8
    boxes: list[ChangeBox]
    clip_id: str
    frame_idx: int
    pose: Pose | None = None
    intrinsics: Intrinsics | None = None


def clip_category(frame_boxes: Iterable[Sequence[ChangeBox]], vote_threshold: int = 3) -> ChangeCategory:
    """Clip-level ground truth: the voting rule applied to the labels themselves."""
    from .evaluation import clip_classify

    return clip_classify([list(b) for b in frame_boxes], vote_threshold).predicted


def _real_boxes(frames, hd_map: HDMap, roi: RoiConfig) -> list[list[ChangeBox]]:
    out = []
    for f in frames:
        elems = query_roi(hd_map, f.pose.position, f.pose.forward, roi)
        _, projected = rasterize(elems, f.pose, f.intrinsics)
        out.append([ChangeBox.from_xyxy(p.box, ChangeCategory.CORRECT, p.element_id)
                    for p in projected if p.box is not None])
    return out


def write_archive(labels_dir: Path, archive: Path) -> str:
    """Tar the label files with fixed metadata; return the archive's SHA-256."""
    buf = io.BytesIO()
    with tarfile.open(fileobj=buf, mode="w", format=tarfile.USTAR_FORMAT) as tar:
        for path in sorted(labels_dir.glob("*.json")):
            data = path.read_bytes()
            info = tarfile.TarInfo(f"labels/{path.name}")
            info.size = len(data)
            info.mtime = 0
            info.mode = 0o644
            tar.addfile(info, io.BytesIO(data))
    archive.write_bytes(buf.getvalue())
    return hashlib.sha256(buf.getvalue()).hexdigest()


def synthesize_dataset(
    mode: str,
    map_path: str | Path,
    frames_path: str | Path,
    out_dir: str | Path,
    seed: int = 0,
    *,
    roi: RoiConfig = RoiConfig(),
    prior_threshold: int = DEFAULT_PRIOR_THRESHOLD,
    p_del: float = DEFAULT_P_DEL,
    vote_threshold: int = 3,
) -> dict:
    """Run SICD (``mode='sicd'``) or VSCD (``mode='vscd'``) synthesis and write a dataset."""
    if mode not in ("sicd", "vscd"):
        raise ValueError(f"unknown synthesis mode {mode!r}")
    hd_map = HDMap.load(map_path)
    frames = load_frames(frames_path)
    if not frames:
        raise ValueError(f"{frames_path}: no frames")
    out = Path(out_dir)
    for sub in ("images", "rasters", "labels"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    real = _real_boxes(frames, hd_map, roi)
    K0 = frames[0].intrinsics
    prior = build_prior_region(real, (K0.height, K0.width), prior_threshold)
    fallback = mean_shape([b for boxes in real for b in boxes])

    results: list[tuple[CameraFrame, np.ndarray, list[ChangeBox]]] = []
    if mode == "sicd":
        for i, f in enumerate(frames):
            elems = query_roi(hd_map, f.pose.position, f.pose.forward, roi)
            s = synthesize_sicd_frame(f, elems, prior, [seed, i], p_del=p_del, fallback_shape=fallback)
            results.append((f, s.raster, s.boxes))
    else:
        by_clip: dict[str, list[CameraFrame]] = defaultdict(list)
        for f in frames:
            by_clip[f.clip_id].append(f)
        for c, clip_id in enumerate(sorted(by_clip)):
            clip_frames = sorted(by_clip[clip_id], key=lambda f: f.frame_idx)
            clip = synthesize_vscd_clip(clip_frames, hd_map, prior, [seed, c], roi=roi,
                                        p_del=p_del, fallback_shape=fallback)
            results.extend((vf.frame, vf.raster, vf.boxes) for vf in clip.frames)

    counts: Counter = Counter()
    clips: dict[str, list[str]] = defaultdict(list)
    clip_boxes: dict[str, list[list[ChangeBox]]] = defaultdict(list)
    with open(out / "manifest.jsonl", "w") as manifest:
        for f, raster, boxes in results:
            name = f.name
            write_png(out / "images" / f"{name}.png", f.image)
            write_png(out / "rasters" / f"{name}.png", raster)
            (out / "labels" / f"{name}.json").write_text(
                json.dumps(labels_to_json(name, boxes), indent=1, sort_keys=True))
            manifest.write(json.dumps({
                "frame": name,
                "image": f"images/{name}.png",
                "raster": f"rasters/{name}.png",
                "labels": f"labels/{name}.json",
                "clip_id": f.clip_id,
                "frame_idx": int(f.frame_idx),
                "pose": f.pose.to_json(),
                "intrinsics": f.intrinsics.to_json(),
            }, sort_keys=True) + "\n")
            counts.update(b.category.value for b in boxes)
            clips[f.clip_id].append(name)
            clip_boxes[f.clip_id].append(boxes)

    clip_manifest = {
        cid: {"frames": names, "category": clip_category(clip_boxes[cid], vote_threshold).value}
        for cid, names in sorted(clips.items())
    }
    (out / "clips.json").write_text(json.dumps(clip_manifest, indent=1, sort_keys=True))
    digest = write_archive(out / "labels", out / "labels.tar")
    summary = {
        "mode": mode,
        "seed": seed,
        "frames": len(results),
        "clips": len(clip_manifest),
        "counts": {c.value: counts.get(c.value, 0) for c in CATEGORY_ORDER},
        "prior_pixels": int(prior.mask.sum()),
        "labels_sha256": digest,
        "labels_schema": LABELS_SCHEMA_VERSION,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    return summary


def load_dataset(root: str | Path) -> list[Sample]:
    root = Path(root)
    samples = []
    for line in (root / "manifest.jsonl").read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        raster = read_png(root / rec["raster"])
        if raster.ndim == 2:
            raster = raster[..., None]
        samples.append(Sample(
            name=rec["frame"],
            image=read_png(root / rec["image"]),
            raster=raster,
            boxes=labels_from_json(json.loads((root / rec["labels"]).read_text())),
            clip_id=rec["clip_id"],
            frame_idx=int(rec["frame_idx"]),
            pose=Pose.from_json(rec["pose"]) if "pose" in rec else None,
            intrinsics=Intrinsics.from_json(rec["intrinsics"]) if "intrinsics" in rec else None,
        ))
    return samples


def group_clips(samples: Sequence[Sample]) -> dict[str, list[Sample]]:
    clips: dict[str, list[Sample]] = defaultdict(list)
    for s in samples:
        clips[s.clip_id].append(s)
    return {k: sorted(v, key=lambda s: s.frame_idx) for k, v in sorted(clips.items())}


def load_clip_categories(root: str | Path) -> dict[str, ChangeCategory]:
    data = json.loads((Path(root) / "clips.json").read_text())
    return {cid: ChangeCategory.parse(v["category"]) for cid, v in data.items()}
