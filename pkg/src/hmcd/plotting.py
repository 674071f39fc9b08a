"""PNG output: precision-recall curves and difference-feature heatmaps."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import torch  # noqa: E402

from .boxes import ChangeCategory  # noqa: E402
from .camera import write_png  # noqa: E402
from .evaluation import PRCurve, ap_from_curve  # noqa: E402

GRAY = 128


def normalize_heatmap(x: np.ndarray) -> np.ndarray:
    """Min-max scale to uint8; a constant map becomes uniform mid-gray."""
    x = np.asarray(x, dtype=np.float64)
    lo, hi = float(x.min()), float(x.max())
    if not np.isfinite(lo) or not np.isfinite(hi) or hi - lo <= 1e-12 * max(abs(hi), 1.0):
        return np.full(x.shape, GRAY, dtype=np.uint8)
    return np.round((x - lo) / (hi - lo) * 255).astype(np.uint8)


def heatmap_name(scale: int, channel: int) -> str:
    return f"pcd_s{scale}_c{channel}.png"


def write_heatmaps(features: Sequence[torch.Tensor], out_dir: str | Path,
                   channels: Sequence[int] = (0, 1, 2), upscale_to: int | None = None) -> list[Path]:
    """One PNG per (scale, channel) of the difference features of the first image.

    ``upscale_to`` repeats pixels so every map covers the input resolution.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for scale, f in enumerate(features):
        fmap = f[0].detach().cpu().numpy()
        for c in channels:
            if c >= fmap.shape[0]:
                raise IndexError(f"scale {scale} has {fmap.shape[0]} channels, asked for {c}")
            img = normalize_heatmap(fmap[c])
            if upscale_to:
                k = max(upscale_to // img.shape[0], 1)
                img = np.kron(img, np.ones((k, k), dtype=np.uint8))
            path = out / heatmap_name(scale, c)
            write_png(path, img)
            paths.append(path)
    return paths


def plot_pr_curves(curves: Mapping[ChangeCategory, PRCurve], path: str | Path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(5, 4), dpi=100)
    for c, curve in curves.items():
        if curve.num_gt == 0:
            continue
        r = np.r_[0.0, curve.recall]
        p = np.r_[1.0, curve.precision] if len(curve.precision) else np.r_[0.0]
        ax.step(r[:len(p)], p, where="post", label=f"{c.value} (AP {ap_from_curve(curve):.3f})")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    if title:
        ax.set_title(title)
    ax.legend(loc="lower left")
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path
