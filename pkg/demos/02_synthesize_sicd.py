"""Turn a map and camera frames into a labelled change-detection set.

Each frame gets a map raster with some elements removed (they become
``to_add``) and a phantom element inserted where none exists (``to_del``).

    python demos/02_synthesize_sicd.py --out /tmp/hmcd_demo2
"""

import argparse
from collections import Counter
from pathlib import Path

from hmcd.dataset import load_dataset, synthesize_dataset
from hmcd.scene import make_sicd_scene


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="demo_out/sicd")
    ap.add_argument("--frames", type=int, default=12)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)

    map_path, frames_path = make_sicd_scene(out / "scene", args.frames, args.seed, 128)
    summary = synthesize_dataset("sicd", map_path, frames_path, out / "data", args.seed)
    print(f"{summary['frames']} frames, label counts {summary['counts']}")
    print(f"labels.tar sha256 {summary['labels_sha256'][:16]}...")

    samples = load_dataset(out / "data")
    per_frame = Counter(len(s.boxes) for s in samples)
    print("boxes per frame:", dict(sorted(per_frame.items())))
    s = samples[0]
    print(f"first frame {s.name}: image {s.image.shape}, raster {s.raster.shape}")
    for b in s.boxes:
        print(f"  {b.category.value:>8}  xyxy {[round(float(v), 1) for v in b.xyxy]}")


if __name__ == "__main__":
    main()
