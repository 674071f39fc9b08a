"""Video clips: one change event per clip, judged by a vote over frames.

Shows the synthesized clip categories, checks that the recurrent model
gives the same outputs streamed frame by frame as in one batched call, and
scores the labels themselves with the clip vote (top-1 should be 1.0).

    python demos/05_temporal_clips.py
"""

import argparse
from pathlib import Path

import torch

from hmcd.dataset import group_clips, load_clip_categories, load_dataset, synthesize_dataset
from hmcd.diffnet.model import DiffNet, ModelConfig
from hmcd.evaluation import clip_classify, labels_as_detections, top1
from hmcd.scene import make_vscd_scene
from hmcd.training import to_tensors


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="demo_out/clips")
    args = ap.parse_args()
    out = Path(args.out)
    map_path, frames_path = make_vscd_scene(out / "scene", 5, 8, 0, 128)
    synthesize_dataset("vscd", map_path, frames_path, out / "data", 0)
    samples = load_dataset(out / "data")
    truth = load_clip_categories(out / "data")
    clips = group_clips(samples)

    verdicts = []
    for cid, frames in clips.items():
        v = clip_classify([labels_as_detections(f.boxes) for f in frames], 3, cid)
        verdicts.append(v)
        print(f"{cid}: truth {truth[cid].value:>8}  vote counts {v.to_json()['counts']}")
    print(f"top-1 of the label oracle: {top1(verdicts, truth):.2f}")

    torch.manual_seed(0)
    model = DiffNet(ModelConfig("tiny", 128, samples[0].raster.shape[2], temporal=True)).eval()
    images, rasters = to_tensors(next(iter(clips.values())))
    with torch.no_grad():
        batch, _ = model.forward_temporal(images[None], rasters[None])
        state, same = None, True
        for t in range(images.shape[0]):
            step, state = model.step(images[t:t + 1], rasters[t:t + 1], state)
            same &= all(torch.equal(a, b) for a, b in zip(step, batch[t]))
    print(f"streaming == batched (bitwise): {same}")


if __name__ == "__main__":
    main()
