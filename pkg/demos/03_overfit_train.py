"""Overfit the tiny detector on a handful of synthetic frames.

A sanity run: with enough steps the loss drops towards zero and the model
reproduces its own training labels. Use ``--steps`` to trade time for fit.

    python demos/03_overfit_train.py --out /tmp/hmcd_demo3 --steps 300
"""

import argparse
import logging
from pathlib import Path

from hmcd.dataset import load_dataset, synthesize_dataset
from hmcd.evaluation import map_metric
from hmcd.scene import make_sicd_scene
from hmcd.training import NmsConfig, TrainConfig, predict, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="demo_out/overfit")
    ap.add_argument("--frames", type=int, default=8)
    ap.add_argument("--steps", type=int, default=300)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = Path(args.out)

    map_path, frames_path = make_sicd_scene(out / "scene", args.frames, 0, 128)
    synthesize_dataset("sicd", map_path, frames_path, out / "data", 0)
    samples = load_dataset(out / "data")

    cfg = TrainConfig(input_size=128, batch_size=len(samples), learning_rate=2e-3, lr_schedule="cosine",
                      epochs=args.steps, target_loss=0.05, log_every=50)
    res = train(samples, cfg, out_dir=out / "run")
    print(f"{len(res.history)} steps, {res.seconds:.0f}s, final loss {res.history[-1]['total']:.4f}")

    dets = predict(res.model, res.anchors, samples, NmsConfig())
    m = map_metric(dets, [s.boxes for s in samples])
    print(f"training-set mAP@0.5 = {m.map:.3f}  per category "
          f"{ {c.value: round(v, 3) for c, v in m.ap.items()} }")
    print(f"checkpoint {res.checkpoint}, loss curve {out / 'run' / 'loss.csv'}")


if __name__ == "__main__":
    main()
