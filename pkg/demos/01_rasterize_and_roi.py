"""Query the map around a camera and render what it should see.

Builds a small world, picks one pose, keeps the elements that pass the
distance/orientation filter and rasterizes them into a mask plus boxes.

    python demos/01_rasterize_and_roi.py --out /tmp/hmcd_demo1
"""

import argparse
from pathlib import Path

import numpy as np

from hmcd.camera import Intrinsics, Pose, rasterize, write_png
from hmcd.map_model import HDMap, MapElement, query_roi


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="demo_out/rasterize")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    # three signals facing the camera, one behind it, one facing away
    elems = [
        MapElement("near", np.array([20.0, 1.5, 1.0]), np.array([-1.0, 0, 0]), 0.8, 2.0),
        MapElement("far", np.array([60.0, -4.0, 2.0]), np.array([-1.0, 0, 0]), 0.8, 2.0),
        MapElement("side", np.array([35.0, 6.0, 1.5]), np.array([-0.9, -0.43589, 0]), 0.8, 2.0),
        MapElement("behind", np.array([-15.0, 0.0, 1.0]), np.array([1.0, 0, 0]), 0.8, 2.0),
        MapElement("away", np.array([30.0, -1.0, 1.0]), np.array([1.0, 0, 0]), 0.8, 2.0),
    ]
    hd_map = HDMap("demo", elems)
    pose = Pose.look_at([0.0, 0.0, 1.2], [1.0, 0.0, 0.0])
    K = Intrinsics(300.0, 300.0, 160.0, 120.0, 320, 240)

    roi = query_roi(hd_map, pose.position, pose.forward)
    print("in ROI:", [e.id for e in roi])

    raster, projected = rasterize(roi, pose, K)
    for p in projected:
        box = "culled" if p.box is None else np.round(p.box, 1).tolist()
        print(f"  {p.element_id:>5}  depth {p.depth:6.2f} m  box {box}")
    write_png(out / "raster.png", raster[..., 0])
    print(f"filled pixels: {int((raster > 0).sum())}; wrote {out / 'raster.png'}")


if __name__ == "__main__":
    main()
