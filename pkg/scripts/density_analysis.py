#!/usr/bin/env python3
"""Graph cardinality and weight density of the proposals drawn while training.

Trains a recommender variant on a synthetic scene (or reuses a finished
training directory via --train-dir) and runs ``strggrnn analyze`` on its
proposal bands and run log.

    python3 scripts/density_analysis.py --out runs/density
    python3 scripts/density_analysis.py --out runs/density --train-dir runs/synthetic/str/train
"""
import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from strggrnn.cli import main as cli
from strggrnn.data import write_trajectories
from strggrnn.training import synthetic_scene


def run(argv: list[str]) -> None:
    code = cli(argv)
    if code:
        sys.exit(code)


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--train-dir", type=Path)
    p.add_argument("--variant", default="str_ggrnn")
    p.add_argument("--peds", type=int, default=20)
    p.add_argument("--frames", type=int, default=40)
    p.add_argument("--P", type=int, default=20)
    p.add_argument("--tau", type=float, default=1e-6)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    train = args.train_dir
    if train is None:
        data = args.out / "data"
        data.mkdir(parents=True, exist_ok=True)
        for i, name in enumerate(("scene", "spare")):
            write_trajectories(synthetic_scene(n_peds=args.peds, n_frames=args.frames, seed=args.seed + i),
                               data / f"{name}.txt")
            cells = np.random.default_rng(args.seed + i).integers(0, 256, (32, 32), dtype=np.uint8)
            (data / f"{name}.pgm").write_bytes(b"P5\n32 32\n255\n" + cells.tobytes())
        cfg = args.out / "run.cfg"
        cfg.write_text(f"P = {args.P}\nlr = 0.1\ndropout_keep = 1.0\nseed = {args.seed}\n"
                       "set.scene.path = data/scene.txt\nset.scene.map = data/scene.pgm\n"
                       "set.spare.path = data/spare.txt\nset.spare.map = data/spare.pgm\n")
        train = args.out / "train"
        run(["train", "--config", str(cfg), "--variant", args.variant, "--hold-out", "spare", "--out", str(train)])

    analysis = args.out / "analysis"
    run(["analyze", "--in", str(train / "bands.csv"), "--runlog", str(train / "runlog.csv"),
         "--tau", str(args.tau), "--bins", str(args.bins), "--out", str(analysis)])
    with open(analysis / "histogram.csv", newline="") as fh:
        for r in csv.DictReader(fh):
            print(f"  [{float(r['bin_lo']):.1f}, {float(r['bin_hi']):.1f})  {r['count']}")


if __name__ == "__main__":
    main()
