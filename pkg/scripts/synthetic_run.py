#!/usr/bin/env python3
"""Online training on constant-velocity synthetic scenes, scored against the untrained baseline.

Writes one sub-directory per variant under --out plus ``summary.csv`` and
``summary.svg`` comparing held-out ADE/FDE with the zero-parameter residual
baseline.

    python3 scripts/synthetic_run.py --out runs/synthetic --variants lstm_o,st,str
"""
import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from strggrnn.cli import main as cli
from strggrnn.data import write_trajectories
from strggrnn.evaluation import emit_plotdata, write_metrics_csv
from strggrnn.training import synthetic_scene

SETS = ("alpha", "beta", "gamma")


def write_corpus(root: Path, n_peds: int, n_frames: int, seed: int) -> None:
    root.mkdir(parents=True, exist_ok=True)
    for i, name in enumerate(SETS):
        write_trajectories(synthetic_scene(n_peds=n_peds, n_frames=n_frames, seed=seed + i), root / f"{name}.txt")
        cells = np.random.default_rng(seed + i).integers(0, 256, (32, 32), dtype=np.uint8)
        (root / f"{name}.pgm").write_bytes(b"P5\n32 32\n255\n" + cells.tobytes())


def mean_row(path: Path) -> dict:
    with open(path, newline="") as fh:
        return next(r for r in csv.DictReader(fh) if r["rep"] == "mean")


def run(argv: list[str]) -> None:
    code = cli(argv)
    if code:
        sys.exit(code)


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--variants", default="lstm_o,st,str")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--decay", type=float, default=0.85)
    p.add_argument("--P", type=int, default=10)
    p.add_argument("--peds", type=int, default=5)
    p.add_argument("--frames", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    return p.parse_args()


def main() -> None:
    args = parse_args()
    data = args.out / "data"
    write_corpus(data, args.peds, args.frames, args.seed)
    cfg = args.out / "run.cfg"
    lines = [f"epochs = {args.epochs}", f"lr = {args.lr}", f"decay = {args.decay}", "dropout_keep = 1.0",
             f"P = {args.P}", "nmf_max_iters = 100", f"seed = {args.seed}"]
    lines += [f"set.{s}.{k} = data/{s}.{ext}" for s in SETS for k, ext in (("path", "txt"), ("map", "pgm"))]
    cfg.write_text("\n".join(lines) + "\n")

    held = SETS[-1]
    summary = []
    for variant in args.variants.split(","):
        out = args.out / variant
        run(["train", "--config", str(cfg), "--variant", variant, "--hold-out", held, "--out", str(out / "train")])
        scores = {}
        for tag, extra in (("trained", []), ("baseline", ["--baseline"])):
            ev = out / f"eval_{tag}"
            run(["eval", "--checkpoint", str(out / "train" / "model.ckpt"), "--test", str(data / f"{held}.txt"),
                 "--map", str(data / f"{held}.pgm"), "--P", str(args.P), "--out", str(ev), *extra])
            scores[tag] = mean_row(ev / "metrics.csv")
        summary.append({"variant": variant, "ade": float(scores["trained"]["ade"]),
                        "fde": float(scores["trained"]["fde"]), "baseline_ade": float(scores["baseline"]["ade"]),
                        "baseline_fde": float(scores["baseline"]["fde"])})

    fields = ("variant", "ade", "fde", "baseline_ade", "baseline_fde")
    write_metrics_csv(summary, args.out / "summary.csv", fields)
    # numeric copy for the plot: x is the variant's position in the list
    plot = [{"variant_index": i, **{k: r[k] for k in fields[1:]}} for i, r in enumerate(summary)]
    write_metrics_csv(plot, args.out / "summary_plot.csv", ("variant_index",) + fields[1:])
    emit_plotdata(args.out / "summary_plot.csv", args.out / "summary.svg", "held-out error by variant")
    for r in summary:
        print(f"{r['variant']:>8}  ADE {r['ade']:.3f}  FDE {r['fde']:.3f}  "
              f"(baseline {r['baseline_ade']:.3f} / {r['baseline_fde']:.3f})")


if __name__ == "__main__":
    main()
