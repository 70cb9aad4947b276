"""Command line: ingest, train, eval, analyze, bench and rerun.

Every run writes ``manifest.json`` at the root of ``--out`` before it starts
and finalizes it afterwards; ``rerun --manifest`` replays the recorded
command. Failures print one line to stderr::

    strggrnn: error kind=<kind> exit=<code> msg="<reason>"

Exit codes: 0 ok, 2 I/O, 3 usage or bad input, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, checkpoint
from .config import TrainerConfig, load_config
from .data import (
    MAX_PEDESTRIANS, SceneMap, TrajectoryWindow, build_windows, leave_one_out_splits, load_scene_map,
    load_trajectories,
)
from .errors import FormatError, StrError, UsageError
from .evaluation import (
    METRIC_FIELDS, WINDOW_FIELDS, bench_sampling, cardinality_stats, density_histogram, emit_plotdata,
    evaluate, write_metrics_csv,
)
from .kernel import VARIANTS, Variant, check_inputs
from .model import Model
from .recommender import band_rows, write_band_csv
from .training import RUNLOG_FIELDS, online_run

log = logging.getLogger("strggrnn")

MANIFEST = "manifest.json"
BENCH_COUNTS = (1000, 2000, 10000, 20000)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- helpers -----------------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _window_to_json(w: TrajectoryWindow) -> dict:
    return {
        "ped_ids": list(map(int, w.ped_ids)), "start_frame": int(w.start_frame), "dataset": w.dataset,
        "observed": w.observed.tolist(), "future": w.future.tolist(),
        "presence_mask": w.presence_mask.astype(int).tolist(),
        "vislets": None if w.vislets is None else w.vislets.tolist(),
    }


def _window_from_json(d: dict) -> TrajectoryWindow:
    return TrajectoryWindow(
        list(d["ped_ids"]), np.array(d["observed"], dtype=np.float64), np.array(d["future"], dtype=np.float64),
        np.array(d["presence_mask"], dtype=bool),
        None if d["vislets"] is None else np.array(d["vislets"], dtype=np.float64),
        int(d["start_frame"]), d["dataset"])


def _canonical(payload) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()


def write_archive(windows, path, meta: dict) -> str:
    payload = {"meta": meta, "windows": [_window_to_json(w) for w in windows]}
    digest = hashlib.sha256(_canonical(payload)).hexdigest()
    Path(path).write_text(json.dumps({"checksum": digest, "payload": payload}, sort_keys=True))
    return digest


def read_archive(path) -> tuple[list[TrajectoryWindow], dict]:
    try:
        doc = json.loads(Path(path).read_text())
        payload, digest = doc["payload"], doc["checksum"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: not a window archive ({exc})") from None
    if hashlib.sha256(_canonical(payload)).hexdigest() != digest:
        raise FormatError(f"{path}: checksum mismatch")
    return [_window_from_json(d) for d in payload["windows"]], payload["meta"]


def load_windows(path, name: str, obs: int, pred: int, stride: int) -> list[TrajectoryWindow]:
    """Windows from a trajectory file, or from an ingested ``.json`` archive."""
    path = Path(path)
    if path.suffix == ".json":
        windows, _ = read_archive(path)
        return windows
    return build_windows(load_trajectories(path), obs, pred, stride, MAX_PEDESTRIANS, dataset=name)


@dataclasses.dataclass
class RunManifest:
    command: str
    args: dict
    seed: int
    variant: str | None = None
    config: dict = dataclasses.field(default_factory=dict)
    split: dict = dataclasses.field(default_factory=dict)
    inputs: dict = dataclasses.field(default_factory=dict)     # path -> sha256
    outputs: dict = dataclasses.field(default_factory=dict)    # role -> path
    code_version: str = __version__
    status: str = "running"
    wall_seconds: float = 0.0

    def write(self, out: Path) -> Path:
        path = out / MANIFEST
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def _start(out, command: str, args: argparse.Namespace, seed: int = 0) -> tuple[Path, RunManifest]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    recorded = {k: v for k, v in vars(args).items() if k not in ("func", "command")}
    manifest = RunManifest(command, recorded, seed)
    manifest.write(out)
    return out, manifest


def _finish(out: Path, manifest: RunManifest, t0: float) -> None:
    manifest.status = "complete"
    manifest.wall_seconds = round(time.perf_counter() - t0, 3)
    manifest.write(out)


def _write_rows(path, fields, rows) -> None:
    write_metrics_csv(rows, path, fields)


def _parse_counts(text: str) -> list[int]:
    try:
        return [int(float(t)) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"bad count list {text!r}") from None


# -- commands ----------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    t0 = time.perf_counter()
    name = args.name or Path(args.data).stem
    records = load_trajectories(args.data)
    windows = build_windows(records, args.obs, args.pred, args.stride, MAX_PEDESTRIANS, dataset=name)
    if args.map:
        load_scene_map(args.map)   # validate only
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    meta = {"dataset": name, "obs": args.obs, "pred": args.pred, "stride": args.stride,
            "source_sha256": sha256_file(args.data), "map": str(args.map) if args.map else None}
    digest = write_archive(windows, out, meta)
    peds = len({r.ped_id for r in records})
    print(f"windows={len(windows)} pedestrians={peds} checksum={digest} archive={out} "
          f"seconds={time.perf_counter() - t0:.3f}")
    return 0


def _trainer(args) -> tuple[TrainerConfig, dict]:
    run = load_config(args.config)
    changes = {}
    if args.variant:
        changes["variant"] = Variant.parse(args.variant).value
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.workers:
        changes["workers"] = args.workers
    return run.trainer.replace(**changes), run.datasets


def build_model(trainer: TrainerConfig) -> Model:
    return Model(Variant.parse(trainer.variant), pred_len=trainer.pred, seed=trainer.seed, policy=trainer.policy,
                 decode=trainer.decode, h_O_init=trainer.h_O_init, handoff=trainer.handoff, nmf_max_iters=trainer.nmf_max_iters,
                 nmf_tol=trainer.nmf_tol, unit=trainer.unit)


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    trainer, datasets = _trainer(args)
    if not datasets:
        raise UsageError(f"{args.config}: no data sets configured (set.<name>.path = ...)")
    train_names, _ = leave_one_out_splits({n: n for n in datasets}, args.hold_out)
    if not train_names:
        raise UsageError(f"holding out {args.hold_out!r} leaves nothing to train on")
    variant = Variant.parse(trainer.variant)
    out, manifest = _start(args.out, "train", args, trainer.seed)
    manifest.variant, manifest.config = variant.value, trainer.to_dict()
    manifest.split = {"train": train_names, "held_out": args.hold_out}
    windows: list[TrajectoryWindow] = []
    scenes: dict[str, SceneMap] = {}
    for name in train_names:
        entry = datasets[name]
        records = load_trajectories(entry.path)
        manifest.inputs[str(entry.path)] = sha256_file(entry.path)
        if entry.map is not None:
            scenes[name] = load_scene_map(entry.map)
            manifest.inputs[str(entry.map)] = sha256_file(entry.map)
        has_vislets = bool(records) and all(r.has_vislet for r in records)
        try:
            check_inputs(variant, has_vislets, name in scenes)
        except UsageError as exc:
            raise UsageError(f"data set {name}: {exc}") from None
        windows += build_windows(records, trainer.obs, trainer.pred, trainer.stride, trainer.max_size, dataset=name)
    manifest.write(out)
    if not windows:
        raise UsageError("training sets yield no complete windows")

    model = build_model(trainer)
    band_path = out / "bands.csv"
    write_band_csv([], band_path)
    runlog = online_run(windows, model, trainer, scenes, out / "runlog.csv",
                        band_sink=lambda wid, band: write_band_csv(band_rows(band, wid), band_path, append=True))
    ckpt = checkpoint.save(model, out / "model.ckpt", extra={"train": train_names, "held_out": args.hold_out})
    manifest.outputs = {"checkpoint": str(ckpt), "runlog": str(out / "runlog.csv"), "bands": str(band_path)}
    _finish(out, manifest, t0)
    losses = runlog.losses()
    print(f"windows={len(runlog)} final_loss={losses[-1]:.6g} mean_loss={losses.mean():.6g} checkpoint={ckpt}")
    return 0


METRIC_REP_FIELDS = METRIC_FIELDS + ("rep",)


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    if not Path(args.checkpoint).exists():
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    model, meta = checkpoint.load(args.checkpoint)
    if args.variant and Variant.parse(args.variant) is not model.variant:
        raise UsageError(f"checkpoint holds {model.variant.value}, not {Variant.parse(args.variant).value}")
    if args.baseline:
        model = model.zeroed()
    name = args.name or Path(args.test).stem
    windows = load_windows(args.test, name, args.obs, model.pred_len, args.stride)
    if not windows:
        raise UsageError(f"{args.test}: no complete windows to evaluate")
    scenes = {}
    if args.map:
        scene = load_scene_map(args.map)
        scenes = {w.dataset: scene for w in windows}
    spec = VARIANTS[model.variant]
    check_inputs(model.variant, all(w.has_vislets for w in windows), bool(scenes))
    if args.reps < 1:
        raise UsageError("--reps must be >= 1")

    out, manifest = _start(args.out, "eval", args, args.seed)
    manifest.variant = model.variant.value
    manifest.inputs = {str(args.checkpoint): sha256_file(args.checkpoint), str(args.test): sha256_file(args.test)}
    manifest.split = {"test": name}
    manifest.write(out)

    rows, detail = [], []
    for rep in range(args.reps):
        seed = int(np.random.SeedSequence([args.seed, rep]).generate_state(1)[0])
        report = evaluate(model.variant, windows, model, args.P, scenes, seed=seed, workers=args.workers,
                          allow_untrained=args.baseline or args.allow_untrained)
        for r in report.table():
            rows.append({**r, "rep": rep})
        detail += [{**r, "rep": rep} for r in report.rows]
    P_used = args.P if spec.recommender else 1
    for ds in sorted({r["dataset"] for r in rows}):
        sel = [r for r in rows if r["dataset"] == ds]
        a, f = np.array([r["ade"] for r in sel]), np.array([r["fde"] for r in sel])
        rows.append({"dataset": ds, "variant": model.variant.value, "P": P_used, "ade": float(a.mean()),
                     "fde": float(f.mean()), "rep": "mean"})
        rows.append({"dataset": ds, "variant": model.variant.value, "P": P_used, "ade": float(a.std()),
                     "fde": float(f.std()), "rep": "std"})
    write_metrics_csv(rows, out / "metrics.csv", METRIC_REP_FIELDS)
    write_metrics_csv(detail, out / "windows.csv", WINDOW_FIELDS + ("rep",))
    manifest.outputs = {"metrics": str(out / "metrics.csv"), "windows": str(out / "windows.csv")}
    _finish(out, manifest, t0)
    mean = [r for r in rows if r["rep"] == "mean"][0]
    print(f"variant={model.variant.value} P={P_used} reps={args.reps} ade={mean['ade']:.6g} "
          f"fde={mean['fde']:.6g} metrics={out / 'metrics.csv'}")
    return 0


def read_band_csv(path) -> list[tuple[int, int, np.ndarray]]:
    """``(window_id, proposal_idx, adjacency)`` for every row of a band CSV."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or "weights" not in reader.fieldnames:
            raise FormatError(f"{path}: missing header with a 'weights' column")
        for lineno, row in enumerate(reader, 2):
            try:
                w = np.array([float(v) for v in (row["weights"] or "").split()])
                wid, idx = int(row["window_id"]), int(row["proposal_idx"])
            except (ValueError, TypeError, KeyError):
                raise FormatError(f"{path}:{lineno}: malformed band row") from None
            n = math.isqrt(w.size)
            if w.size == 0 or n * n != w.size:
                raise FormatError(f"{path}:{lineno}: {w.size} weights do not form a square adjacency")
            out.append((wid, idx, w.reshape(n, n)))
    if not out:
        raise FormatError(f"{path}: no proposals")
    return out


def cmd_analyze(args) -> int:
    t0 = time.perf_counter()
    bands = read_band_csv(args.inp)
    out, manifest = _start(args.out, "analyze", args)
    manifest.inputs = {str(args.inp): sha256_file(args.inp)}
    manifest.write(out)
    mats = [b[2] for b in bands]
    stats = cardinality_stats(mats, args.tau)
    card = [{"window_id": wid, "proposal_idx": idx, **{k: v for k, v in r.items() if k != "proposal"}}
            for (wid, idx, _), r in zip(bands, stats.rows())]
    _write_rows(out / "cardinality.csv", ("window_id", "proposal_idx", "count", "full", "ratio"), card)
    summary = [{"proposals": len(mats), "n": stats.n, "full": stats.full, "tau": args.tau, "p25": stats.p25,
                "p75": stats.p75, "mean_ratio": float(stats.ratios.mean())}]
    _write_rows(out / "cardinality_summary.csv", tuple(summary[0]), summary)
    series = [{"proposal": i, "count": int(c)} for i, c in enumerate(stats.counts)]
    _write_rows(out / "cardinality_series.csv", ("proposal", "count"), series)
    emit_plotdata(out / "cardinality_series.csv", out / "cardinality.svg", "non-zero edges per proposal")
    hist = density_histogram(mats, args.bins)
    _write_rows(out / "histogram.csv", ("bin_lo", "bin_hi", "count"), hist.rows())
    emit_plotdata(out / "histogram.csv", out / "histogram.svg", "adjacency weight density")
    manifest.outputs = {k: str(out / f) for k, f in (
        ("cardinality", "cardinality.csv"), ("summary", "cardinality_summary.csv"),
        ("histogram", "histogram.csv"), ("cardinality_svg", "cardinality.svg"), ("histogram_svg", "histogram.svg"))}
    if args.runlog:
        curve = []
        with open(args.runlog, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not set(RUNLOG_FIELDS) <= set(reader.fieldnames):
                raise FormatError(f"{args.runlog}: not a run log")
            for lineno, row in enumerate(reader, 2):
                try:
                    curve.append({"window_id": int(row["window_id"]), "loss": float(row["loss"]),
                                  "ade": float(row["ade"])})
                except ValueError:
                    raise FormatError(f"{args.runlog}:{lineno}: malformed run log row") from None
        _write_rows(out / "loss_curve.csv", ("window_id", "loss", "ade"), curve)
        emit_plotdata(out / "loss_curve.csv", out / "loss_curve.svg", "online training loss")
        manifest.outputs["loss_curve_svg"] = str(out / "loss_curve.svg")
    _finish(out, manifest, t0)
    print(f"proposals={len(mats)} n={stats.n} p25={stats.p25:g} p75={stats.p75:g} full={stats.full} out={out}")
    return 0


def cmd_bench(args) -> int:
    t0 = time.perf_counter()
    counts = _parse_counts(args.counts)
    out, manifest = _start(args.out, "bench", args, args.seed)
    rows = bench_sampling(counts, args.scene_size, args.reps, args.seed)
    table = [{"samples": r.samples, "proposals": r.proposals, "seconds": r.seconds, "per_sample": r.per_sample}
             for r in rows]
    _write_rows(out / "timing.csv", ("samples", "proposals", "seconds", "per_sample"), table)
    emit_plotdata(out / "timing.csv", out / "timing.svg", "sampling time")
    manifest.outputs = {"timing": str(out / "timing.csv"), "svg": str(out / "timing.svg")}
    _finish(out, manifest, t0)
    for r in rows:
        print(f"samples={r.samples} proposals={r.proposals} seconds={r.seconds:.4f} per_sample={r.per_sample:.3e}")
    return 0


def cmd_rerun(args) -> int:
    try:
        manifest = json.loads(Path(args.manifest).read_text())
        command, recorded = manifest["command"], dict(manifest["args"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{args.manifest}: not a run manifest ({exc})") from None
    if command not in COMMANDS or command == "rerun":
        raise FormatError(f"{args.manifest}: cannot replay command {command!r}")
    if args.out:
        recorded["out"] = args.out
    ns = build_parser().parse_args([command, *_to_argv(command, recorded)])
    return ns.func(ns)


def _to_argv(command: str, recorded: dict) -> list[str]:
    parser = build_parser()._subcommands[command]
    argv = []
    for action in parser._actions:
        if not action.option_strings or action.dest not in recorded:
            continue
        value = recorded[action.dest]
        flag = action.option_strings[-1]
        if isinstance(action, argparse._StoreTrueAction):
            if value:
                argv.append(flag)
        elif value is not None:
            argv += [flag, str(value)]
    return argv


COMMANDS = {"ingest": cmd_ingest, "train": cmd_train, "eval": cmd_eval, "analyze": cmd_analyze,
            "bench": cmd_bench, "rerun": cmd_rerun}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="strggrnn", description="Online pedestrian trajectory prediction with recommended neighbourhoods.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    subs = {}

    s = subs["ingest"] = sub.add_parser("ingest", help="parse a trajectory file into a windows archive")
    s.add_argument("--data", required=True)
    s.add_argument("--map")
    s.add_argument("--name")
    s.add_argument("--obs", type=int, default=8)
    s.add_argument("--pred", type=int, default=12)
    s.add_argument("--stride", type=int, default=1)
    s.add_argument("--out", required=True, help="archive path (.json)")

    s = subs["train"] = sub.add_parser("train", help="leave-one-out online training")
    s.add_argument("--config", required=True)
    s.add_argument("--variant")
    s.add_argument("--hold-out", dest="hold_out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--out", required=True)

    s = subs["eval"] = sub.add_parser("eval", help="score a checkpoint on a held-out set")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--test", required=True, help="trajectory file or windows archive")
    s.add_argument("--map")
    s.add_argument("--name")
    s.add_argument("--variant")
    s.add_argument("--P", type=int, default=1)
    s.add_argument("--reps", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--obs", type=int, default=8)
    s.add_argument("--stride", type=int, default=1)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--baseline", action="store_true", help="score the zero-parameter residual baseline")
    s.add_argument("--allow-untrained", dest="allow_untrained", action="store_true")
    s.add_argument("--out", required=True)

    s = subs["analyze"] = sub.add_parser("analyze", help="graph cardinality and weight density from a band CSV")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--runlog")
    s.add_argument("--tau", type=float, default=1e-6)
    s.add_argument("--bins", type=int, default=10)
    s.add_argument("--out", required=True)

    s = subs["bench"] = sub.add_parser("bench", help="time adjacency sampling")
    s.add_argument("--counts", default=",".join(map(str, BENCH_COUNTS)))
    s.add_argument("--scene-size", dest="scene_size", type=int, default=20)
    s.add_argument("--reps", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    s = subs["rerun"] = sub.add_parser("rerun", help="replay a run from its manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out")

    for name, parser in subs.items():
        parser.set_defaults(func=COMMANDS[name])
    p._subcommands = subs
    return p


def _report(exc: BaseException, code: int, kind: str) -> int:
    msg = " ".join(str(exc).split()) or type(exc).__name__
    print(f"strggrnn: error kind={kind} exit={code} msg={json.dumps(msg)}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except StrError as exc:
        return _report(exc, exc.exit_code, exc.kind)
    except FloatingPointError as exc:
        return _report(exc, 4, "numerical")
    except OSError as exc:
        return _report(exc, 2, "io")


if __name__ == "__main__":
    sys.exit(main())
