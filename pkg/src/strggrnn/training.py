"""Online training: one gradient step per streamed window."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .config import TrainerConfig
from .data import SceneMap, TrajectoryWindow
from .errors import NumericalError
from .kernel import N_SLOTS
from .metrics import ade, fde, loss
from .model import Model
from .numerics import SGD, Tape, backward, mul, value_of

log = logging.getLogger(__name__)

RUNLOG_FIELDS = ("window_id", "loss", "ade", "fde", "proposal_idx", "wall_ms")


def apply_dropout(features, keep: float, seed: int | None = None, training: bool = True,
                  rng: np.random.Generator | None = None):
    """Inverted dropout: keep each entry with probability ``keep`` and rescale by ``1 / keep``."""
    if not training or keep >= 1.0:
        return features
    rng = rng if rng is not None else np.random.default_rng(seed)
    mask = (rng.random(value_of(features).shape) < keep) / keep
    return mul(features, mask)


class SiteDropout:
    """Dropout callable for :meth:`Model.forward` that reuses one mask per site."""

    def __init__(self, keep: float, seed):
        self.keep = keep
        self.rng = np.random.default_rng(seed)
        self.masks: dict[str, np.ndarray] = {}

    def __call__(self, x, site: str):
        if self.keep >= 1.0:
            return x
        if site not in self.masks:
            self.masks[site] = (self.rng.random(value_of(x).shape) < self.keep) / self.keep
        return mul(x, self.masks[site])


def window_seed(seed: int, epoch: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, index]).generate_state(1)[0])


def padded_truth(window: TrajectoryWindow):
    """Ground truth and mask lifted to the model's fixed pedestrian slots."""
    k, l = window.n_peds, window.pred_len
    truth = np.zeros((N_SLOTS, l, 2))
    mask = np.zeros((N_SLOTS, l), dtype=bool)
    truth[:k] = window.future
    mask[:k] = window.presence_mask
    return truth, mask


@dataclass
class StepResult:
    loss: float
    ade: float
    fde: float
    proposal_idx: int
    band: object = None
    A: np.ndarray | None = None


def train_step(window: TrajectoryWindow, model: Model, config: TrainerConfig, scene: SceneMap | None = None,
               optimizer: SGD | None = None, seed: int = 0) -> tuple[float, Model, StepResult]:
    """Forward (with proposal selection), objective, backward and one descent step.

    The recurrent state for the next window is committed on success. Only the
    selected proposal's path is differentiated; the NMF solve is a constant.
    """
    optimizer = optimizer or SGD(config.lr, config.decay)
    tape = Tape()
    groups = model.tracked(tape)
    dropout = SiteDropout(config.dropout_keep, seed)
    res = model.forward(window, scene, groups=groups, dropout=dropout, P=config.P, base_seed=seed,
                        workers=config.workers)
    truth, mask = padded_truth(window)
    L = loss(res.pred, truth, mask)
    if not np.isfinite(L.value).all():
        where = tape.first_nonfinite()
        detail = f"record {where[0]} ({where[1]})" if where else "the loss"
        raise NumericalError(f"non-finite loss; first non-finite value at {detail}")
    grads = backward(tape, L)
    model.load_params(optimizer.step(model.params(), grads))
    model.commit(res)
    model.trained = True
    value = float(L.value[0, 0])
    step = StepResult(value, ade(res.tracks, window.future, window.presence_mask),
                      fde(res.tracks, window.future, window.presence_mask), res.selected, res.band, res.A)
    return value, model, step


@dataclass
class RunLog:
    rows: list[dict] = field(default_factory=list)

    def append(self, row: dict) -> None:
        if self.rows and row["window_id"] <= self.rows[-1]["window_id"]:
            raise ValueError("run log window ids must increase")
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def losses(self) -> np.ndarray:
        return np.array([r["loss"] for r in self.rows])


def _fmt(row: dict) -> dict:
    return {k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()}


def online_run(windows: Sequence[TrajectoryWindow], model: Model, config: TrainerConfig,
               scenes: dict[str, SceneMap] | None = None, log_path=None, band_sink=None) -> RunLog:
    """Stream the windows ``config.epochs`` times, updating after every window.

    The recurrent state is reset at the start of each epoch and whenever the
    stream moves to another data set. Rows go to ``log_path`` (CSV) as they
    are produced; ``band_sink(window_id, band)`` receives each proposal band.
    """
    runlog = RunLog()
    if not windows:
        log.warning("online_run: empty window stream")
        return runlog
    scenes = scenes or {}
    optimizer = SGD(config.lr, config.decay)
    fh = writer = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=RUNLOG_FIELDS)
        writer.writeheader()
    try:
        wid = 0
        for epoch in range(config.epochs):
            model.reset_state()
            current = None
            for i, window in enumerate(windows):
                if window.dataset != current:
                    model.reset_state()
                    current = window.dataset
                t0 = time.perf_counter()
                _, model, step = train_step(window, model, config, scenes.get(window.dataset), optimizer,
                                            seed=window_seed(config.seed, epoch, i))
                row = {"window_id": wid, "loss": step.loss, "ade": step.ade, "fde": step.fde,
                       "proposal_idx": step.proposal_idx,
                       "wall_ms": round((time.perf_counter() - t0) * 1000.0, 3)}
                runlog.append(row)
                if band_sink is not None and step.band is not None:
                    band_sink(wid, step.band)
                if writer is not None:
                    writer.writerow(_fmt(row))
                    fh.flush()
                wid += 1
            optimizer.end_epoch()
    finally:
        if fh is not None:
            fh.close()
    return runlog


def synthetic_scene(n_peds: int = 5, n_frames: int = 60, frame_interval: float = 0.4, seed: int = 0,
                    speed: tuple[float, float] = (0.8, 1.6)):
    """Constant-velocity pedestrians as ``FrameRecord`` rows (ids from 1, frames 0..n-1)."""
    from .data import FrameRecord
    rng = np.random.default_rng(seed)
    records = []
    for p in range(n_peds):
        start = rng.uniform(-5, 5, size=2)
        angle = rng.uniform(0, 2 * np.pi)
        v = rng.uniform(*speed) * np.array([np.cos(angle), np.sin(angle)])
        for f in range(n_frames):
            x, y = start + v * f * frame_interval
            records.append(FrameRecord(f, p + 1, float(x), float(y)))
    records.sort(key=lambda r: (r.frame_id, r.ped_id))
    return records


def iter_windows(datasets: Iterable[Sequence[TrajectoryWindow]]) -> list[TrajectoryWindow]:
    return [w for ws in datasets for w in ws]
