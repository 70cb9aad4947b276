"""Trajectory ingestion, observation/prediction windows and scene maps."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, UsageError

log = logging.getLogger(__name__)

MAX_PEDESTRIANS = 20
GRID_SIDE = 8
ETH_UCY_SETS = ("ETH-Univ", "Hotel", "Zara1", "Zara2", "Zara3", "UCY-Univ")


@dataclass(frozen=True, order=True)
class FrameRecord:
    frame_id: int
    ped_id: int
    x: float
    y: float
    vx: float | None = None
    vy: float | None = None

    @property
    def has_vislet(self) -> bool:
        return self.vx is not None


@dataclass
class TrajectoryWindow:
    """One observation/prediction slice of a scene.

    Arrays are indexed ``[pedestrian, step, xy]``. Pedestrian rows follow
    ``ped_ids``; absent future steps are ``False`` in ``presence_mask`` and
    hold the last known position as a placeholder.
    """

    ped_ids: list[int]
    observed: np.ndarray
    future: np.ndarray
    presence_mask: np.ndarray
    vislets: np.ndarray | None = None
    start_frame: int = 0
    dataset: str = ""

    @property
    def n_peds(self) -> int:
        return len(self.ped_ids)

    @property
    def obs_len(self) -> int:
        return self.observed.shape[1]

    @property
    def pred_len(self) -> int:
        return self.future.shape[1]

    @property
    def has_vislets(self) -> bool:
        return self.vislets is not None


@dataclass
class SceneMap:
    cells: np.ndarray

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.float64)
        if self.cells.ndim != 2 or self.cells.size == 0:
            raise FormatError(f"scene map must be a non-empty 2-D grid, got shape {self.cells.shape}")
        if np.any(self.cells < 0) or np.any(self.cells > 1):
            raise FormatError("scene map cells must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]


@dataclass
class GridMask:
    cells: np.ndarray = field(default_factory=lambda: np.ones((GRID_SIDE, GRID_SIDE)))

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.float64)
        if self.cells.shape != (GRID_SIDE, GRID_SIDE):
            raise FormatError(f"grid mask must be {GRID_SIDE}x{GRID_SIDE}, got {self.cells.shape}")
        if not np.isin(self.cells, (0.0, 1.0)).all():
            raise FormatError("grid mask must be binary")
        if not self.cells.any():
            raise FormatError("grid mask needs at least one active cell")


# -- trajectories ------------------------------------------------------------

def parse_trajectories(lines: Iterable[str], source: str = "<input>") -> list[FrameRecord]:
    records = []
    ncols = None
    seen = set()
    for lineno, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.replace(",", " ").split()
        if len(parts) not in (4, 6):
            raise FormatError(f"{source}:{lineno}: expected 4 or 6 columns, got {len(parts)}")
        if ncols is None:
            ncols = len(parts)
        elif len(parts) != ncols:
            raise FormatError(f"{source}:{lineno}: mixed column counts ({ncols} then {len(parts)})")
        try:
            nums = [float(p) for p in parts]
        except ValueError:
            raise FormatError(f"{source}:{lineno}: non-numeric field in {text!r}") from None
        if not np.all(np.isfinite(nums)):
            raise FormatError(f"{source}:{lineno}: non-finite value")
        if nums[0] != int(nums[0]) or nums[1] != int(nums[1]):
            raise FormatError(f"{source}:{lineno}: frame and pedestrian ids must be integers")
        key = (int(nums[0]), int(nums[1]))
        if key in seen:
            raise FormatError(f"{source}:{lineno}: duplicate (frame, pedestrian) {key}")
        seen.add(key)
        vis = (nums[4], nums[5]) if len(nums) == 6 else (None, None)
        records.append(FrameRecord(key[0], key[1], nums[2], nums[3], *vis))
    records.sort(key=lambda r: (r.frame_id, r.ped_id))
    return records


def load_trajectories(path) -> list[FrameRecord]:
    """Read whitespace-separated ``frame ped x y [vx vy]`` rows."""
    path = Path(path)
    with path.open() as fh:
        records = parse_trajectories(fh, str(path))
    if not records:
        log.warning("%s: no trajectory records", path)
    return records


def write_trajectories(records: Sequence[FrameRecord], path) -> None:
    with Path(path).open("w") as fh:
        for r in records:
            cols = [str(r.frame_id), str(r.ped_id), repr(r.x), repr(r.y)]
            if r.has_vislet:
                cols += [repr(r.vx), repr(r.vy)]
            fh.write("\t".join(cols) + "\n")


def build_windows(records: Sequence[FrameRecord], obs: int = 8, pred: int = 12, stride: int = 1,
                  max_peds: int = MAX_PEDESTRIANS, dataset: str = "") -> list[TrajectoryWindow]:
    """Slide an ``obs + pred`` frame window over the recording.

    Pedestrians missing from any observed frame are dropped, as are those
    never seen during the prediction span. When more than ``max_peds``
    qualify, the ones with the most observed future steps are kept (ties go
    to the lower id).
    """
    if obs < 1 or pred < 1 or stride < 1:
        raise UsageError("obs, pred and stride must all be >= 1")
    frames = sorted({r.frame_id for r in records})
    by_frame: dict[int, dict[int, FrameRecord]] = {}
    for r in records:
        by_frame.setdefault(r.frame_id, {})[r.ped_id] = r
    with_vislets = bool(records) and records[0].has_vislet

    windows = []
    span = obs + pred
    for start in range(0, len(frames) - span + 1, stride):
        obs_frames = frames[start:start + obs]
        fut_frames = frames[start + obs:start + span]
        eligible = set(by_frame[obs_frames[0]])
        for f in obs_frames[1:]:
            eligible &= set(by_frame[f])
        presence = {p: [p in by_frame[f] for f in fut_frames] for p in eligible}
        peds = [p for p in eligible if any(presence[p])]
        if not peds:
            continue
        peds.sort(key=lambda p: (-sum(presence[p]), p))
        peds = sorted(peds[:max_peds])

        observed = np.array([[(by_frame[f][p].x, by_frame[f][p].y) for f in obs_frames] for p in peds])
        future = np.empty((len(peds), pred, 2))
        for i, p in enumerate(peds):
            last = observed[i, -1]
            for j, f in enumerate(fut_frames):
                rec = by_frame[f].get(p)
                if rec is not None:
                    last = (rec.x, rec.y)
                future[i, j] = last
        vislets = None
        if with_vislets:
            vislets = np.array([[(by_frame[f][p].vx, by_frame[f][p].vy) for f in obs_frames] for p in peds])
        windows.append(TrajectoryWindow(
            ped_ids=peds, observed=observed, future=future,
            presence_mask=np.array([presence[p] for p in peds], dtype=bool),
            vislets=vislets, start_frame=obs_frames[0], dataset=dataset,
        ))
    if not windows:
        log.warning("no complete %d+%d window in %d frames", obs, pred, len(frames))
    return windows


# -- scene maps --------------------------------------------------------------

def _read_pgm(data: bytes, source: str) -> np.ndarray:
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise FormatError(f"{source}: not a P2/P5 PGM file")
    tokens: list[bytes] = []
    pos = 2
    # header: width, height, maxval; '#' comments allowed
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    width, height, maxval = (int(t) for t in tokens)
    if maxval <= 0:
        raise FormatError(f"{source}: invalid maxval {maxval}")
    if magic == b"P2":
        body = data[pos:].split()
        pixels = np.array([int(t) for t in body], dtype=np.float64)
    else:
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        pixels = np.frombuffer(data[pos + 1:], dtype=dtype).astype(np.float64)
    if pixels.size < width * height:
        raise FormatError(f"{source}: expected {width * height} pixels, found {pixels.size}")
    return pixels[:width * height].reshape(height, width) / maxval


def _read_csv_grid(text: str, source: str) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rows.append([float(v) for v in line.split(",")])
        except ValueError:
            raise FormatError(f"{source}:{lineno}: non-numeric cell") from None
        if len(rows[-1]) != len(rows[0]):
            raise FormatError(f"{source}:{lineno}: non-rectangular grid ({len(rows[-1])} vs {len(rows[0])} cells)")
    if not rows:
        raise FormatError(f"{source}: empty grid")
    grid = np.array(rows)
    lo, hi = grid.min(), grid.max()
    if lo < 0 or hi > 1:
        grid = (grid - lo) / (hi - lo) if hi > lo else np.zeros_like(grid)
    return grid


def load_scene_map(path) -> SceneMap:
    """Load a PGM (P2/P5) image or a comma-separated grid as occupancy in [0, 1]."""
    path = Path(path)
    data = path.read_bytes()
    if data[:2] in (b"P2", b"P5"):
        return SceneMap(_read_pgm(data, str(path)))
    return SceneMap(_read_csv_grid(data.decode(), str(path)))


def leave_one_out_splits(named_sets, held_out_name: str):
    """Split ``{name: data}`` into (training list, held-out data)."""
    items = list(named_sets.items()) if hasattr(named_sets, "items") else list(named_sets)
    names = [n for n, _ in items]
    if held_out_name not in names:
        raise UsageError(f"unknown data set {held_out_name!r}; known: {', '.join(names)}")
    train = [d for n, d in items if n != held_out_name]
    if not train:
        log.warning("holding out %r leaves no training sets", held_out_name)
    return train, dict(items)[held_out_name]
