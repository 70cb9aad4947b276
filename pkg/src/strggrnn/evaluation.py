"""Scoring, graph statistics and plot emission.

Evaluation walks the test windows in order, carrying the recurrent state the
same way training does. For stochastic (STR) variants each window draws a band
of ``P`` proposals and scores the best of them; the state handed to the next
window always comes from the band's first proposal, which is chosen without
looking at the future. Runs with different ``P`` therefore follow the same
recurrent path and differ only in how many proposals compete per window.
"""
from __future__ import annotations

import copy
import csv
import math
import time
from dataclasses import dataclass, field
from html import escape
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import SceneMap, TrajectoryWindow
from .errors import DomainError, FormatError, UsageError
from .metrics import ade, fde
from .recommender import AdjacencyPolicy, AdjacencyProposal, propose_adjacency

__all__ = [
    "ade", "fde", "MetricReport", "evaluate", "CardinalityStats", "cardinality_stats", "nearest_rank",
    "Histogram", "density_histogram", "BenchRow", "bench_sampling", "emit_plotdata",
    "METRIC_FIELDS", "write_metrics_csv",
]

METRIC_FIELDS = ("dataset", "variant", "P", "ade", "fde")
WINDOW_FIELDS = ("dataset", "window", "ade", "fde", "proposal_idx")


@dataclass
class MetricReport:
    variant: str
    P: int
    rows: list[dict] = field(default_factory=list)   # one per window

    def datasets(self) -> list[str]:
        return sorted({r["dataset"] for r in self.rows})

    def per_dataset(self) -> dict[str, tuple[float, float]]:
        out = {}
        for name in self.datasets():
            sel = [r for r in self.rows if r["dataset"] == name]
            out[name] = (float(np.mean([r["ade"] for r in sel])), float(np.mean([r["fde"] for r in sel])))
        return out

    @property
    def ade(self) -> float:
        return float(np.mean([r["ade"] for r in self.rows])) if self.rows else math.nan

    @property
    def fde(self) -> float:
        return float(np.mean([r["fde"] for r in self.rows])) if self.rows else math.nan

    def table(self) -> list[dict]:
        return [{"dataset": name, "variant": self.variant, "P": self.P, "ade": a, "fde": f}
                for name, (a, f) in self.per_dataset().items()]


def evaluate(variant, windows: Sequence[TrajectoryWindow], model, P: int = 1,
             scenes: dict[str, SceneMap] | None = None, seed: int = 0, workers: int = 1,
             allow_untrained: bool = False) -> MetricReport:
    """Score ``model`` on ``windows``; the model's weights and state are left untouched."""
    from .kernel import Variant, VARIANTS
    from .training import window_seed

    variant = Variant.parse(variant) if isinstance(variant, str) else variant
    if variant is not model.variant:
        raise UsageError(f"model is {model.variant.value}, asked to evaluate {variant.value}")
    if P < 1:
        raise UsageError(f"P must be >= 1, got {P}")
    if not model.trained and not allow_untrained:
        raise UsageError("model has not been trained; pass allow_untrained to score it anyway")
    stochastic = VARIANTS[variant].recommender and model.policy is AdjacencyPolicy.STR_MIN_ERROR
    scenes = scenes or {}
    report = MetricReport(variant.value, P if stochastic else 1)
    saved = copy.deepcopy(model.state)
    try:
        model.reset_state()
        current = None
        for i, w in enumerate(windows):
            if w.dataset != current:
                model.reset_state()
                current = w.dataset
            res = model.forward(w, scenes.get(w.dataset), P=P if stochastic else 1,
                                base_seed=window_seed(seed, 0, i), workers=workers)
            tracks, chosen = res.tracks, res.selected
            if res.band is not None:
                tracks = res.band.trajectories[chosen]
                model.commit(res, res.band.proposals[0].A)
            else:
                model.commit(res)
            report.rows.append({"dataset": w.dataset, "window": i,
                                "ade": ade(tracks, w.future, w.presence_mask),
                                "fde": fde(tracks, w.future, w.presence_mask), "proposal_idx": chosen})
    finally:
        model.state = saved
    return report


def write_metrics_csv(rows: Sequence[dict], path, fields=METRIC_FIELDS) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()})


# -- graph statistics -------------------------------------------------------------


def nearest_rank(values, q: float) -> float:
    """Nearest-rank percentile: the smallest value with at least ``q`` percent at or below it."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        return math.nan
    return float(np.percentile(v, q, method="inverted_cdf"))


@dataclass
class CardinalityStats:
    counts: np.ndarray
    n: int
    tau: float

    @property
    def full(self) -> int:
        return self.n * self.n

    @property
    def ratios(self) -> np.ndarray:
        return self.counts / self.full

    @property
    def p25(self) -> float:
        return nearest_rank(self.counts, 25)

    @property
    def p75(self) -> float:
        return nearest_rank(self.counts, 75)

    def rows(self) -> list[dict]:
        return [{"proposal": i, "count": int(c), "full": self.full, "ratio": float(c) / self.full}
                for i, c in enumerate(self.counts)]


def _matrix(a) -> np.ndarray:
    return np.asarray(a.A if isinstance(a, AdjacencyProposal) else a, dtype=np.float64)


def cardinality_stats(proposals, tau: float = 1e-6) -> CardinalityStats:
    """Edge counts (entries above ``tau``) per adjacency, against the ``n x n`` full graph."""
    if not 0 <= tau < 1:
        raise DomainError(f"threshold must be in [0, 1), got {tau}")
    mats = [_matrix(p) for p in proposals]
    if not mats:
        return CardinalityStats(np.zeros(0, dtype=np.int64), 0, tau)
    n = mats[0].shape[0]
    if any(m.shape != (n, n) for m in mats):
        raise DomainError("all adjacencies must be square and of the same size")
    return CardinalityStats(np.array([int((m > tau).sum()) for m in mats], dtype=np.int64), n, tau)


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    def rows(self) -> list[dict]:
        return [{"bin_lo": float(lo), "bin_hi": float(hi), "count": int(c)}
                for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts)]


def density_histogram(adjacencies, bins: int = 10) -> Histogram:
    """Histogram of every adjacency weight on ``bins`` uniform bins over [0, 1].

    Weights outside [0, 1] are clamped into the end bins so the total mass
    always equals the number of entries.
    """
    if bins < 1:
        raise UsageError(f"bins must be >= 1, got {bins}")
    values = [_matrix(a).ravel() for a in adjacencies]
    flat = np.clip(np.concatenate(values), 0.0, 1.0) if values else np.zeros(0)
    counts, edges = np.histogram(flat, bins=bins, range=(0.0, 1.0))
    return Histogram(edges, counts)


# -- sampling benchmark ---------------------------------------------------------------


@dataclass
class BenchRow:
    samples: int
    proposals: int
    seconds: float

    @property
    def per_sample(self) -> float:
        return self.seconds / self.samples


def bench_sampling(sample_counts: Sequence[int], scene_size: int = 20, reps: int = 5, seed: int = 0,
                   max_iters: int = 500, tol: float = 1e-8) -> list[BenchRow]:
    """Median wall time to draw ``N`` neighbourhood samples, for each ``N``.

    One proposal yields ``scene_size`` samples (one neighbourhood row per
    pedestrian), so ``ceil(N / scene_size)`` proposals are drawn on a fixed
    random scene.
    """
    counts = list(sample_counts)
    if any(b < a for a, b in zip(counts, counts[1:])):
        raise UsageError("sample counts must be ascending")
    if reps < 1 or scene_size < 1 or any(c < 1 for c in counts):
        raise UsageError("reps, scene size and sample counts must be >= 1")
    rng = np.random.default_rng(seed)
    attention = rng.random((scene_size, scene_size))
    attention /= attention.sum(axis=1, keepdims=True)
    C_map = rng.random((8, 8))
    H_t = rng.standard_normal((scene_size, 128))
    rows = []
    for n in counts:
        P = math.ceil(n / scene_size)
        times = []
        for r in range(reps):
            t0 = time.perf_counter()
            for p in range(P):
                propose_adjacency(attention, C_map, H_t, seed + p, index=p, max_iters=max_iters, tol=tol)
            times.append(time.perf_counter() - t0)
        rows.append(BenchRow(n, P, float(np.median(times))))
    return rows


# -- plots -----------------------------------------------------------------------------

_W, _H, _PAD = 640, 360, 48
_COLORS = ("#0d6efd", "#dc3545", "#198754", "#fd7e14", "#6f42c1", "#20c997")


def _read_numeric_csv(path) -> tuple[list[str], list[list[float]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not any(cell.strip() for cell in rows[0]):
        raise FormatError(f"{path}: empty CSV")
    header = [h.strip() for h in rows[0]]
    data = []
    for lineno, row in enumerate(rows[1:], 2):
        if not row or not any(cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise FormatError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
        try:
            data.append([float(c) for c in row])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-numeric value") from None
    if not data:
        raise FormatError(f"{path}: no data rows")
    return header, data


def _svg(body: list[str], title: str) -> str:
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}" '
            f'font-family="sans-serif" font-size="11">\n<title>{escape(title)}</title>\n'
            f'<rect width="{_W}" height="{_H}" fill="#ffffff"/>\n' + "\n".join(body) + "\n</svg>\n")


def _scale(lo: float, hi: float, a: float, b: float):
    span = (hi - lo) or 1.0
    return lambda v: a + (v - lo) / span * (b - a)


def _axes(ylo: float, yhi: float, xlabel: str) -> list[str]:
    out = [f'<line x1="{_PAD}" y1="{_H - _PAD}" x2="{_W - _PAD}" y2="{_H - _PAD}" stroke="#212529"/>',
           f'<line x1="{_PAD}" y1="{_PAD}" x2="{_PAD}" y2="{_H - _PAD}" stroke="#212529"/>',
           f'<text x="{_W / 2:.1f}" y="{_H - 12}" text-anchor="middle">{escape(xlabel)}</text>',
           f'<text x="{_PAD - 4}" y="{_H - _PAD:.1f}" text-anchor="end">{ylo:.4g}</text>',
           f'<text x="{_PAD - 4}" y="{_PAD + 4:.1f}" text-anchor="end">{yhi:.4g}</text>']
    return out


def line_svg(header: list[str], data: list[list[float]], title: str = "") -> str:
    """One polyline per column after the first (which is the x axis)."""
    xs = [r[0] for r in data]
    ys = [v for r in data for v in r[1:] if math.isfinite(v)]
    ylo, yhi = (min(ys), max(ys)) if ys else (0.0, 1.0)
    fx = _scale(min(xs), max(xs), _PAD, _W - _PAD)
    fy = _scale(ylo, yhi, _H - _PAD, _PAD)
    body = _axes(ylo, yhi, header[0])
    for j, name in enumerate(header[1:]):
        pts = " ".join(f"{fx(r[0]):.2f},{fy(r[j + 1]):.2f}" for r in data if math.isfinite(r[j + 1]))
        color = _COLORS[j % len(_COLORS)]
        body.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}">'
                    f'<title>{escape(name)}</title></polyline>')
        body.append(f'<text x="{_W - _PAD}" y="{_PAD - 8 + 12 * j}" text-anchor="end" fill="{color}">'
                    f'{escape(name)}</text>')
    return _svg(body, title)


def bar_svg(labels: list[str], values: list[float], title: str = "", xlabel: str = "bin") -> str:
    yhi = max(values) if values and max(values) > 0 else 1.0
    fy = _scale(0.0, yhi, _H - _PAD, _PAD)
    width = (_W - 2 * _PAD) / max(len(values), 1)
    body = _axes(0.0, yhi, xlabel)
    for i, (label, v) in enumerate(zip(labels, values)):
        x = _PAD + i * width
        body.append(f'<rect x="{x + 1:.2f}" y="{fy(v):.2f}" width="{width - 2:.2f}" '
                    f'height="{_H - _PAD - fy(v):.2f}" fill="{_COLORS[0]}"><title>{escape(label)}: {v:g}</title></rect>')
        body.append(f'<text x="{x + width / 2:.2f}" y="{_H - _PAD + 14}" text-anchor="middle">{escape(label)}</text>')
    return _svg(body, title)


def emit_plotdata(csv_path, svg_path=None, title: str = "") -> Path:
    """Render a CSV as SVG: histogram tables (``bin_lo, bin_hi, count``) as bars, anything else as lines."""
    csv_path = Path(csv_path)
    svg_path = Path(svg_path) if svg_path is not None else csv_path.with_suffix(".svg")
    header, data = _read_numeric_csv(csv_path)
    if header[:3] == ["bin_lo", "bin_hi", "count"]:
        labels = [f"{r[0]:.2g}" for r in data]
        text = bar_svg(labels, [r[2] for r in data], title or csv_path.stem, "weight")
    else:
        if len(header) < 2:
            raise FormatError(f"{csv_path}: need an x column and at least one series")
        text = line_svg(header, data, title or csv_path.stem)
    svg_path.write_text(text)
    return svg_path
