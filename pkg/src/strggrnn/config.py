"""Run configuration and the flat ``key = value`` file format.

Lines look like ``lr = 5e-3``; ``#`` starts a comment. Dataset entries use
dotted keys::

    frame_interval = 0.4
    set.zara1.path = zara1.txt
    set.zara1.map  = zara1.pgm

Any trainer key can be overridden from the environment as
``STRGGRNN_<KEY>`` (e.g. ``STRGGRNN_EPOCHS=3``).
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FormatError, UsageError

ENV_PREFIX = "STRGGRNN_"


@dataclass
class TrainerConfig:
    variant: str = "str_ggrnn_v"
    lr: float = 5e-3
    decay: float = 0.95
    dropout_keep: float = 0.80
    max_size: int = 20
    P: int = 10
    obs: int = 8
    pred: int = 12
    stride: int = 1
    epochs: int = 1
    seed: int = 0
    policy: str = "str_min_error"
    decode: str = "residual"
    h_O_init: str = "gaussian"
    handoff: str = "mean"
    nmf_max_iters: int = 500
    nmf_tol: float = 1e-8
    frame_interval: float = 0.4
    tau: float = 1e-6
    unit: float = 5.0
    workers: int = 1

    def __post_init__(self):
        if not 0 < self.dropout_keep <= 1:
            raise UsageError(f"dropout_keep must be in (0, 1], got {self.dropout_keep}")
        if self.P < 1:
            raise UsageError(f"P must be >= 1, got {self.P}")
        if self.obs not in (4, 8) or self.pred not in (8, 12):
            raise UsageError(f"obs/pred must be 4|8 and 8|12, got {self.obs}/{self.pred}")
        if self.handoff not in ("mean", "raw"):
            raise UsageError(f"handoff must be 'mean' or 'raw', got {self.handoff!r}")
        if not self.unit > 0:
            raise UsageError(f"unit must be positive, got {self.unit}")
        if self.epochs < 1 or self.stride < 1 or self.workers < 1:
            raise UsageError("epochs, stride and workers must be >= 1")

    def replace(self, **changes) -> "TrainerConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class DatasetEntry:
    name: str
    path: Path
    map: Path | None = None


@dataclass
class RunConfig:
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    datasets: dict[str, DatasetEntry] = field(default_factory=dict)


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise FormatError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def _coerce(name: str, raw: str, source: str):
    kind = {f.name: f.type for f in dataclasses.fields(TrainerConfig)}[name]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise FormatError(f"{source}: {name} = {raw!r} is not a valid {kind}") from None
    return raw


def trainer_from_mapping(values: dict[str, str], source: str = "<config>", base: TrainerConfig | None = None,
                         env: dict | None = None) -> TrainerConfig:
    known = {f.name for f in dataclasses.fields(TrainerConfig)}
    changes = {}
    for key, raw in values.items():
        if key in known:
            changes[key] = _coerce(key, raw, source)
    env = os.environ if env is None else env
    for key in known:
        raw = env.get(ENV_PREFIX + key.upper())
        if raw is not None:
            changes[key] = _coerce(key, raw, ENV_PREFIX + key.upper())
    return dataclasses.replace(base or TrainerConfig(), **changes)


def load_config(path, env: dict | None = None) -> RunConfig:
    path = Path(path)
    values = parse_kv(path.read_text(), str(path))
    datasets: dict[str, DatasetEntry] = {}
    for key, raw in values.items():
        if not key.startswith("set."):
            continue
        parts = key.split(".")
        if len(parts) != 3 or parts[2] not in ("path", "map"):
            raise FormatError(f"{path}: bad dataset key {key!r} (use set.<name>.path|map)")
        name, what = parts[1], parts[2]
        resolved = (path.parent / raw) if not Path(raw).is_absolute() else Path(raw)
        entry = datasets.setdefault(name, DatasetEntry(name, Path()))
        setattr(entry, what, resolved)
    for entry in datasets.values():
        if entry.path == Path():
            raise FormatError(f"{path}: dataset {entry.name!r} has no path")
    known = {f.name for f in dataclasses.fields(TrainerConfig)}
    unknown = [k for k in values if not k.startswith("set.") and k not in known]
    if unknown:
        raise FormatError(f"{path}: unknown keys {', '.join(sorted(unknown))}")
    return RunConfig(trainer_from_mapping(values, str(path), env=env), datasets)
