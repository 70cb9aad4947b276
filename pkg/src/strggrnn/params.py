"""Named parameter groups that can be flattened, tracked on a tape and restored."""
from __future__ import annotations

import dataclasses

import numpy as np

from .numerics import Tape


class ParamGroup:
    """Mixin for dataclasses whose fields are all 2-D weight blocks."""

    def named(self, prefix: str = "") -> dict:
        return {prefix + f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    def track(self, tape: Tape, prefix: str = ""):
        return dataclasses.replace(self, **{
            f.name: tape.param(getattr(self, f.name), prefix + f.name) for f in dataclasses.fields(self)
        })

    @classmethod
    def from_named(cls, flat: dict, prefix: str = ""):
        return cls(**{f.name: np.asarray(flat[prefix + f.name], dtype=np.float64)
                      for f in dataclasses.fields(cls)})


def glorot(rng: np.random.Generator, shape: tuple[int, int], gain: float = 1.0) -> np.ndarray:
    limit = gain * np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)
