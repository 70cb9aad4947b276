"""Plain gradient descent with an exponentially decayed learning rate."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError


def apply_gradients(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                    lr: float) -> dict[str, np.ndarray]:
    """Return ``p - lr * g`` for every parameter that has a gradient."""
    out = dict(params)
    for name, g in grads.items():
        p = params[name]
        if p.shape != g.shape:
            raise DimensionError(f"gradient for {name!r}: shape {g.shape} vs parameter {p.shape}")
        out[name] = p - lr * g
    return out


@dataclass
class SGD:
    lr: float = 5e-3
    decay: float = 0.95
    epoch: int = 0

    @property
    def current_lr(self) -> float:
        return self.lr * self.decay ** self.epoch

    def step(self, params, grads):
        return apply_gradients(params, grads, self.current_lr)

    def end_epoch(self) -> None:
        self.epoch += 1
