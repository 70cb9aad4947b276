"""Nonnegative matrix factorization by Lee-Seung multiplicative updates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError
from .autodiff import as_dense

EPS = 1e-12
INIT_NOISE = 0.01


@dataclass(frozen=True)
class NmfResult:
    W: np.ndarray
    H: np.ndarray
    reconstruction_errors: tuple[float, ...]

    @property
    def error(self) -> float:
        return self.reconstruction_errors[-1]


def _init_factor(init, shape, rng, name):
    if init is None:
        # uniform on (0, 1]
        return 1.0 - rng.random(shape)
    init = as_dense(init, name)
    if init.shape != shape:
        raise DomainError(f"nmf: {name} has shape {init.shape}, expected {shape}")
    return np.maximum(init, 0.0) + rng.uniform(0.0, INIT_NOISE, size=shape)


def nmf(V, k: int, max_iters: int = 500, tol: float = 1e-8, seed: int = 0,
        init_W=None, init_H=None) -> NmfResult:
    """Factor ``V ~ W @ H`` with ``W, H >= 0`` minimizing the Frobenius error.

    Explicit initial factors are clamped at zero and jittered with seeded
    uniform noise in [0, 0.01]; missing ones are drawn uniformly from (0, 1].
    Iteration stops after ``max_iters`` or once the error improves by less
    than ``tol``.
    """
    V = as_dense(V, "V")
    n, m = V.shape
    if np.any(V < 0):
        raise DomainError("nmf: V has negative entries")
    if not 1 <= k <= min(n, m):
        raise DomainError(f"nmf: rank {k} outside [1, {min(n, m)}] for V of shape {V.shape}")
    rng = np.random.default_rng(seed)
    W = _init_factor(init_W, (n, k), rng, "init_W")
    H = _init_factor(init_H, (k, m), rng, "init_H")

    errors: list[float] = []
    for _ in range(max_iters):
        H = H * (W.T @ V) / (W.T @ W @ H + EPS)
        W = W * (V @ H.T) / (W @ (H @ H.T) + EPS)
        err = float(np.linalg.norm(V - W @ H))
        errors.append(err)
        if err == 0.0 or (len(errors) > 1 and errors[-2] - err < tol):
            break
    return NmfResult(W, H, tuple(errors))
