"""Displacement errors and the training objective.

Trajectories are ``[n x l x 2]`` arrays in meters; ``mask`` is ``[n x l]``
with ``False`` marking steps that are absent from the ground truth.
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionError, UsageError
from .numerics import matmul, reshape, row_norm, scale, sub, value_of


def _prepare(pred, truth, mask):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 3 or pred.shape[-1] != 2:
        raise DimensionError(f"prediction {pred.shape} vs ground truth {truth.shape}")
    mask = np.ones(pred.shape[:2], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != pred.shape[:2]:
        raise DimensionError(f"mask {mask.shape} vs trajectories {pred.shape[:2]}")
    if not mask.any():
        raise UsageError("every step is masked out")
    return pred, truth, mask


def displacement(pred, truth) -> np.ndarray:
    return np.linalg.norm(np.asarray(pred) - np.asarray(truth), axis=-1)


def ade(pred, truth, mask=None) -> float:
    """Mean Euclidean error over all unmasked (pedestrian, step) pairs."""
    pred, truth, mask = _prepare(pred, truth, mask)
    return float(displacement(pred, truth)[mask].mean())


def fde(pred, truth, mask=None) -> float:
    """Mean over pedestrians of the error at each one's last unmasked step."""
    pred, truth, mask = _prepare(pred, truth, mask)
    d = displacement(pred, truth)
    rows = np.flatnonzero(mask.any(axis=1))
    last = mask.shape[1] - 1 - np.argmax(mask[rows, ::-1], axis=1)
    return float(d[rows, last].mean())


def loss(pred, truth, mask=None):
    """Training objective: mean unmasked Euclidean error, differentiable in ``pred``.

    ``pred`` is a decoded ``[n x 2l]`` matrix (tracked or not); ``truth`` is
    ``[n x l x 2]``.
    """
    truth = np.asarray(truth, dtype=np.float64)
    n, l = truth.shape[:2]
    if value_of(pred).shape != (n, 2 * l):
        raise DimensionError(f"prediction {value_of(pred).shape} vs ground truth {truth.shape}")
    mask = np.ones((n, l), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise UsageError("every step is masked out")
    steps = reshape(pred, (n * l, 2))
    norms = row_norm(sub(steps, truth.reshape(n * l, 2)))
    weights = mask.reshape(1, n * l).astype(np.float64)
    return scale(matmul(weights, norms), 1.0 / weights.sum())
