"""Trajectory/vislet embeddings, Grid LSTM cells and the static-context encoder.

Pedestrians are rows throughout: a batch of ``n`` pedestrians is an ``n x d``
matrix and every weight acts on the feature (column) axis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import GRID_SIDE, GridMask, SceneMap
from .errors import DimensionError, DomainError, UsageError
from .numerics import (
    add, as_dense, concat, kron, matmul, mul, reshape, sigmoid, take, tanh, transpose, value_of,
)
from .params import ParamGroup, glorot

OBS_LEN = 8
EMBED_ROWS = 10
EMBED_COLS = 10
HIDDEN = 128
OUTPUT = 8
TRAJ_FEATURES = EMBED_ROWS * EMBED_COLS  # 100
VISLET_FEATURES = 2 * EMBED_COLS  # 20
CONTEXT_FEATURES = GRID_SIDE * GRID_SIDE  # 64
KERNEL = 3


# -- embeddings -----------------------------------------------------------------

@dataclass
class EmbeddingParams(ParamGroup):
    W_traj_left: np.ndarray   # 10 x 8
    W_traj_right: np.ndarray  # 2 x 10
    W_vis: np.ndarray         # 8 x 10

    @classmethod
    def init(cls, rng: np.random.Generator) -> "EmbeddingParams":
        return cls(glorot(rng, (EMBED_ROWS, OBS_LEN)), glorot(rng, (2, EMBED_COLS)),
                   glorot(rng, (OBS_LEN, EMBED_COLS)))


def pad_observation(X: np.ndarray, obs: int = OBS_LEN) -> np.ndarray:
    """Front-pad a shorter ``[t x 2]`` track by repeating its first row."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-2] >= obs:
        return X[..., -obs:, :]
    reps = obs - X.shape[-2]
    first = np.repeat(X[..., :1, :], reps, axis=-2)
    return np.concatenate([first, X], axis=-2)


def embed_trajectory(X, params: EmbeddingParams):
    """``W_traj_left @ X @ W_traj_right`` for one ``[8 x 2]`` track, giving ``[10 x 10]``."""
    X = as_dense(pad_observation(value_of(X)), "trajectory")
    if X.shape != (OBS_LEN, 2):
        raise DimensionError(f"trajectory must be [{OBS_LEN} x 2], got {X.shape}")
    return matmul(matmul(params.W_traj_left, X), params.W_traj_right)


def embed_vislets(V, params: EmbeddingParams):
    """``V.T @ W_vis`` for one ``[8 x 2]`` head-pose track, giving ``[2 x 10]``."""
    if V is None:
        raise UsageError("vislets are not available for this pedestrian")
    V = as_dense(pad_observation(value_of(V)), "vislets")
    if V.shape != (OBS_LEN, 2):
        raise DimensionError(f"vislets must be [{OBS_LEN} x 2], got {V.shape}")
    return matmul(transpose(V), params.W_vis)


def fuse_inputs(X_hat, V_hat=None):
    """Stack the trajectory and vislet embeddings row-wise."""
    if V_hat is None:
        return X_hat
    return concat([X_hat, V_hat], axis=0)


def embed_batch(X: np.ndarray, params: EmbeddingParams):
    """Row ``i`` is the row-major flattening of :func:`embed_trajectory` for track ``i``.

    ``X`` is ``[n x obs x 2]``; the result is ``[n x 100]``. Uses
    ``vec(L X R) = vec(X) @ kron(L.T, R)`` to keep the tape short.
    """
    X = pad_observation(X)
    flat = as_dense(X.reshape(X.shape[0], -1), "trajectories")
    return matmul(flat, kron(transpose(params.W_traj_left), params.W_traj_right))


def embed_vislets_batch(V: np.ndarray, params: EmbeddingParams):
    """Batched :func:`embed_vislets`: ``[n x obs x 2]`` head poses to ``[n x 20]``."""
    V = pad_observation(V)
    flat = as_dense(np.swapaxes(V, 1, 2).reshape(V.shape[0], -1), "vislets")
    return matmul(flat, kron(np.eye(2), params.W_vis))


# -- grid LSTM -------------------------------------------------------------------

@dataclass
class GridLSTMState:
    h: tuple  # per-dimension hidden, each [n x hidden]
    m: tuple  # per-dimension memory

    @classmethod
    def zeros(cls, n: int, hidden: int = HIDDEN) -> "GridLSTMState":
        return cls((np.zeros((n, hidden)),) * 2, (np.zeros((n, hidden)),) * 2)

    @classmethod
    def gaussian(cls, n: int, rng: np.random.Generator, hidden: int = HIDDEN) -> "GridLSTMState":
        return cls(tuple(rng.standard_normal((n, hidden)) for _ in range(2)), (np.zeros((n, hidden)),) * 2)

    def detached(self) -> "GridLSTMState":
        return GridLSTMState(tuple(value_of(x) for x in self.h), tuple(value_of(x) for x in self.m))


@dataclass
class GridLSTMParams(ParamGroup):
    """Two-dimensional Grid LSTM; gate columns are ordered (input, forget, output, candidate)."""

    Wh0: np.ndarray
    Wx0: np.ndarray
    b0: np.ndarray
    Wout0: np.ndarray
    Wh1: np.ndarray
    Wx1: np.ndarray
    b1: np.ndarray
    Wout1: np.ndarray

    @classmethod
    def init(cls, rng: np.random.Generator, in0: int, in1: int, hidden: int = HIDDEN,
             output: int = OUTPUT, forget_bias: float = 1.0) -> "GridLSTMParams":
        def bias():
            b = np.zeros((1, 4 * hidden))
            b[0, hidden:2 * hidden] = forget_bias
            return b
        return cls(
            glorot(rng, (2 * hidden, 4 * hidden)), glorot(rng, (in0, 4 * hidden)), bias(),
            glorot(rng, (hidden, output)),
            glorot(rng, (2 * hidden, 4 * hidden)), glorot(rng, (in1, 4 * hidden)), bias(),
            glorot(rng, (hidden, output)),
        )

    @classmethod
    def zeros(cls, in0: int, in1: int, hidden: int = HIDDEN, output: int = OUTPUT) -> "GridLSTMParams":
        z = np.zeros
        return cls(z((2 * hidden, 4 * hidden)), z((in0, 4 * hidden)), z((1, 4 * hidden)), z((hidden, output)),
                   z((2 * hidden, 4 * hidden)), z((in1, 4 * hidden)), z((1, 4 * hidden)), z((hidden, output)))

    @property
    def hidden(self) -> int:
        return value_of(self.Wout0).shape[0]

    def dim(self, d: int):
        return tuple(getattr(self, f"{k}{d}") for k in ("Wh", "Wx", "b", "Wout"))


def grid_lstm_step(inputs, state: GridLSTMState, params: GridLSTMParams):
    """One step of a 2-D Grid LSTM cell.

    Both dimensions read the shared hidden vector ``[h_0, h_1]`` plus their own
    input and update their own memory. Returns per-dimension ``[n x output]``
    projections and the new state.
    """
    hidden = params.hidden
    H = concat(list(state.h), axis=1)
    outs, hs, ms = [], [], []
    for d, x in enumerate(inputs):
        Wh, Wx, b, Wout = params.dim(d)
        if value_of(x).shape[0] != value_of(H).shape[0]:
            raise DimensionError(f"grid_lstm_step: input {value_of(x).shape} vs state rows {value_of(H).shape[0]}")
        z = add(add(matmul(H, Wh), matmul(x, Wx)), b)
        i = sigmoid(take(z, cols=(0, hidden)))
        f = sigmoid(take(z, cols=(hidden, 2 * hidden)))
        o = sigmoid(take(z, cols=(2 * hidden, 3 * hidden)))
        g = tanh(take(z, cols=(3 * hidden, 4 * hidden)))
        m_new = add(mul(f, state.m[d]), mul(i, g))
        h_new = mul(o, tanh(m_new))
        hs.append(h_new)
        ms.append(m_new)
        outs.append(matmul(h_new, Wout))
    return tuple(outs), GridLSTMState(tuple(hs), tuple(ms))


def encode_social(T, h0: GridLSTMState, params: GridLSTMParams):
    """Social grid ``f_S`` and state from fused inputs ``T`` (``[n x 120]``).

    The trajectory embedding feeds dimension 0 and the vislet embedding
    dimension 1, so memory is exchanged between the two modalities.
    """
    width = value_of(T).shape[1]
    if width != TRAJ_FEATURES + VISLET_FEATURES:
        raise DimensionError(f"encode_social: expected {TRAJ_FEATURES + VISLET_FEATURES} features, got {width}")
    x_traj = take(T, cols=(0, TRAJ_FEATURES))
    x_vis = take(T, cols=(TRAJ_FEATURES, width))
    (f0, f1), state = grid_lstm_step((x_traj, x_vis), h0, params)
    return add(f0, f1), state


# -- static context -------------------------------------------------------------------

@dataclass
class ContextParams(ParamGroup):
    kernel: np.ndarray  # 3 x 3
    bias: np.ndarray    # 1 x 1
    W_mod: np.ndarray   # (OUTPUT + HIDDEN) x 64, projection of (f_S, h_S)

    @classmethod
    def init(cls, rng: np.random.Generator) -> "ContextParams":
        # uniformly initialised filter
        return cls(np.full((KERNEL, KERNEL), 1.0 / KERNEL ** 2), np.zeros((1, 1)),
                   glorot(rng, (OUTPUT + HIDDEN, CONTEXT_FEATURES), gain=0.1))


def pool_matrix(size: int, bins: int = GRID_SIDE) -> np.ndarray:
    """``bins x size`` adaptive average-pooling operator along one axis."""
    P = np.zeros((bins, size))
    for i in range(bins):
        lo = (i * size) // bins
        hi = max(-(-((i + 1) * size) // bins), lo + 1)
        P[i, lo:hi] = 1.0 / (hi - lo)
    return P


def average_pool(grid: np.ndarray, bins: int = GRID_SIDE) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64)
    return pool_matrix(grid.shape[0], bins) @ grid @ pool_matrix(grid.shape[1], bins).T


def shifted_pools(scene: SceneMap) -> np.ndarray:
    """``[9 x 64]``: row ``(a, b)`` is the pooled scene shifted by kernel offset ``(a-1, b-1)``.

    A stride-1 zero-padded 3x3 cross-correlation followed by average pooling
    equals ``kernel.ravel() @ shifted_pools(scene)``, since both are linear.
    """
    S = scene.cells
    if S.shape[0] < KERNEL or S.shape[1] < KERNEL:
        raise DomainError(f"scene {S.shape} is smaller than the {KERNEL}x{KERNEL} kernel")
    padded = np.pad(S, 1)
    Pr, Pc = pool_matrix(S.shape[0]), pool_matrix(S.shape[1])
    rows = []
    for a in range(KERNEL):
        for b in range(KERNEL):
            shifted = padded[a:a + S.shape[0], b:b + S.shape[1]]
            rows.append((Pr @ shifted @ Pc.T).ravel())
    return np.array(rows)


def encode_context(scene: SceneMap, f_S, h_S, mask: GridMask, params: ContextParams,
                   ped_weights=None, pooled=None):
    """``[8 x 8]`` context map: conv + bias, pooled, plus a projection of ``(f_S, h_S)``, masked.

    ``ped_weights`` (``1 x n``) averages the pedestrian rows before projecting;
    it defaults to the uniform mean. ``pooled`` may carry a cached
    :func:`shifted_pools` result for the scene.
    """
    if pooled is None:
        pooled = shifted_pools(scene)
    n = value_of(f_S).shape[0]
    if ped_weights is None:
        ped_weights = np.full((1, n), 1.0 / n)
    conv = matmul(reshape(params.kernel, (1, KERNEL * KERNEL)), pooled)
    summary = matmul(ped_weights, concat([f_S, h_S], axis=1))
    flat = add(add(conv, params.bias), matmul(summary, params.W_mod))
    return mul(reshape(flat, (GRID_SIDE, GRID_SIDE)), mask.cells)


def encode_visuospatial(C_map, V_hat, h_O: GridLSTMState, params: GridLSTMParams):
    """GLSTM_O step: the flattened context map (shared by every pedestrian) and head-pose embedding."""
    n = value_of(V_hat).shape[0]
    ctx = matmul(np.ones((n, 1)), reshape(C_map, (1, CONTEXT_FEATURES)))
    (f0, f1), state = grid_lstm_step((ctx, V_hat), h_O, params)
    return add(f0, f1), state


def combine_neighborhood(f_S, f_O):
    """Pedestrian-pairwise neighbourhood map ``F = f_S @ f_O.T``."""
    a, b = value_of(f_S).shape, value_of(f_O).shape
    if a != b:
        raise DimensionError(f"combine_neighborhood: f_S {a} vs f_O {b}")
    return matmul(f_S, transpose(f_O))
