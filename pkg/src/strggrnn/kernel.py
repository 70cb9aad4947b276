"""Prediction kernel: neighbourhood features, interaction gradients and the decoder.

Model variants switch three components on or off::

    >>> for v in Variant:
    ...     s = VARIANTS[v]
    ...     print(f"{v.value:12} vislets={s.vislets:d} context={s.context:d} recommender={s.recommender:d} social={s.social}")
    lstm_o       vislets=0 context=0 recommender=0 social=none
    st           vislets=0 context=0 recommender=0 social=full
    st_v         vislets=1 context=0 recommender=0 social=full
    st_ggrnn     vislets=0 context=1 recommender=0 social=full
    st_ggrnn_v   vislets=1 context=1 recommender=0 social=full
    ggrnn_v      vislets=1 context=1 recommender=0 social=none
    str          vislets=0 context=0 recommender=1 social=recommended
    str_v        vislets=1 context=0 recommender=1 social=recommended
    str_ggrnn    vislets=0 context=1 recommender=1 social=recommended
    str_ggrnn_v  vislets=1 context=1 recommender=1 social=recommended
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .encoders import OUTPUT, VISLET_FEATURES
from .errors import DimensionError, NumericalError, UsageError
from .numerics import Tape, Var, add, backward, concat, matmul, mul, relu, reshape, scale, sum_all, value_of
from .params import ParamGroup, glorot

N_SLOTS = 20
DECODER_HIDDEN = 32
PRED_LENGTHS = (8, 12)


class Variant(str, Enum):
    LSTM_O = "lstm_o"
    ST = "st"
    ST_V = "st_v"
    ST_GGRNN = "st_ggrnn"
    ST_GGRNN_V = "st_ggrnn_v"
    GGRNN_V = "ggrnn_v"
    STR = "str"
    STR_V = "str_v"
    STR_GGRNN = "str_ggrnn"
    STR_GGRNN_V = "str_ggrnn_v"

    @classmethod
    def parse(cls, name: str) -> "Variant":
        key = name.strip().lower().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            raise UsageError(f"unknown variant {name!r}; choose from {', '.join(v.value for v in cls)}") from None


@dataclass(frozen=True)
class VariantSpec:
    vislets: bool
    context: bool
    recommender: bool
    social: str  # "none": own state only, "full": complete graph, "recommended": adjacency proposals
    description: str


VARIANTS = {
    Variant.LSTM_O: VariantSpec(False, False, False, "none",
                                "online Grid LSTM on positional trajectories only"),
    Variant.ST: VariantSpec(False, False, False, "full",
                            "fully-connected graph; no vislets, static context or recommendation"),
    Variant.ST_V: VariantSpec(True, False, False, "full",
                              "fully-connected graph with vislets per node"),
    Variant.ST_GGRNN: VariantSpec(False, True, False, "full",
                                  "fully-connected graph plus static context neighbourhoods"),
    Variant.ST_GGRNN_V: VariantSpec(True, True, False, "full",
                                    "fully-connected graph with static context and vislets"),
    Variant.GGRNN_V: VariantSpec(True, True, False, "none",
                                 "static context neighbourhoods and vislets, no social recommender"),
    Variant.STR: VariantSpec(False, False, True, "recommended",
                             "recommended neighbourhoods from positions"),
    Variant.STR_V: VariantSpec(True, False, True, "recommended",
                               "recommended neighbourhoods from positions and vislets"),
    Variant.STR_GGRNN: VariantSpec(False, True, True, "recommended",
                                   "recommender plus static context neighbourhoods"),
    Variant.STR_GGRNN_V: VariantSpec(True, True, True, "recommended",
                                     "recommender with static context and vislets"),
}


def missing_inputs(variant: Variant, has_vislets: bool, has_scene: bool) -> list[str]:
    spec = VARIANTS[variant]
    missing = []
    if spec.vislets and not has_vislets:
        missing.append("vislets")
    if spec.context and not has_scene:
        missing.append("scene map")
    return missing


def check_inputs(variant: Variant, has_vislets: bool, has_scene: bool) -> None:
    missing = missing_inputs(variant, has_vislets, has_scene)
    if missing:
        raise UsageError(f"variant {variant.value} needs {' and '.join(missing)}, which the data lacks")


@dataclass
class KernelParams(ParamGroup):
    W_v: np.ndarray   # (8 + 20) x 20, attention features from [f_S, V_hat]
    b_v: np.ndarray   # 1 x 20
    W_r: np.ndarray   # 20 x 20
    W_j: np.ndarray   # 20 x 20, context gradient weights
    b_j: np.ndarray   # 1 x 20
    W_s: np.ndarray   # 8 x 8, social coupling weights
    E: np.ndarray     # 20 x 8, neighbourhood basis used in place of f_O without static context
    W_c: np.ndarray   # d x 32
    W_o: np.ndarray   # 32 x 2l

    @classmethod
    def init(cls, rng: np.random.Generator, pred_len: int, recommender: bool) -> "KernelParams":
        d = OUTPUT if recommender else N_SLOTS
        return cls(
            W_v=glorot(rng, (OUTPUT + VISLET_FEATURES, N_SLOTS)),
            b_v=np.zeros((1, N_SLOTS)),
            W_r=glorot(rng, (N_SLOTS, N_SLOTS)),
            W_j=glorot(rng, (N_SLOTS, N_SLOTS)),
            b_j=np.full((1, N_SLOTS), 0.1),
            W_s=glorot(rng, (OUTPUT, OUTPUT)),
            E=glorot(rng, (N_SLOTS, OUTPUT)),
            W_c=glorot(rng, (d, DECODER_HIDDEN)),
            W_o=glorot(rng, (DECODER_HIDDEN, 2 * pred_len), gain=0.1),
        )


def bilinear_matrix(src: int, dst: int) -> np.ndarray:
    """``dst x src`` linear-interpolation operator (corner-aligned)."""
    R = np.zeros((dst, src))
    if dst == 1:
        R[0, :] = 1.0 / src
        return R
    if src == 1:
        R[:, 0] = 1.0
        return R
    pos = np.arange(dst) * (src - 1) / (dst - 1)
    lo = np.minimum(np.floor(pos).astype(int), src - 2)
    frac = pos - lo
    R[np.arange(dst), lo] = 1.0 - frac
    R[np.arange(dst), lo + 1] += frac
    return R


def resize_bilinear(C, shape: tuple[int, int]):
    """Bilinear resize of a 2-D map to ``shape``; linear, so it stays differentiable."""
    rows, cols = value_of(C).shape
    return matmul(matmul(bilinear_matrix(rows, shape[0]), C), bilinear_matrix(cols, shape[1]).T)


def kernel_features(F, f_S, V_hat, C_map, params: KernelParams):
    """Neighbourhood features ``C_map o ((([f_S, V_hat] W_v + b_v)) @ (F W_r))``."""
    shape_F, shape_S = value_of(F).shape, value_of(f_S).shape
    if shape_F[0] != shape_S[0] or value_of(V_hat).shape[0] != shape_S[0]:
        raise DimensionError(f"kernel_features: F {shape_F}, f_S {shape_S}, V_hat {value_of(V_hat).shape}")
    left = add(matmul(concat([f_S, V_hat], axis=1), params.W_v), params.b_v)
    right = matmul(F, params.W_r)
    prod = matmul(left, right)
    return mul(prod, resize_bilinear(C_map, value_of(prod).shape))


def coupling(f_S, W_v, f_O):
    """Scalar social/context coupling ``sum((f_S W_v) o f_O)``."""
    return sum_all(mul(matmul(f_S, W_v), f_O))


def interaction_gradient(f_S, f_O, W_v):
    """Rectified gradient of :func:`coupling` with respect to ``f_O``.

    The gradient is taken by the differentiation engine on a private tape.
    When the inputs are tracked, the same quantity is rebuilt on the caller's
    tape in closed form (``f_S W_v``) so training can backpropagate through
    it; the two are required to agree.
    """
    fs, wv, fo = value_of(f_S), value_of(W_v), value_of(f_O)
    if fs.shape[1] != wv.shape[0] or (fs.shape[0], wv.shape[1]) != fo.shape:
        raise DimensionError(f"interaction_gradient: f_S {fs.shape} @ W_v {wv.shape} vs f_O {fo.shape}")
    inner = Tape()
    probe = inner.param(fo, "f_O")
    grad = backward(inner, coupling(fs, wv, probe))["f_O"]
    if not any(isinstance(x, Var) for x in (f_S, W_v)):
        return relu(grad)
    tracked = matmul(f_S, W_v)
    if not np.allclose(tracked.value, grad, rtol=1e-12, atol=1e-12):
        raise NumericalError("coupling gradient disagrees with its tracked closed form")
    return relu(tracked)


def context_gradient(F, C_map, W_v, b_v):
    """``ReLU((F W_v + b_v) o C_map)``, with ``C_map`` resized to the output shape."""
    pre = add(matmul(F, W_v), b_v)
    return relu(mul(pre, resize_bilinear(C_map, value_of(pre).shape)))


def decode_trajectory(J, params: KernelParams, pred_len: int, last_positions=None, unit: float = 1.0):
    """Two linear layers mapping each pedestrian row of ``J`` to ``pred_len`` positions.

    Output is ``[n x 2*pred_len]`` with interleaved (x, y). With
    ``last_positions`` (``[n x 2]``) the decoded values are offsets from the
    last observed point; otherwise they are absolute. ``unit`` is the length
    (meters) of one decoded unit.
    """
    if pred_len not in PRED_LENGTHS:
        raise UsageError(f"prediction length must be one of {PRED_LENGTHS}, got {pred_len}")
    if value_of(params.W_o).shape[1] != 2 * pred_len:
        raise DimensionError(f"decoder emits {value_of(params.W_o).shape[1] // 2} steps, asked for {pred_len}")
    out = matmul(matmul(J, params.W_c), params.W_o)
    if unit != 1.0:
        out = scale(out, unit)
    if last_positions is None:
        return out
    base = np.tile(np.asarray(last_positions, dtype=np.float64), (1, pred_len))
    return add(out, base)


def as_tracks(X, pred_len: int) -> np.ndarray:
    """View a decoded ``[n x 2l]`` matrix as ``[n x l x 2]`` positions."""
    X = value_of(X)
    return X.reshape(X.shape[0], pred_len, 2)


def flat_tracks(X, pred_len: int):
    """Decoded ``[n x 2l]`` to ``[n*l x 2]`` (one row per pedestrian step), tape-aware."""
    n = value_of(X).shape[0]
    return reshape(X, (n * pred_len, 2))
