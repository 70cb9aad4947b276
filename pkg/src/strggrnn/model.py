"""Full forward pass: encoders, kernel and (for STR variants) the recommender.

A :class:`Model` owns its weights and the recurrent state handed from one
window to the next. :meth:`Model.forward` never mutates either; the caller
commits the returned state once it accepts the step.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import GRID_SIDE, GridMask, SceneMap, TrajectoryWindow
from .encoders import (
    CONTEXT_FEATURES, TRAJ_FEATURES, VISLET_FEATURES, ContextParams, EmbeddingParams, GridLSTMParams,
    GridLSTMState, combine_neighborhood, embed_batch, embed_vislets_batch, encode_context, encode_social,
    encode_visuospatial, pad_observation, shifted_pools,
)
from .errors import UsageError
from .kernel import (
    N_SLOTS, VARIANTS, KernelParams, Variant, as_tracks, check_inputs, context_gradient,
    decode_trajectory, interaction_gradient, kernel_features,
)
from .numerics import Tape, add, concat, matmul, value_of
from .recommender import (
    AdjacencyPolicy, BandInputs, ProposalBand, adjacency_policy, generate_band, inverse_distance,
    neighbourhood_operator, row_normalise, select_best, soft_attention, update_states, weight_context,
)

Dropout = Callable[[object, str], object]

# meters per model coordinate unit: inputs are divided by it, decoded offsets multiplied
COORD_UNIT = 5.0


@dataclass
class ModelState:
    nu: GridLSTMState
    o: GridLSTMState | None
    A: np.ndarray  # adjacency selected for the previous window


@dataclass
class ForwardResult:
    pred: object                # [N_SLOTS x 2l] decoded positions (Var when tracked)
    tracks: np.ndarray          # [k x l x 2] for the window's pedestrians
    A: np.ndarray
    state: ModelState
    band: ProposalBand | None = None
    selected: int = 0
    C_map: np.ndarray | None = None
    hidden: tuple = ()          # per-dimension hidden states before the hand-off mix


@dataclass
class Model:
    variant: Variant
    pred_len: int = 12
    seed: int = 0
    policy: AdjacencyPolicy = AdjacencyPolicy.STR_MIN_ERROR
    decode: str = "residual"
    h_O_init: str = "gaussian"
    handoff: str = "mean"        # "mean" row-normalises A before mixing hidden states; "raw" uses A as is
    nmf_max_iters: int = 500
    nmf_tol: float = 1e-8
    unit: float = COORD_UNIT
    trained: bool = False
    groups: dict = field(default_factory=dict)
    state: ModelState | None = None
    _pool_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.variant = Variant.parse(self.variant) if isinstance(self.variant, str) else self.variant
        if isinstance(self.policy, str):
            self.policy = AdjacencyPolicy.parse(self.policy)
        if self.decode not in ("residual", "absolute"):
            raise UsageError(f"decode must be 'residual' or 'absolute', got {self.decode!r}")
        if self.h_O_init not in ("zeros", "gaussian"):
            raise UsageError(f"h_O_init must be 'zeros' or 'gaussian', got {self.h_O_init!r}")
        if self.handoff not in ("mean", "raw"):
            raise UsageError(f"handoff must be 'mean' or 'raw', got {self.handoff!r}")
        if not self.unit > 0:
            raise UsageError(f"unit must be positive, got {self.unit}")
        if not self.groups:
            self.groups = self._init_groups(np.random.default_rng(self.seed))
        if self.state is None:
            self.reset_state()

    @property
    def spec(self):
        return VARIANTS[self.variant]

    def _init_groups(self, rng) -> dict:
        groups = {
            "emb": EmbeddingParams.init(rng),
            "nu": GridLSTMParams.init(rng, TRAJ_FEATURES, VISLET_FEATURES),
        }
        if self.spec.context:
            groups["ctx"] = ContextParams.init(rng)
            groups["o"] = GridLSTMParams.init(rng, CONTEXT_FEATURES, VISLET_FEATURES)
        groups["kernel"] = KernelParams.init(rng, self.pred_len, self.spec.recommender)
        return groups

    def reset_state(self) -> None:
        o = None
        if self.spec.context:
            if self.h_O_init == "gaussian":
                o = GridLSTMState.gaussian(N_SLOTS, np.random.default_rng([self.seed, 1]))
            else:
                o = GridLSTMState.zeros(N_SLOTS)
        self.state = ModelState(GridLSTMState.zeros(N_SLOTS), o, np.ones((N_SLOTS, N_SLOTS)))

    # -- parameters ----------------------------------------------------------------

    def params(self) -> dict[str, np.ndarray]:
        flat = {}
        for name, group in self.groups.items():
            flat.update(group.named(name + "."))
        return flat

    def load_params(self, flat: dict[str, np.ndarray]) -> None:
        self.groups = {name: type(g).from_named(flat, name + ".") for name, g in self.groups.items()}

    def tracked(self, tape: Tape) -> dict:
        return {name: g.track(tape, name + ".") for name, g in self.groups.items()}

    def zeroed(self) -> "Model":
        """Copy with every weight set to zero (the untrained residual baseline)."""
        clone = copy.deepcopy(self)
        clone.load_params({k: np.zeros_like(v) for k, v in self.params().items()})
        clone.reset_state()
        return clone

    def pooled(self, scene: SceneMap) -> np.ndarray:
        key = id(scene)
        if key not in self._pool_cache:
            self._pool_cache[key] = (scene, shifted_pools(scene))
        return self._pool_cache[key][1]

    # -- forward ---------------------------------------------------------------------

    def forward(self, window: TrajectoryWindow, scene: SceneMap | None = None, *,
                grid_mask: GridMask | None = None, groups: dict | None = None,
                dropout: Dropout | None = None, P: int = 1, base_seed: int = 0,
                use_truth: bool = True, workers: int = 1) -> ForwardResult:
        """Predict the window's future and the state for the next window.

        ``groups`` may hold tape-tracked copies of the weights (see
        :meth:`tracked`). ``dropout(x, site)`` must return the same mask
        whenever it is called again for the same site. For STR variants with
        the min-error policy, ``P`` proposals are drawn and the best against
        the window's ground truth is used (``use_truth=False`` takes the first
        proposal instead).
        """
        spec = self.spec
        check_inputs(self.variant, window.has_vislets, scene is not None)
        if window.pred_len != self.pred_len:
            raise UsageError(f"model predicts {self.pred_len} steps, window has {window.pred_len}")
        if window.n_peds > N_SLOTS:
            raise UsageError(f"window has {window.n_peds} pedestrians, at most {N_SLOTS} supported")
        g = groups or self.groups
        emb, nu, kp = g["emb"], g["nu"], g["kernel"]
        drop = dropout or (lambda x, site: x)
        k, n, l = window.n_peds, N_SLOTS, self.pred_len

        observed = pad_observation(window.observed)
        last = observed[:, -1, :]
        X = np.zeros((n, observed.shape[1], 2))
        # residual decoding sees tracks relative to their last observed point
        X[:k] = (observed - last[:, None, :] if self.decode == "residual" else observed) / self.unit
        V_hat = np.zeros((n, VISLET_FEATURES))
        if spec.vislets:
            V = np.zeros((n, observed.shape[1], 2))
            V[:k] = pad_observation(window.vislets)
            V_hat = embed_vislets_batch(V, emb)
        T = concat([embed_batch(X, emb), V_hat], axis=1)

        f_S, nu_state = encode_social(T, self.state.nu, nu)
        f_S = drop(f_S, "f_S")
        present = np.zeros((1, n))
        present[0, :k] = 1.0 / k

        o_state = None
        if spec.context:
            C_map = encode_context(scene, f_S, nu_state.h[0], grid_mask or GridMask(), g["ctx"],
                                   ped_weights=present, pooled=self.pooled(scene))
            f_O, o_state = encode_visuospatial(C_map, V_hat, self.state.o, g["o"])
            f_O = drop(f_O, "f_O")
        else:
            C_map = np.ones((GRID_SIDE, GRID_SIDE))
            f_O = kp.E
        F = combine_neighborhood(f_S, f_O)

        base = np.zeros((n, 2))
        if self.decode == "residual":
            base[:k] = last
        band, selected = None, 0
        truth, mask = window.future, window.presence_mask

        if spec.recommender:
            a = soft_attention(kernel_features(F, f_S, V_hat, C_map, kp))
            f_O_w = weight_context(a, f_O)

            def social_prediction(A, tracked: bool):
                N = neighbourhood_operator(A)
                h = nu_state.h if tracked else tuple(value_of(x) for x in nu_state.h)
                ws = (nu.Wout0, nu.Wout1) if tracked else (value_of(nu.Wout0), value_of(nu.Wout1))
                f_SA = add(matmul(matmul(N, h[0]), ws[0]), matmul(matmul(N, h[1]), ws[1]))
                f_SA = drop(f_SA, "f_S")
                W_s, fo = (kp.W_s, f_O_w) if tracked else (value_of(kp.W_s), value_of(f_O_w))
                J = interaction_gradient(f_SA, fo, W_s)
                kp_v = kp if tracked else _values(kp)
                return decode_trajectory(J, kp_v, l, base, self.unit)

            def predict_tracks(A):
                return as_tracks(social_prediction(A, False), l)[:k]

            if self.policy is AdjacencyPolicy.STR_MIN_ERROR:
                inputs = BandInputs(value_of(a), value_of(C_map), value_of(nu_state.h[0]), predict_tracks,
                                    truth if use_truth else None, mask if use_truth else None,
                                    self.nmf_max_iters, self.nmf_tol)
                band = generate_band(P, inputs, base_seed, workers)
                prop, _, _ = select_best(band)
                A, selected = prop.A, prop.index
            elif self.policy is AdjacencyPolicy.SGTV_INVERSE_DISTANCE:
                A = np.zeros((n, n))
                A[:k, :k] = inverse_distance(last)
            else:
                A = value_of(adjacency_policy(self.policy, H_t=value_of(nu_state.h[0])))
            pred = social_prediction(A, True)
        else:
            J = context_gradient(F, C_map, kp.W_j, kp.b_j)
            pred = decode_trajectory(J, kp, l, base, self.unit)
            A = np.eye(n)
            if spec.social == "full":
                A = np.zeros((n, n))
                A[:k, :k] = 1.0 / k

        hidden = tuple(value_of(h) for h in nu_state.h)
        new_o = o_state.detached() if o_state is not None else None
        return ForwardResult(pred, as_tracks(pred, l)[:k].copy(), A, _handoff(A, hidden, new_o, self.handoff),
                             band, selected, value_of(C_map), hidden)

    def commit(self, result: ForwardResult, A: np.ndarray | None = None) -> None:
        """Accept a forward pass; ``A`` replaces the adjacency used for the hand-off."""
        self.state = result.state if A is None else _handoff(A, result.hidden, result.state.o, self.handoff)


def _handoff(A, hidden, o_state, mode: str = "mean") -> ModelState:
    # only the mixed hidden states cross the window boundary; cell memory restarts
    mix = row_normalise(A) if mode == "mean" else A
    h_next = tuple(update_states(mix, h) for h in hidden)
    return ModelState(GridLSTMState(h_next, tuple(np.zeros_like(h) for h in hidden)), o_state, A)


def _values(group):
    return type(group)(**{k: value_of(v) for k, v in vars(group).items()})

