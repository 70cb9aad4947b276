"""Neighbourhood recommendation: attention, stochastic NMF adjacency proposals and selection."""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, DomainError, UsageError
from .metrics import ade
from .numerics import matmul, nmf, softmax_rows, value_of

RANK = 8
SGTV_EPS = 1e-6


@dataclass(frozen=True)
class AdjacencyProposal:
    A: np.ndarray
    seed: int
    index: int = 0
    degenerate: bool = False
    nmf_error: float = 0.0


@dataclass
class ProposalBand:
    proposals: list[AdjacencyProposal] = field(default_factory=list)
    trajectories: list[np.ndarray] = field(default_factory=list)
    errors: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self) -> int:
        return len(self.proposals)


class AdjacencyPolicy(str, Enum):
    SGTV_INVERSE_DISTANCE = "sgtv_inverse_distance"
    MCR_SOFTMAX_HIDDEN = "mcr_softmax_hidden"
    STR_MIN_ERROR = "str_min_error"

    @classmethod
    def parse(cls, name: str) -> "AdjacencyPolicy":
        key = name.strip().lower()
        for p in cls:
            if key in (p.value, p.value.split("_")[0]):
                return p
        raise UsageError(f"unknown adjacency policy {name!r}; choose from {', '.join(p.value for p in cls)}")


def soft_attention(F_hat):
    """Row-wise softmax of ``F_hat / sqrt(cols)``."""
    F_hat_v = value_of(F_hat)
    if F_hat_v.size == 0:
        raise DomainError("soft_attention: empty feature map")
    return softmax_rows(F_hat, scale=1.0 / np.sqrt(F_hat_v.shape[1]))


def weight_context(a, f_O):
    """Attention-mixed context features ``a @ f_O``."""
    if value_of(a).shape[1] != value_of(f_O).shape[0]:
        raise DimensionError(f"weight_context: attention {value_of(a).shape} vs f_O {value_of(f_O).shape}")
    return matmul(a, f_O)


def block_average(size: int, blocks: int) -> np.ndarray:
    """``size x blocks`` matrix averaging contiguous column groups."""
    M = np.zeros((size, blocks))
    edges = np.linspace(0, size, blocks + 1).round().astype(int)
    for j in range(blocks):
        lo, hi = edges[j], max(edges[j + 1], edges[j] + 1)
        M[lo:hi, j] = 1.0 / (hi - lo)
    return M


def nmf_target(C_map, n: int) -> np.ndarray:
    """Context Gram matrix ``C C^T``, clipped at zero and zero-padded to ``n x n``."""
    C = np.asarray(value_of(C_map), dtype=np.float64)
    G = np.maximum(C @ C.T, 0.0)
    V = np.zeros((n, n))
    m = min(n, G.shape[0])
    V[:m, :m] = G[:m, :m]
    return V


def propose_adjacency(a, C_map, H_t, seed: int, index: int = 0, rank: int = RANK,
                      max_iters: int = 500, tol: float = 1e-8) -> AdjacencyProposal:
    """One stochastic adjacency proposal.

    NMF factors the context Gram matrix starting from the attention weights
    (for ``W``) and the magnitude of the hidden states (for ``H``); ``seed``
    drives the initial jitter. The square adjacency is ``W W^T`` scaled to a
    maximum of 1. A zero factor yields an all-zero, ``degenerate`` proposal.
    """
    a = np.asarray(value_of(a), dtype=np.float64)
    H_t = np.asarray(value_of(H_t), dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise DimensionError(f"propose_adjacency: attention must be square, got {a.shape}")
    if H_t.shape[0] != n:
        raise DimensionError(f"propose_adjacency: hidden states {H_t.shape} vs {n} pedestrians")
    k = min(rank, n)
    init_W = np.maximum(a, 0.0) @ block_average(n, k)
    init_H = (np.abs(H_t) @ block_average(H_t.shape[1], k)).T
    result = nmf(nmf_target(C_map, n), k, max_iters=max_iters, tol=tol, seed=seed,
                 init_W=init_W, init_H=init_H)
    G = result.W @ result.W.T
    top = G.max()
    if top <= 0.0:
        return AdjacencyProposal(np.zeros((n, n)), seed, index, True, result.error)
    return AdjacencyProposal(G / top, seed, index, False, result.error)


@dataclass
class BandInputs:
    """Everything needed to draw and score proposals for one window.

    ``predict`` maps an adjacency to ``[k x l x 2]`` predicted tracks of the
    window's real pedestrians; ``truth``/``mask`` are the matching ground truth.
    """

    attention: np.ndarray
    C_map: np.ndarray
    H_t: np.ndarray
    predict: Callable[[np.ndarray], np.ndarray]
    truth: np.ndarray | None = None
    mask: np.ndarray | None = None
    max_iters: int = 500
    tol: float = 1e-8


def generate_band(P: int, inputs: BandInputs, base_seed: int, workers: int = 1) -> ProposalBand:
    """Draw ``P`` proposals with seeds ``base_seed .. base_seed + P - 1`` and score each."""
    if P < 1:
        raise UsageError(f"band size must be >= 1, got {P}")

    def one(p: int):
        prop = propose_adjacency(inputs.attention, inputs.C_map, inputs.H_t, base_seed + p, index=p,
                                 max_iters=inputs.max_iters, tol=inputs.tol)
        traj = inputs.predict(prop.A)
        err = ade(traj, inputs.truth, inputs.mask) if inputs.truth is not None else np.nan
        return prop, traj, err

    if workers > 1 and P > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(P)))
    else:
        results = [one(p) for p in range(P)]
    return ProposalBand([r[0] for r in results], [r[1] for r in results],
                        np.array([r[2] for r in results], dtype=np.float64))


def select_best(band: ProposalBand, ground_truth=None, mask=None):
    """Return ``(proposal, trajectory, error)`` with the lowest error; ties go to the lowest index.

    Errors are recomputed when ``ground_truth`` is given. A band scored
    without ground truth falls back to its first proposal.
    """
    if len(band) == 0:
        raise UsageError("cannot select from an empty band")
    errors = band.errors
    if ground_truth is not None:
        errors = np.array([ade(t, ground_truth, mask) for t in band.trajectories])
    if np.all(np.isnan(errors)):
        return band.proposals[0], band.trajectories[0], float("nan")
    i = int(np.nanargmin(errors))
    return band.proposals[i], band.trajectories[i], float(errors[i])


def inverse_distance(positions) -> np.ndarray:
    """``1 / ||x_i - x_j||`` with a zero diagonal; coincident pairs are capped at ``1 / eps``."""
    x = np.asarray(positions, dtype=np.float64)
    d = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=-1)
    A = 1.0 / np.maximum(d, SGTV_EPS)
    np.fill_diagonal(A, 0.0)
    return A


def adjacency_policy(policy, positions=None, H_t=None, W=None, band_inputs: BandInputs | None = None,
                     P: int = 1, base_seed: int = 0, workers: int = 1) -> np.ndarray:
    """Adjacency for the current window under one of the three relational policies."""
    policy = AdjacencyPolicy.parse(policy) if isinstance(policy, str) else policy
    if policy is AdjacencyPolicy.SGTV_INVERSE_DISTANCE:
        if positions is None:
            raise UsageError("inverse-distance policy needs pedestrian positions")
        return inverse_distance(positions)
    if policy is AdjacencyPolicy.MCR_SOFTMAX_HIDDEN:
        if H_t is None:
            raise UsageError("softmax-hidden policy needs hidden states")
        H_t = np.asarray(value_of(H_t))
        W = H_t if W is None else np.asarray(W)
        return softmax_rows(W @ H_t.T)
    if policy is AdjacencyPolicy.STR_MIN_ERROR:
        if band_inputs is None:
            raise UsageError("min-error policy needs band inputs")
        return select_best(generate_band(P, band_inputs, base_seed, workers))[0].A
    raise UsageError(f"unknown adjacency policy {policy!r}")


def update_states(A_t, H_t):
    """Hidden states handed to the next window: ``A_t @ H_t``."""
    if value_of(A_t).shape[1] != value_of(H_t).shape[0]:
        raise DimensionError(f"update_states: adjacency {value_of(A_t).shape} vs states {value_of(H_t).shape}")
    return matmul(A_t, H_t)


def row_normalise(A) -> np.ndarray:
    """Scale each row of ``A`` to sum to one; all-zero rows stay zero."""
    A = np.asarray(value_of(A), dtype=np.float64)
    deg = A.sum(axis=1, keepdims=True)
    return np.divide(A, deg, out=np.zeros_like(A), where=deg > 0)


def neighbourhood_operator(A) -> np.ndarray:
    """``I + D^-1 A``: each pedestrian keeps its own state and adds the weighted mean of its neighbours.

    Rows without neighbours reduce to the identity.
    """
    A = np.asarray(value_of(A), dtype=np.float64)
    return np.eye(A.shape[0]) + row_normalise(A)


BAND_FIELDS = ("window_id", "proposal_idx", "seed", "error", "degenerate", "weights")


def band_rows(band: ProposalBand, window_id: int) -> list[dict]:
    rows = []
    for prop, err in zip(band.proposals, band.errors):
        rows.append({
            "window_id": window_id, "proposal_idx": prop.index, "seed": prop.seed,
            "error": f"{err:.10g}", "degenerate": int(prop.degenerate),
            "weights": " ".join(f"{w:.6g}" for w in prop.A.ravel()),
        })
    return rows


def write_band_csv(rows: Sequence[dict], path, append: bool = False) -> None:
    with open(path, "a" if append else "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=BAND_FIELDS)
        if not append:
            writer.writeheader()
        writer.writerows(rows)
