import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gradcheck import check_gradients
from strggrnn.data import GridMask, SceneMap
from strggrnn.encoders import (
    ContextParams, EmbeddingParams, GridLSTMParams, GridLSTMState, average_pool, combine_neighborhood,
    embed_batch, embed_trajectory, embed_vislets, embed_vislets_batch, encode_context, encode_social,
    encode_visuospatial, fuse_inputs, grid_lstm_step, pad_observation, shifted_pools,
)
from strggrnn.errors import DimensionError, DomainError, UsageError
from strggrnn.numerics import concat


def loop_matmul(a, b):
    return np.array([[sum(a[i, k] * b[k, j] for k in range(a.shape[1])) for j in range(b.shape[1])]
                     for i in range(a.shape[0])])


@pytest.fixture
def emb(rng):
    return EmbeddingParams.init(rng)


# -- embeddings ---------------------------------------------------------------------------


def test_embedding_of_zeros_is_zero(emb):
    assert np.array_equal(embed_trajectory(np.zeros((8, 2)), emb), np.zeros((10, 10)))
    assert np.array_equal(embed_vislets(np.zeros((8, 2)), emb), np.zeros((2, 10)))


def test_identity_extension_places_track_top_left(rng):
    params = EmbeddingParams(np.eye(10, 8), np.eye(2, 10), np.eye(8, 10))
    X = rng.standard_normal((8, 2))
    out = embed_trajectory(X, params)
    assert np.array_equal(out[:8, :2], X) and not out[8:].any() and not out[:, 2:].any()
    V = rng.standard_normal((8, 2))
    v = embed_vislets(V, params)
    assert np.array_equal(v[:, :8], V.T) and not v[:, 8:].any()


def test_embeddings_match_loop_oracle(rng, emb):
    X = rng.standard_normal((8, 2))
    oracle = loop_matmul(loop_matmul(emb.W_traj_left, X), emb.W_traj_right)
    assert np.abs(embed_trajectory(X, emb) - oracle).max() < 1e-12
    V = rng.standard_normal((8, 2))
    assert np.abs(embed_vislets(V, emb) - loop_matmul(V.T, emb.W_vis)).max() < 1e-12


def test_batched_embeddings_equal_per_pedestrian_forms(rng, emb):
    X, V = rng.standard_normal((5, 8, 2)), rng.standard_normal((5, 8, 2))
    batch, vb = embed_batch(X, emb), embed_vislets_batch(V, emb)
    for i in range(5):
        assert np.allclose(batch[i], embed_trajectory(X[i], emb).ravel(), atol=1e-12)
        assert np.allclose(vb[i], embed_vislets(V[i], emb).ravel(), atol=1e-12)


def test_short_track_front_padded():
    X = np.arange(8.0).reshape(4, 2)
    P = pad_observation(X)
    assert P.shape == (8, 2) and np.array_equal(P[:4], np.tile(X[0], (4, 1))) and np.array_equal(P[4:], X)


def test_embedding_errors(emb):
    with pytest.raises(UsageError):
        embed_vislets(None, emb)
    with pytest.raises(DomainError):
        embed_trajectory(np.full((8, 2), np.inf), emb)


def test_fuse_inputs(emb, rng):
    Xh, Vh = embed_trajectory(rng.standard_normal((8, 2)), emb), embed_vislets(rng.standard_normal((8, 2)), emb)
    assert fuse_inputs(Xh, Vh).shape == (12, 10)
    assert fuse_inputs(Xh) is Xh
    with pytest.raises(DimensionError):
        fuse_inputs(Xh, np.zeros((2, 9)))


# -- grid LSTM -----------------------------------------------------------------------------


def test_zero_params_halve_memory(rng):
    params = GridLSTMParams.zeros(3, 2, hidden=4, output=2)
    m = rng.standard_normal((5, 4))
    state = GridLSTMState((np.zeros((5, 4)),) * 2, (m, -m))
    _, new = grid_lstm_step((np.ones((5, 3)), np.ones((5, 2))), state, params)
    assert np.allclose(new.m[0], 0.5 * m, atol=1e-15)
    assert np.allclose(new.h[1], 0.5 * np.tanh(-0.5 * m), atol=1e-15)


def test_zero_everything_gives_zero_outputs():
    params = GridLSTMParams.zeros(3, 2, hidden=4, output=2)
    (f0, f1), state = grid_lstm_step((np.zeros((5, 3)), np.zeros((5, 2))), GridLSTMState.zeros(5, 4), params)
    assert not f0.any() and not f1.any() and not state.h[0].any()


def _sig(x):
    return 1 / (1 + math.exp(-x))


def test_scalar_cell_against_hand_computation():
    # hidden = output = 1, one input per dimension; gate columns (i, f, o, g)
    p = GridLSTMParams(
        Wh0=np.array([[0.1, -0.2, 0.3, 0.4], [0.5, 0.6, -0.7, 0.8]]), Wx0=np.array([[0.9, -1.0, 1.1, 1.2]]),
        b0=np.array([[0.01, 0.02, 0.03, 0.04]]), Wout0=np.array([[1.5]]),
        Wh1=np.array([[-0.3, 0.2, 0.1, 0.0], [0.4, -0.5, 0.6, -0.7]]), Wx1=np.array([[0.2, 0.3, -0.4, 0.5]]),
        b1=np.array([[0.0, 1.0, 0.0, 0.0]]), Wout1=np.array([[-2.0]]))
    h, m, x = (0.3, -0.6), (0.2, 0.9), (0.7, -1.1)
    state = GridLSTMState(tuple(np.array([[v]]) for v in h), tuple(np.array([[v]]) for v in m))
    (f0, f1), new = grid_lstm_step(tuple(np.array([[v]]) for v in x), state, p)
    for d, f in enumerate((f0, f1)):
        Wh, Wx, b, Wout = p.dim(d)
        z = [h[0] * Wh[0, c] + h[1] * Wh[1, c] + x[d] * Wx[0, c] + b[0, c] for c in range(4)]
        m_new = _sig(z[1]) * m[d] + _sig(z[0]) * math.tanh(z[3])
        h_new = _sig(z[2]) * math.tanh(m_new)
        assert abs(new.m[d][0, 0] - m_new) < 1e-12
        assert abs(new.h[d][0, 0] - h_new) < 1e-12
        assert abs(f[0, 0] - h_new * Wout[0, 0]) < 1e-12


@given(seed=st.integers(0, 2**16), steps=st.integers(1, 6), gain=st.floats(0.1, 20.0))
def test_hidden_bounded_by_one(seed, steps, gain):
    rng = np.random.default_rng(seed)
    p = GridLSTMParams(*(gain * rng.standard_normal(s) for s in
                         [(8, 16), (3, 16), (1, 16), (4, 2), (8, 16), (2, 16), (1, 16), (4, 2)]))
    state = GridLSTMState.zeros(3, 4)
    for _ in range(steps):
        _, state = grid_lstm_step((gain * rng.standard_normal((3, 3)), rng.standard_normal((3, 2))), state, p)
        assert max(np.abs(h).max() for h in state.h) <= 1.0


def test_encode_social_shapes_and_zero_params(rng):
    T = rng.standard_normal((20, 120))
    f, state = encode_social(T, GridLSTMState.zeros(20), GridLSTMParams.init(rng, 100, 20))
    assert f.shape == (20, 8) and state.h[0].shape == (20, 128)
    f0, _ = encode_social(T, GridLSTMState.zeros(20), GridLSTMParams.zeros(100, 20))
    assert not f0.any()
    with pytest.raises(DimensionError):
        encode_social(np.zeros((20, 100)), GridLSTMState.zeros(20), GridLSTMParams.zeros(100, 20))


def test_encode_social_deterministic(rng):
    T, p = rng.standard_normal((20, 120)), GridLSTMParams.init(rng, 100, 20)
    a, _ = encode_social(T, GridLSTMState.zeros(20), p)
    b, _ = encode_social(T, GridLSTMState.zeros(20), p)
    assert np.array_equal(a, b)


# -- context -------------------------------------------------------------------------------


def conv_then_pool(S, kernel):
    """Loop oracle: stride-1 zero-padded 3x3 cross-correlation followed by 8x8 average pooling."""
    H, W = S.shape
    padded = np.pad(S, 1)
    out = np.zeros_like(S)
    for r in range(H):
        for c in range(W):
            out[r, c] = sum(kernel[a, b] * padded[r + a, c + b] for a in range(3) for b in range(3))
    return average_pool(out)


def test_shifted_pools_equal_direct_convolution(rng):
    S = rng.random((16, 24))
    kernel = rng.standard_normal((3, 3))
    fast = (kernel.ravel() @ shifted_pools(SceneMap(S))).reshape(8, 8)
    assert np.abs(fast - conv_then_pool(S, kernel)).max() < 1e-12


def test_pooling_preserves_constants():
    assert np.allclose(average_pool(np.full((13, 21), 0.7)), 0.7, atol=1e-15)


def _ctx(kernel=None, bias=0.0):
    p = ContextParams(np.zeros((3, 3)) if kernel is None else kernel, np.array([[bias]]), np.zeros((136, 64)))
    return p


def test_context_mask_and_bias():
    scene = SceneMap(np.full((10, 10), 0.4))
    f_S, h_S = np.ones((20, 8)), np.ones((20, 128))
    mask = np.zeros((8, 8))
    mask[2, 3] = 1
    C = encode_context(scene, f_S, h_S, GridMask(mask), _ctx(bias=0.25))
    assert C[2, 3] == 0.25 and np.count_nonzero(C) == 1
    C_full = encode_context(scene, f_S, h_S, GridMask(), _ctx(bias=0.25))
    assert np.allclose(C_full, 0.25)


def test_context_rejects_tiny_scene():
    with pytest.raises(DomainError):
        encode_context(SceneMap(np.ones((2, 5))), np.ones((20, 8)), np.ones((20, 128)), GridMask(), _ctx())


def test_visuospatial_shapes_and_zero_params(rng):
    C, V = rng.random((8, 8)), rng.standard_normal((20, 20))
    f, _ = encode_visuospatial(C, V, GridLSTMState.zeros(20), GridLSTMParams.zeros(64, 20))
    assert f.shape == (20, 8) and not f.any()
    p = GridLSTMParams.init(rng, 64, 20)
    a, _ = encode_visuospatial(C, V, GridLSTMState.zeros(20), p)
    b, _ = encode_visuospatial(C, V, GridLSTMState.zeros(20), p)
    assert np.array_equal(a, b)


def test_combine_neighborhood(rng):
    f_S, f_O = rng.standard_normal((20, 8)), rng.standard_normal((20, 8))
    assert np.abs(combine_neighborhood(f_S, f_O) - loop_matmul(f_S, f_O.T)).max() < 1e-12
    assert not combine_neighborhood(f_S, np.zeros((20, 8))).any()
    f_S[3] = 0
    assert not combine_neighborhood(f_S, f_O)[3].any()
    with pytest.raises(DimensionError):
        combine_neighborhood(f_S, np.zeros((20, 7)))


# -- gradients ------------------------------------------------------------------------------


def test_embedding_gradients(rng):
    X = rng.standard_normal((3, 8, 2))

    def build(L, R, Wv):
        p = EmbeddingParams(L, R, Wv)
        return concat([embed_batch(X, p), embed_vislets_batch(X, p)], axis=1)

    errs = check_gradients(build, {"L": rng.standard_normal((10, 8)), "R": rng.standard_normal((2, 10)),
                                   "Wv": rng.standard_normal((8, 10))})
    assert max(errs.values()) < 1e-3


def _small_lstm(rng, in0, in1, hidden=3, output=2):
    return {k: 0.7 * v for k, v in GridLSTMParams.init(rng, in0, in1, hidden, output).named().items()}


def test_grid_lstm_gradients(rng):
    x0, x1 = rng.standard_normal((4, 3)), rng.standard_normal((4, 2))
    h = (rng.standard_normal((4, 3)), rng.standard_normal((4, 3)))
    m = (rng.standard_normal((4, 3)), rng.standard_normal((4, 3)))

    def build(h0, m1, x, **w):
        (f0, f1), state = grid_lstm_step((x, x1), GridLSTMState((h0, h[1]), (m[0], m1)), GridLSTMParams(**w))
        return fuse_inputs(f0, f1)

    errs = check_gradients(build, {"h0": h[0], "m1": m[1], "x": x0, **_small_lstm(rng, 3, 2)})
    assert max(errs.values()) < 1e-3


def test_convolution_gradients(rng):
    scene = SceneMap(rng.random((6, 6)))
    mask = GridMask((rng.random((8, 8)) > 0.3).astype(float))
    pooled = shifted_pools(scene)

    def build(kernel, bias, W_mod, f_S, h_S):
        return encode_context(scene, f_S, h_S, mask, ContextParams(kernel, bias, W_mod), pooled=pooled)

    errs = check_gradients(build, {"kernel": rng.standard_normal((3, 3)), "bias": rng.standard_normal((1, 1)),
                                   "W_mod": rng.standard_normal((5, 64)), "f_S": rng.standard_normal((4, 2)),
                                   "h_S": rng.standard_normal((4, 3))})
    assert max(errs.values()) < 1e-3
