import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from gradcheck import check_gradients
from strggrnn.errors import DimensionError, DomainError, NumericalError, UsageError
from strggrnn.numerics import (
    SGD, Tape, add, apply_gradients, backward, concat, exp, kron, matmul, mul, nmf, relu, reshape,
    row_norm, scale, sigmoid, softmax_rows, sub, sum_all, take, tanh, transpose,
)


def triple_loop(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for k in range(a.shape[1]):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


dims = st.integers(1, 6)


# -- matmul and primitives -------------------------------------------------------------


def test_matmul_identity_and_dot():
    assert np.array_equal(matmul(np.eye(2), np.array([[3.0, 4], [5, 6]])), [[3, 4], [5, 6]])
    assert np.array_equal(matmul(np.array([[1.0, 2]]), np.array([[3.0], [4]])), [[11]])


def test_matmul_triple_loop_oracle(rng):
    a, b = rng.standard_normal((5, 7)), rng.standard_normal((7, 3))
    assert np.abs(matmul(a, b) - triple_loop(a, b)).max() < 1e-12


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_primitive_examples():
    assert np.array_equal(relu(np.array([[-1.0, 2.0]])), [[0, 2]])
    assert np.allclose(softmax_rows(np.full((1, 3), 7.0)), 1 / 3, atol=1e-15)
    assert sigmoid(np.zeros((1, 1)))[0, 0] == 0.5
    assert tanh(np.zeros((1, 1)))[0, 0] == 0.0


@given(arrays(np.float64, st.tuples(dims, dims), elements=st.floats(-30, 30)))
def test_softmax_rows_sum_to_one(x):
    assert np.abs(softmax_rows(x).sum(axis=1) - 1).max() < 1e-12


def test_broadcast_row_and_column():
    m = np.zeros((3, 2))
    assert np.array_equal(add(m, np.array([[1.0, 2.0]])), [[1, 2]] * 3)
    assert np.array_equal(add(m, np.array([[1.0], [2.0], [3.0]])), [[1, 1], [2, 2], [3, 3]])
    with pytest.raises(DimensionError):
        add(np.zeros((3, 2)), np.zeros((2, 3)))


def test_concat_axes():
    a, b = np.ones((2, 3)), np.zeros((1, 3))
    assert concat([a, b], axis=0).shape == (3, 3)
    assert concat([a, np.zeros((2, 1))], axis=1).shape == (2, 4)
    with pytest.raises(DimensionError):
        concat([a, np.zeros((2, 1))], axis=0)


def test_nonfinite_input_rejected():
    tape = Tape()
    with pytest.raises(DomainError):
        tape.param(np.array([[np.nan]]), "x")


# -- backward ---------------------------------------------------------------------------


def test_backward_linear_map():
    x = np.array([[1.0], [2.0], [3.0]])
    tape = Tape()
    W = tape.param(np.ones((2, 3)), "W")
    g = backward(tape, sum_all(matmul(W, x)))["W"]
    assert np.array_equal(g, np.tile(x.T, (2, 1)))


def test_backward_relu_sign_mask():
    W0 = np.array([[1.0, -2.0], [-0.5, 3.0]])
    tape = Tape()
    W = tape.param(W0, "W")
    assert np.array_equal(backward(tape, sum_all(relu(W)))["W"], (W0 > 0).astype(float))


def test_backward_rejects_foreign_or_nonscalar_loss():
    tape, other = Tape(), Tape()
    w = other.param(np.ones((1, 1)), "w")
    with pytest.raises(UsageError):
        backward(tape, sum_all(w))
    v = tape.param(np.ones((2, 2)), "v")
    with pytest.raises(UsageError):
        backward(tape, mul(v, v))


def test_three_layer_composition_matches_finite_differences(rng):
    def build(W1, W2, W3, x):
        h = tanh(matmul(x, W1))
        h = sigmoid(add(matmul(h, W2), 0.1))
        return relu(add(matmul(h, W3), 0.3))

    errs = check_gradients(build, {"W1": rng.standard_normal((4, 5)), "W2": rng.standard_normal((5, 3)),
                                   "W3": rng.standard_normal((3, 2)), "x": rng.standard_normal((3, 4))})
    assert max(errs.values()) < 1e-3


UNARY = {
    "relu": relu, "sigmoid": sigmoid, "tanh": tanh, "exp": exp, "transpose": transpose,
    "softmax": softmax_rows, "softmax_scaled": lambda a: softmax_rows(a, scale=0.3),
    "scale": lambda a: scale(a, -2.5), "row_norm": row_norm, "sum_all": sum_all,
}


@pytest.mark.parametrize("name", sorted(UNARY))
@given(shape=st.tuples(dims, dims), seed=st.integers(0, 2**16))
def test_unary_gradients(name, shape, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.05, 1.0, shape) * rng.choice([-1.0, 1.0], shape)   # stay off the relu kink
    assert check_gradients(lambda a: UNARY[name](a), {"a": x}, seed)["a"] < 1e-3


BINARY = {"add": add, "sub": sub, "mul": mul}


@pytest.mark.parametrize("name", sorted(BINARY))
@pytest.mark.parametrize("form", ["same", "row", "column", "scalar"])
@given(shape=st.tuples(dims, dims), seed=st.integers(0, 2**16))
def test_binary_gradients_with_broadcast(name, form, shape, seed):
    rng = np.random.default_rng(seed)
    other = {"same": shape, "row": (1, shape[1]), "column": (shape[0], 1), "scalar": (1, 1)}[form]
    errs = check_gradients(BINARY[name], {"a": rng.standard_normal(shape), "b": rng.standard_normal(other)}, seed)
    assert max(errs.values()) < 1e-3


@given(n=dims, k=dims, m=dims, seed=st.integers(0, 2**16))
def test_matmul_gradients(n, k, m, seed):
    rng = np.random.default_rng(seed)
    errs = check_gradients(matmul, {"a": rng.standard_normal((n, k)), "b": rng.standard_normal((k, m))}, seed)
    assert max(errs.values()) < 1e-3


def test_structural_op_gradients(rng):
    x, y = rng.standard_normal((4, 6)), rng.standard_normal((2, 6))
    assert check_gradients(lambda a: reshape(a, (3, 8)), {"a": x})["a"] < 1e-3
    assert check_gradients(lambda a: take(a, (1, 3), (2, 5)), {"a": x})["a"] < 1e-3
    assert max(check_gradients(lambda a, b: concat([a, b], axis=0), {"a": x, "b": y}).values()) < 1e-3
    assert max(check_gradients(lambda a, b: concat([a, b.T], axis=1), {"a": x[:, :2], "b": y[:, :4]}).values()) < 1e-3
    assert max(check_gradients(kron, {"a": rng.standard_normal((2, 3)), "b": rng.standard_normal((3, 2))}).values()) < 1e-3


def test_row_norm_zero_row_has_finite_gradient():
    tape = Tape()
    a = tape.param(np.zeros((2, 2)), "a")
    g = backward(tape, sum_all(row_norm(a)))["a"]
    assert np.all(np.isfinite(g))


def test_kron_matches_numpy(rng):
    a, b = rng.standard_normal((2, 3)), rng.standard_normal((4, 1))
    assert np.array_equal(kron(a, b), np.kron(a, b))


def test_tape_replay_is_bitwise(rng):
    tape = Tape()
    W = tape.param(rng.standard_normal((3, 3)), "W")
    out = softmax_rows(tanh(matmul(W, W)))
    sum_all(out)
    tape.replay()
    out.value[0, 0] += 1.0
    with pytest.raises(NumericalError):
        tape.replay()


# -- NMF ----------------------------------------------------------------------------------


def test_nmf_rank_one_exact():
    res = nmf(np.array([[1.0, 2.0], [2.0, 4.0]]), 1, max_iters=500)
    assert res.error < 1e-6
    assert len(res.reconstruction_errors) <= 500


def test_nmf_zero_target():
    res = nmf(np.zeros((4, 3)), 2)
    assert res.reconstruction_errors == (0.0,)
    assert np.array_equal(res.W @ res.H, np.zeros((4, 3)))


def test_nmf_errors():
    with pytest.raises(DomainError):
        nmf(-np.ones((2, 2)), 1)
    with pytest.raises(DomainError):
        nmf(np.ones((2, 3)), 3)
    with pytest.raises(DomainError):
        nmf(np.ones((2, 3)), 0)


@given(n=st.integers(2, 12), m=st.integers(2, 12), seed=st.integers(0, 2**16), data=st.data())
def test_nmf_monotone_and_nonnegative(n, m, seed, data):
    k = data.draw(st.integers(1, min(n, m)))
    V = np.random.default_rng(seed).random((n, m))
    res = nmf(V, k, max_iters=200, seed=seed)
    errs = np.array(res.reconstruction_errors)
    assert np.all(np.diff(errs) <= 1e-9)
    assert (res.W >= 0).all() and (res.H >= 0).all()


def test_nmf_deterministic_for_seed_and_inits(rng):
    V = rng.random((6, 6))
    W0, H0 = rng.random((6, 3)), rng.random((3, 6))
    a = nmf(V, 3, seed=4, init_W=W0, init_H=H0)
    b = nmf(V, 3, seed=4, init_W=W0, init_H=H0)
    c = nmf(V, 3, seed=5, init_W=W0, init_H=H0)
    assert np.array_equal(a.W, b.W) and np.array_equal(a.H, b.H)
    assert not np.array_equal(a.W, c.W)


# -- updates -----------------------------------------------------------------------------


def test_apply_gradients_examples():
    assert apply_gradients({"p": np.array([[1.0]])}, {"p": np.array([[2.0]])}, 0.5)["p"][0, 0] == 0.0
    p = {"p": np.arange(4.0).reshape(2, 2)}
    assert np.array_equal(apply_gradients(p, {"p": np.zeros((2, 2))}, 0.1)["p"], p["p"])
    with pytest.raises(DimensionError):
        apply_gradients(p, {"p": np.zeros((1, 2))}, 0.1)


def test_sgd_decays_per_epoch():
    opt = SGD(5e-3, 0.95)
    p = {"w": np.zeros((1, 1))}
    p = opt.step(p, {"w": np.ones((1, 1))})
    assert p["w"][0, 0] == -5e-3
    opt.end_epoch()
    assert opt.current_lr == pytest.approx(4.75e-3, abs=1e-15)
    p = opt.step(p, {"w": np.ones((1, 1))})
    assert p["w"][0, 0] == pytest.approx(-5e-3 - 4.75e-3, abs=1e-15)
