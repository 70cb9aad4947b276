"""Central finite-difference oracle shared by the gradient tests."""
import numpy as np

from strggrnn.numerics import Tape, backward, mul, sum_all, value_of

STEP = 1e-5


def numeric_grad(f, x: np.ndarray, h: float = STEP) -> np.ndarray:
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-8)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def check_gradients(build, inputs: dict, seed: int = 0, h: float = STEP) -> dict:
    """Compare tape gradients of ``sum(build(**inputs) * R)`` with finite differences.

    ``build`` must work on both plain arrays and tracked values. ``R`` is a
    fixed random projection so that symmetric cancellations cannot hide bugs.
    Returns the relative error per input.
    """
    arrays = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    out = value_of(build(**arrays))
    R = np.random.default_rng(seed).standard_normal(out.shape)

    tape = Tape()
    tracked = {k: tape.param(v.copy(), k) for k, v in arrays.items()}
    grads = backward(tape, sum_all(mul(build(**tracked), R)))

    errors = {}
    for name, x in arrays.items():
        num = numeric_grad(lambda: float((value_of(build(**arrays)) * R).sum()), x, h)
        errors[name] = rel_error(grads[name], num)
    return errors
