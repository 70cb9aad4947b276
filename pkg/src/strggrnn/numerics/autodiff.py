"""Reverse-mode differentiation over dense 2-D float64 arrays.

Every value is a 2-D ``numpy.ndarray`` (the package's dense matrix type).
Operations accept plain arrays or :class:`Var` nodes; when any input is a
``Var`` the operation is appended to that node's :class:`Tape`, otherwise it
simply returns an array. The same model code therefore runs both tracked
(training) and untracked (evaluation, sampling).

    >>> with Tape() as tape:
    ...     w = tape.param(np.ones((2, 2)), "w")
    ...     loss = sum_all(matmul(w, np.ones((2, 1))))
    >>> backward(tape, loss)["w"]
    array([[1., 1.],
           [1., 1.]])
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple

import numpy as np
from scipy.special import expit

from ..errors import DimensionError, DomainError, NumericalError, UsageError


def as_dense(x: Any, name: str = "value") -> np.ndarray:
    """Coerce ``x`` to a finite float64 2-D array (scalars become 1x1, vectors rows)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"{name}: expected a 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name}: non-finite entries")
    return arr


class Var:
    """A tracked value living on a tape."""

    __slots__ = ("value", "tape", "name", "grad")

    def __init__(self, value: np.ndarray, tape: "Tape", name: str | None = None):
        self.value = value
        self.tape = tape
        self.name = name
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def T(self) -> "Var":
        return transpose(self)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"<Var{label} shape={self.shape}>"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return scale(self, -1.0)


def value_of(x: Any) -> np.ndarray:
    return x.value if isinstance(x, Var) else x


class Op(NamedTuple):
    name: str
    forward: Callable[..., np.ndarray]
    # vjp(g, out, *inputs, **kw) -> one gradient (or None) per input
    vjp: Callable[..., tuple]


@dataclass
class Record:
    op: Op
    inputs: tuple
    kwargs: dict
    out: Var


@dataclass
class Tape:
    """Ordered record of primitive operations, single-writer."""

    records: list[Record] = field(default_factory=list)
    leaves: list[Var] = field(default_factory=list)
    params: dict[str, Var] = field(default_factory=dict)
    _outputs: set = field(default_factory=set)

    def __enter__(self) -> "Tape":
        return self

    def __exit__(self, *exc) -> None:
        return None

    def __len__(self) -> int:
        return len(self.records)

    def param(self, value: Any, name: str | None = None) -> Var:
        """Start tracking ``value``; named leaves are reported by :func:`backward`."""
        v = Var(as_dense(value, name or "param"), self, name)
        self.leaves.append(v)
        if name is not None:
            if name in self.params:
                raise UsageError(f"parameter {name!r} already tracked on this tape")
            self.params[name] = v
        return v

    def record(self, op: Op, inputs: tuple, kwargs: dict, out: np.ndarray) -> Var:
        v = Var(out, self)
        self.records.append(Record(op, inputs, kwargs, v))
        self._outputs.add(id(v))
        return v

    def owns(self, v: Var) -> bool:
        return v.tape is self and (id(v) in self._outputs or any(v is leaf for leaf in self.leaves))

    def replay(self) -> bool:
        """Re-run every record from the leaf values; raise if any output differs bitwise."""
        values = {id(leaf): leaf.value for leaf in self.leaves}
        for i, rec in enumerate(self.records):
            args = [values[id(x)] if isinstance(x, Var) else x for x in rec.inputs]
            out = rec.op.forward(*args, **rec.kwargs)
            if out.shape != rec.out.value.shape or not np.array_equal(out, rec.out.value):
                raise NumericalError(f"replay mismatch at record {i} ({rec.op.name})")
            values[id(rec.out)] = out
        return True

    def first_nonfinite(self) -> tuple[int, str] | None:
        """Index and op name of the first record whose output is not finite."""
        for i, rec in enumerate(self.records):
            if not np.all(np.isfinite(rec.out.value)):
                return i, rec.op.name
        return None


def _tape_of(inputs) -> Tape | None:
    tape = None
    for x in inputs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise UsageError("operands are tracked on different tapes")
    return tape


def apply(op: Op, *inputs, **kwargs):
    tape = _tape_of(inputs)
    args = [value_of(x) if isinstance(x, Var) else _coerce(x) for x in inputs]
    out = op.forward(*args, **kwargs)
    if tape is None:
        return out
    inputs = tuple(x if isinstance(x, Var) else a for x, a in zip(inputs, args))
    return tape.record(op, inputs, kwargs, out)


def _coerce(x):
    if isinstance(x, np.ndarray) and x.ndim == 2 and x.dtype == np.float64:
        return x
    return as_dense(x)


def backward(tape: Tape, loss: Var) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to every named parameter.

    Leaf nodes also get their ``.grad`` attribute filled in.
    """
    if not isinstance(loss, Var) or not tape.owns(loss):
        raise UsageError("loss is not a node on this tape")
    if loss.shape != (1, 1):
        raise UsageError(f"loss must be a 1x1 scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.out), None)
        if g is None:
            continue
        rec.out.grad = g
        vals = [value_of(x) for x in rec.inputs]
        parts = rec.op.vjp(g, rec.out.value, *vals, **rec.kwargs)
        for x, gx in zip(rec.inputs, parts):
            if gx is None or not isinstance(x, Var):
                continue
            key = id(x)
            grads[key] = grads[key] + gx if key in grads else gx
    out = {}
    for leaf in tape.leaves:
        leaf.grad = grads.get(id(leaf), np.zeros_like(leaf.value))
        if leaf.name is not None:
            out[leaf.name] = leaf.grad
    return out


# -- shape helpers -----------------------------------------------------------

def _broadcast(a: np.ndarray, b: np.ndarray, opname: str) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise DimensionError(f"{opname}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


# -- primitives ----------------------------------------------------------------

def _matmul_fwd(a, b):
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


MATMUL = Op("matmul", _matmul_fwd, lambda g, out, a, b: (g @ b.T, a.T @ g))


def _add_fwd(a, b):
    _broadcast(a, b, "add")
    return a + b


def _sub_fwd(a, b):
    _broadcast(a, b, "sub")
    return a - b


def _mul_fwd(a, b):
    _broadcast(a, b, "mul")
    return a * b


ADD = Op("add", _add_fwd,
         lambda g, out, a, b: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))
SUB = Op("sub", _sub_fwd,
         lambda g, out, a, b: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))
MUL = Op("mul", _mul_fwd,
         lambda g, out, a, b: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)))
TRANSPOSE = Op("transpose", lambda a: a.T.copy(), lambda g, out, a: (g.T,))
RELU = Op("relu", lambda a: np.maximum(a, 0.0), lambda g, out, a: (g * (a > 0),))
SIGMOID = Op("sigmoid", expit, lambda g, out, a: (g * out * (1.0 - out),))
TANH = Op("tanh", np.tanh, lambda g, out, a: (g * (1.0 - out * out),))
EXP = Op("exp", np.exp, lambda g, out, a: (g * out,))
SUM = Op("sum", lambda a: np.array([[a.sum()]]), lambda g, out, a: (np.full(a.shape, g[0, 0]),))


def _scale_fwd(a, c):
    return a * c


SCALE = Op("scale", _scale_fwd, lambda g, out, a, c: (g * c,))


def _softmax_fwd(a, scale=1.0):
    if a.size == 0:
        raise DomainError("softmax of an empty array")
    z = a * scale
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _softmax_vjp(g, out, a, scale=1.0):
    return (scale * out * (g - (g * out).sum(axis=1, keepdims=True)),)


SOFTMAX = Op("softmax_rows", _softmax_fwd, _softmax_vjp)


def _reshape_fwd(a, shape):
    if a.size != shape[0] * shape[1]:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}")
    return a.reshape(shape).copy()


RESHAPE = Op("reshape", _reshape_fwd, lambda g, out, a, shape: (g.reshape(a.shape),))


def _slice_fwd(a, rows, cols):
    out = a[rows[0]:rows[1], cols[0]:cols[1]]
    if out.size == 0:
        raise DimensionError(f"slice: empty selection {rows}x{cols} of {a.shape}")
    return out.copy()


def _slice_vjp(g, out, a, rows, cols):
    full = np.zeros_like(a)
    full[rows[0]:rows[1], cols[0]:cols[1]] = g
    return (full,)


SLICE = Op("slice", _slice_fwd, _slice_vjp)


def _row_norm_fwd(a):
    return np.sqrt((a * a).sum(axis=1, keepdims=True))


def _row_norm_vjp(g, out, a):
    safe = np.where(out > 0, out, 1.0)
    return (np.where(out > 0, g / safe, 0.0) * a,)


ROW_NORM = Op("row_norm", _row_norm_fwd, _row_norm_vjp)


def _concat_fwd(*xs, axis):
    other = 1 - axis
    if len({x.shape[other] for x in xs}) != 1:
        raise DimensionError(f"concat(axis={axis}): mismatched shapes {[x.shape for x in xs]}")
    return np.concatenate(xs, axis=axis)


def _concat_vjp(g, out, *xs, axis):
    cuts = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return tuple(np.split(g, cuts, axis=axis))


CONCAT = Op("concat", _concat_fwd, _concat_vjp)


def matmul(a, b):
    return apply(MATMUL, a, b)


def add(a, b):
    """Elementwise sum; a 1xC row, Rx1 column or 1x1 operand is broadcast."""
    return apply(ADD, a, b)


def sub(a, b):
    return apply(SUB, a, b)


def mul(a, b):
    return apply(MUL, a, b)


def transpose(a):
    return apply(TRANSPOSE, a)


def concat(xs, axis: int):
    """Concatenate along rows (``axis=0``) or columns (``axis=1``)."""
    if axis not in (0, 1):
        raise UsageError(f"concat axis must be 0 or 1, got {axis}")
    return apply(CONCAT, *xs, axis=axis)


def relu(a):
    return apply(RELU, a)


def sigmoid(a):
    return apply(SIGMOID, a)


def tanh(a):
    return apply(TANH, a)


def exp(a):
    return apply(EXP, a)


def softmax_rows(a, scale: float = 1.0):
    """Row-wise softmax of ``scale * a``."""
    return apply(SOFTMAX, a, scale=float(scale))


def sum_all(a):
    return apply(SUM, a)


def scale(a, c: float):
    return apply(SCALE, a, c=float(c))


def reshape(a, shape: tuple[int, int]):
    return apply(RESHAPE, a, shape=(int(shape[0]), int(shape[1])))


def take(a, rows: tuple[int, int] | None = None, cols: tuple[int, int] | None = None):
    """Contiguous sub-block ``a[r0:r1, c0:c1]``."""
    shape = value_of(a).shape if isinstance(a, Var) else np.shape(a)
    rows = rows or (0, shape[0])
    cols = cols or (0, shape[1])
    return apply(SLICE, a, rows=tuple(rows), cols=tuple(cols))


def row_norm(a):
    """Euclidean norm of every row, as an Rx1 column."""
    return apply(ROW_NORM, a)


# -- kronecker product (batched bilinear embeddings) ---------------------------

def _kron_vjp(g, out, a, b):
    (p, q), (r, s) = a.shape, b.shape
    g4 = g.reshape(p, r, q, s)
    return np.einsum("arbs,rs->ab", g4, b), np.einsum("arbs,ab->rs", g4, a)


KRON = Op("kron", np.kron, _kron_vjp)


def kron(a, b):
    """Kronecker product ``a (x) b``."""
    return apply(KRON, a, b)
