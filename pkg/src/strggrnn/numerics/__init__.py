from .autodiff import (
    Tape, Var, as_dense, backward, value_of,
    add, concat, exp, kron, matmul, mul, relu, reshape, row_norm, scale, sigmoid,
    softmax_rows, sub, sum_all, take, tanh, transpose,
)
from .nmf import NmfResult, nmf
from .optim import SGD, apply_gradients
