"""Minimal dense-tensor core with reverse-mode autodiff."""

from .autograd import (
    GradNode,
    Parameter,
    backward,
    checkpoint,
    constant,
    grad_enabled,
    no_grad,
    set_alloc_hook,
)
from .gradcheck import finite_diff_check
from .ops import (
    add,
    as_node,
    astype,
    causal_attention,
    dropout,
    gather_rows,
    gelu,
    layer_norm,
    matmul,
    mean_all,
    mul,
    neg,
    scale,
    softmax,
    softmax_cross_entropy,
    sub,
    sum_all,
    transpose,
)
from .rng import Rng
from .tensor import DOUBLE, DTYPES, FULL, REDUCED, Tensor, ones, round_reduced, storage_dtype, zeros

__all__ = [
    "GradNode",
    "Parameter",
    "Rng",
    "Tensor",
    "DOUBLE",
    "DTYPES",
    "FULL",
    "REDUCED",
    "add",
    "as_node",
    "astype",
    "backward",
    "causal_attention",
    "checkpoint",
    "constant",
    "dropout",
    "finite_diff_check",
    "gather_rows",
    "gelu",
    "grad_enabled",
    "layer_norm",
    "matmul",
    "mean_all",
    "mul",
    "neg",
    "no_grad",
    "ones",
    "round_reduced",
    "scale",
    "set_alloc_hook",
    "softmax",
    "softmax_cross_entropy",
    "storage_dtype",
    "sub",
    "sum_all",
    "transpose",
    "zeros",
]
