"""Minimal reverse-mode tensor engine used by the mask learner."""

from .optim import Optimizer
from .ops import (
    batch_norm2d,
    conv2d,
    dense,
    max_pool2d,
    relu,
    softmax_cross_entropy,
)
from .tensor import (
    ContractError,
    NonFiniteError,
    ShapeError,
    Tensor,
    backward,
    default_dtype,
    lift,
    make_op,
    no_grad,
    set_debug_checks,
    set_default_dtype,
    use_dtype,
)

__all__ = [
    "ContractError",
    "NonFiniteError",
    "Optimizer",
    "ShapeError",
    "Tensor",
    "backward",
    "batch_norm2d",
    "conv2d",
    "default_dtype",
    "dense",
    "lift",
    "make_op",
    "max_pool2d",
    "no_grad",
    "relu",
    "set_debug_checks",
    "set_default_dtype",
    "softmax_cross_entropy",
    "use_dtype",
]
