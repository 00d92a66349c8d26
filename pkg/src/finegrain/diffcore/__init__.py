"""Minimal tensors, reverse-mode differentiation and SGD."""
from . import ops
from .gradcheck import check_gradients, numerical_grad, relative_error
from .module import Conv2d, Linear, Module
from .ops import ShapeError
from .optim import OptimizerState, cosine_lr, sgd_step
from .tensor import Tensor, backward, get_dtype, precision, set_precision

__all__ = [
    "Conv2d",
    "Linear",
    "Module",
    "OptimizerState",
    "ShapeError",
    "Tensor",
    "backward",
    "check_gradients",
    "cosine_lr",
    "get_dtype",
    "numerical_grad",
    "ops",
    "precision",
    "relative_error",
    "set_precision",
    "sgd_step",
]
