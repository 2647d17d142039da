"""Small float64 reverse-mode differentiation library."""

from . import tensor as F
from .checkpoint import CheckpointError
from .gradcheck import grad_check
from .layers import Affine, Conv2D, LSTMCell, Module, Parameter, ReLU, Sequential, Sigmoid, Softmax
from .optim import Adam, NonFiniteGradient
from .tensor import Tensor, no_grad

__all__ = [
    "Adam", "Affine", "CheckpointError", "Conv2D", "F", "LSTMCell", "Module", "NonFiniteGradient",
    "Parameter", "ReLU", "Sequential", "Sigmoid", "Softmax", "Tensor", "grad_check", "no_grad",
]
