"""Tensors, reverse-mode autodiff, layers, loss, and ADAM."""

from . import ops
from .checkpoint import FORMAT_VERSION, load_parameters, save_parameters
from .ops import (
    bce_loss,
    concat,
    conv2d,
    fully_connected,
    l2_penalty,
    maxpool2,
    relu,
    sigmoid,
    subtract,
)
from .optim import Adam, AdamState, adam_step
from .tensor import DTYPE, Parameter, Tape, Tensor, backward

__all__ = [
    "Adam",
    "AdamState",
    "DTYPE",
    "FORMAT_VERSION",
    "Parameter",
    "Tape",
    "Tensor",
    "adam_step",
    "backward",
    "bce_loss",
    "concat",
    "conv2d",
    "fully_connected",
    "l2_penalty",
    "load_parameters",
    "maxpool2",
    "ops",
    "relu",
    "save_parameters",
    "sigmoid",
    "subtract",
]
