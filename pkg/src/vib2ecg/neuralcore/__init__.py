"""Minimal reverse-mode differentiation for 1D convolutional networks."""

from .checkpoint import CheckpointFormatError, load_checkpoint, loads_checkpoint, dumps_checkpoint, save_checkpoint
from .gradcheck import grad_check, relative_error
from .ops import (
    batchnorm1d,
    concat_channels,
    conv1d,
    l1_loss,
    maxpool1d,
    relu,
    transposed_conv1d,
    weighted_sum,
)
from .optim import Adam, adam_step
from .tensor import Parameter, ShapeError, Tensor

__all__ = [
    "Adam",
    "CheckpointFormatError",
    "Parameter",
    "ShapeError",
    "Tensor",
    "adam_step",
    "batchnorm1d",
    "concat_channels",
    "conv1d",
    "dumps_checkpoint",
    "grad_check",
    "l1_loss",
    "load_checkpoint",
    "loads_checkpoint",
    "maxpool1d",
    "relative_error",
    "relu",
    "save_checkpoint",
    "transposed_conv1d",
    "weighted_sum",
]
