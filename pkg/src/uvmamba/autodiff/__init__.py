"""Minimal dense tensor engine with tape-based reverse-mode differentiation."""

from . import functional, ops
from .functional import (
    activation,
    bilinear_resize,
    bilinear_sample,
    conv2d,
    conv_transpose2d,
    gelu,
    layer_norm,
    linear,
    sigmoid,
    silu,
    softplus,
)
from .gradcheck import GradCheckReport, grad_check
from .tensor import DimensionError, NonFiniteError, Tape, Tensor, as_tensor, no_record, record

__all__ = [
    "Tensor", "Tape", "DimensionError", "NonFiniteError", "as_tensor", "record", "no_record",
    "ops", "functional", "linear", "conv2d", "conv_transpose2d", "layer_norm", "activation",
    "silu", "gelu", "softplus", "sigmoid", "bilinear_sample", "bilinear_resize",
    "grad_check", "GradCheckReport",
]
