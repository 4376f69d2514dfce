"""Deterministic tensor engine: tape autodiff, AdamW, seeded streams, checkpoints."""

from .tensor import (
    InvalidAttributeError,
    ShapeMismatchError,
    Tape,
    TapeError,
    Tensor,
    absval,
    add,
    backward,
    concat,
    conv2d,
    div,
    exp,
    gelu,
    log,
    log_softmax,
    matmul,
    max_scalar,
    mul,
    no_grad,
    reduce_mean,
    reduce_sum,
    reduce_var,
    relu,
    reshape,
    slice_rows,
    softmax,
    sqrt,
    sub,
    transpose,
)
from .optim import AdamW, NonFiniteGradError, scheduled_lr
from .rng import RngStream, derive_stream_id
from . import checkpoint, kernels

__all__ = [
    "Tensor", "Tape", "TapeError", "ShapeMismatchError", "InvalidAttributeError",
    "add", "sub", "mul", "div", "matmul", "transpose", "conv2d", "relu", "gelu",
    "log", "exp", "sqrt", "absval", "max_scalar", "softmax", "log_softmax",
    "reduce_sum", "reduce_mean", "reduce_var", "concat", "reshape", "slice_rows",
    "backward", "no_grad",
    "AdamW", "NonFiniteGradError", "scheduled_lr",
    "RngStream", "derive_stream_id",
    "checkpoint", "kernels",
]
