from .tensor import (
    DimensionError,
    Parameter,
    Tensor,
    concat,
    conv2d,
    conv_transpose2d,
    default_dtype,
    exp,
    full,
    gelu,
    log,
    matmul,
    maximum,
    no_grad,
    ones,
    pad2d,
    randn,
    set_default_dtype,
    sigmoid,
    softmax,
    sqrt,
    zeros,
)
from .gradcheck import GradcheckResult, gradcheck
from .serialization import CheckpointError, read_checkpoint, write_checkpoint
from . import nn

__all__ = [
    "DimensionError", "Parameter", "Tensor", "concat", "conv2d",
    "conv_transpose2d", "default_dtype", "exp", "full", "gelu", "log",
    "matmul", "maximum", "no_grad", "ones", "pad2d", "randn",
    "set_default_dtype", "sigmoid", "softmax", "sqrt", "zeros",
    "GradcheckResult", "gradcheck",
    "CheckpointError", "read_checkpoint", "write_checkpoint",
    "nn",
]
