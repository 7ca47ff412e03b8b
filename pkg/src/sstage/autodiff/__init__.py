"""Minimal dense-tensor engine with reverse-mode gradients."""

from . import kernels
from .gradcheck import (GradCheckReport, check_parameters, grad_check, numeric_gradient, relative_error,
                        sample_indices)
from .module import Module, Parameter
from .tensor import (
    DimensionError,
    Tensor,
    add,
    as_tensor,
    batch_norm2d,
    conv2d,
    cumsum,
    dropout,
    l2_norm,
    log,
    matmul,
    mul,
    permute,
    prelu,
    reshape,
    softmax,
    sub,
    tensor_sum,
)

__all__ = [
    "DimensionError", "GradCheckReport", "Module", "Parameter", "Tensor", "add", "as_tensor",
    "batch_norm2d", "check_parameters", "conv2d", "cumsum", "dropout", "grad_check", "kernels",
    "l2_norm", "log", "matmul", "mul", "numeric_gradient", "permute", "prelu", "relative_error",
    "reshape", "sample_indices", "softmax", "sub", "tensor_sum",
]
