"""Minimal reverse-mode autodiff over the primitives the model uses."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, grad_check, numeric_grad, rel_error
from .primitives import (
    PRIMITIVES,
    add,
    apply_primitive,
    concat,
    conv1d,
    cosine_similarity,
    gelu,
    index_select,
    irfft,
    layer_norm,
    matmul,
    mean_pool,
    mul,
    record,
    reshape,
    rfft,
    scale,
    scatter,
    sigmoid,
    softmax,
)
from .tensor import DTypeError, GraphError, ShapeError, Tensor, as_tensor, backward, grad_enabled, no_grad

__all__ = [
    "PRIMITIVES", "Tensor", "no_grad", "grad_enabled", "as_tensor", "backward", "apply_primitive", "record",
    "ShapeError", "DTypeError", "GraphError", "CheckpointError",
    "add", "mul", "scale", "matmul", "conv1d", "layer_norm", "softmax", "gelu", "sigmoid",
    "mean_pool", "concat", "index_select", "scatter", "rfft", "irfft", "cosine_similarity", "reshape",
    "grad_check", "GradCheckReport", "numeric_grad", "rel_error",
    "save_checkpoint", "load_checkpoint",
]
