from .autodiff import (
    NonScalarBackwardError,
    ShapeMismatchError,
    Tensor,
    add,
    as_tensor,
    clip,
    const_matmul,
    div,
    exp,
    index_rows,
    log,
    log_gamma,
    logaddexp,
    matmul,
    mul,
    relu,
    sigmoid,
    sub,
    tensor_mean,
    tensor_sum,
    transpose,
)
from .checkpoint import CheckpointFormatError, load_checkpoint, save_checkpoint
from .gradcheck import finite_difference_gradients, max_relative_error
from .optim import AdamState, adam_step
from .special import digamma
from .special import log_gamma as log_gamma_values

__all__ = [
    "AdamState",
    "CheckpointFormatError",
    "NonScalarBackwardError",
    "ShapeMismatchError",
    "Tensor",
    "adam_step",
    "add",
    "as_tensor",
    "clip",
    "const_matmul",
    "digamma",
    "div",
    "exp",
    "finite_difference_gradients",
    "index_rows",
    "load_checkpoint",
    "log",
    "log_gamma",
    "log_gamma_values",
    "logaddexp",
    "matmul",
    "max_relative_error",
    "mul",
    "relu",
    "save_checkpoint",
    "sigmoid",
    "sub",
    "tensor_mean",
    "tensor_sum",
    "transpose",
]
