from .tensor import Tensor, Graph, evaluate, gradients, backward, as_tensor, parameter, resolve_dtype
from .optim import AdamState, adam_step
from .gradcheck import grad_check, grad_check_detail
from .base import Module
from .errors import (
    AvanError,
    ValidationError,
    DatasetError,
    CheckpointError,
    ShapeError,
    NonFiniteError,
)

__all__ = [
    "Tensor", "Graph", "evaluate", "gradients", "backward", "as_tensor", "parameter", "resolve_dtype",
    "AdamState", "adam_step",
    "grad_check", "grad_check_detail",
    "Module",
    "AvanError", "ValidationError", "DatasetError", "CheckpointError", "ShapeError", "NonFiniteError",
]
