from .tensor import Tensor, Tape, backward, precision, default_dtype, current_tape
from .gradcheck import grad_check, GradCheckResult
from .module import Module, Conv2d, Linear, LayerNorm, Embedding, parameter, kaiming
from .optim import Adam
from . import ops

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "precision",
    "default_dtype",
    "current_tape",
    "grad_check",
    "GradCheckResult",
    "Module",
    "Conv2d",
    "Linear",
    "LayerNorm",
    "Embedding",
    "parameter",
    "kaiming",
    "Adam",
    "ops",
]
