"""Dense tensors with reverse-mode gradients and a finite-difference checker."""

from . import ops
from .gradcheck import grad_check, numeric_grad, rel_error
from .rng import make_rng
from .tensor import Tensor, as_tensor, grad_enabled, no_grad

__all__ = [
    "Tensor",
    "as_tensor",
    "grad_check",
    "grad_enabled",
    "make_rng",
    "no_grad",
    "numeric_grad",
    "ops",
    "rel_error",
]
