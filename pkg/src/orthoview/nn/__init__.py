from . import tensor
from .tensor import Tensor, no_grad

__all__ = ["Tensor", "no_grad", "tensor"]
