"""Minimal reverse-mode automatic differentiation over float32 tensors."""

from .tensor import GradTape, Tensor, TapeError, as_tensor, backward
from . import ops

__all__ = ["GradTape", "Tensor", "TapeError", "as_tensor", "backward", "ops"]
