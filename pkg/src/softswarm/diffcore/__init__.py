"""Differentiable numerical substrate: tensors, layers, optimizers, checkpoints."""

from .tensor import DiffcoreError, Tensor, as_tensor, concat, no_grad, zero_grads
from .layers import GruCell, Linear, Mlp, gru_cell_forward, linear_forward, softmax
from .optim import Adam, Sgd
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint

__all__ = [
    "DiffcoreError",
    "Tensor",
    "as_tensor",
    "concat",
    "no_grad",
    "zero_grads",
    "GruCell",
    "Linear",
    "Mlp",
    "gru_cell_forward",
    "linear_forward",
    "softmax",
    "Adam",
    "Sgd",
    "CheckpointError",
    "load_checkpoint",
    "save_checkpoint",
]
