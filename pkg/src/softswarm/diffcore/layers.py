"""Layer primitives built on the autodiff tensor: linear, MLP, GRU cell.

Weights are initialized uniformly in +/- 1/sqrt(fan_in), biases at zero.
All layers operate on batches shaped (batch, features).
"""

from __future__ import annotations

import numpy as np

from .tensor import DiffcoreError, Tensor, concat

__all__ = ["Linear", "Mlp", "GruCell", "linear_forward", "gru_cell_forward", "softmax"]


def _init_weight(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def linear_forward(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight + bias`` with shape checking."""
    if x.data.ndim != 2:
        raise DiffcoreError("linear_forward expects a (batch, features) input")
    if x.data.shape[1] != weight.data.shape[0]:
        raise DiffcoreError(
            f"linear_forward: input width {x.data.shape[1]} does not match "
            f"weight input dimension {weight.data.shape[0]}")
    y = x.matmul(weight)
    return y if bias is None else y + bias


def softmax(z: Tensor) -> Tensor:
    """Row-wise softmax (stable under extreme magnitudes)."""
    return z.softmax()


class Linear:
    """y = x @ W + b with W shaped (in_dim, out_dim)."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 name: str, bias: bool = True):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = Tensor(_init_weight(rng, in_dim, out_dim),
                             requires_grad=True, name=f"{name}/w")
        self.bias = (Tensor(np.zeros(out_dim), requires_grad=True, name=f"{name}/b")
                     if bias else None)

    def __call__(self, x: Tensor) -> Tensor:
        return linear_forward(x, self.weight, self.bias)

    def params(self) -> list[Tensor]:
        return [self.weight] + ([self.bias] if self.bias is not None else [])


class Mlp:
    """Two-layer perceptron with a ReLU hidden layer and linear output."""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int,
                 rng: np.random.Generator, name: str):
        self.fc1 = Linear(in_dim, hidden_dim, rng, f"{name}/fc1")
        self.fc2 = Linear(hidden_dim, out_dim, rng, f"{name}/fc2")

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(self.fc1(x).relu())

    def params(self) -> list[Tensor]:
        return self.fc1.params() + self.fc2.params()


def gru_cell_forward(x: Tensor, h_prev: Tensor, w_ih: Tensor, w_hh: Tensor,
                     b_ih: Tensor, b_hh: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """One GRU step; returns (h_new, reset_gate, update_gate).

    Gate layout stacks [reset | update | candidate] along the output axis of
    the packed matrices.  The update rule is

        r = sigmoid(x Wr + h Ur + br)        reset gate
        z = sigmoid(x Wz + h Uz + bz)        update gate
        n = tanh(x Wn + r * (h Un + bn))     candidate
        h' = z * h + (1 - z) * n

    so with all-zero weights the gates sit at 0.5 and h' = 0.5 * h.
    """
    hidden = h_prev.data.shape[1]
    if x.data.shape[0] != h_prev.data.shape[0]:
        raise DiffcoreError("gru_cell_forward: batch sizes of x and h differ")
    if w_ih.data.shape != (x.data.shape[1], 3 * hidden):
        raise DiffcoreError("gru_cell_forward: w_ih shape mismatch")
    if w_hh.data.shape != (hidden, 3 * hidden):
        raise DiffcoreError("gru_cell_forward: w_hh shape mismatch")

    gi = x.matmul(w_ih) + b_ih
    gh = h_prev.matmul(w_hh) + b_hh
    i_r, i_z, i_n = _split3(gi, hidden)
    h_r, h_z, h_n = _split3(gh, hidden)

    r = (i_r + h_r).sigmoid()
    z = (i_z + h_z).sigmoid()
    n = (i_n + r * h_n).tanh()
    h_new = z * h_prev + (1.0 - z) * n
    return h_new, r, z


def _split3(t: Tensor, width: int) -> tuple[Tensor, Tensor, Tensor]:
    return (t.slice_cols(0, width),
            t.slice_cols(width, 2 * width),
            t.slice_cols(2 * width, 3 * width))


class GruCell:
    """Gated recurrent unit with packed [reset|update|candidate] weights."""

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator, name: str):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.w_ih = Tensor(_init_weight(rng, input_dim, 3 * hidden_dim),
                           requires_grad=True, name=f"{name}/w_ih")
        self.w_hh = Tensor(_init_weight(rng, hidden_dim, 3 * hidden_dim),
                           requires_grad=True, name=f"{name}/w_hh")
        self.b_ih = Tensor(np.zeros(3 * hidden_dim), requires_grad=True, name=f"{name}/b_ih")
        self.b_hh = Tensor(np.zeros(3 * hidden_dim), requires_grad=True, name=f"{name}/b_hh")

    def __call__(self, x: Tensor, h_prev: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        return gru_cell_forward(x, h_prev, self.w_ih, self.w_hh, self.b_ih, self.b_hh)

    def params(self) -> list[Tensor]:
        return [self.w_ih, self.w_hh, self.b_ih, self.b_hh]
