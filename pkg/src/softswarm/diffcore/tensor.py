"""Reverse-mode automatic differentiation over dense float64 arrays.

The engine is deliberately small: a :class:`Tensor` wraps a numpy array,
each operation records a closure returning the gradients of its inputs, and
``backward`` walks the recorded graph in reverse topological order.
Everything is 64-bit and single-threaded, so repeated evaluation of the
same graph is bit-identical.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "DiffcoreError",
    "no_grad",
    "as_tensor",
    "concat",
    "zero_grads",
]


class DiffcoreError(RuntimeError):
    """Misuse of the autodiff engine (shape mismatch, double backward, ...)."""


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (forward values only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


# Type of an op's backward rule: output gradient -> one gradient per parent
# (None for parents that need no gradient).
BackwardRule = Callable[[np.ndarray], tuple]


class Tensor:
    """A float64 array plus an optional gradient of identical shape.

    Leaf tensors created with ``requires_grad=True`` act as learnable
    parameters: after ``loss.backward()`` their ``grad`` holds
    d(loss)/d(param), accumulated additively across every use in the
    forward pass (parameter sharing therefore sums contributions).
    """

    __slots__ = ("data", "grad", "requires_grad", "name",
                 "_parents", "_backward", "_backward_ran")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardRule | None = None
        self._backward_ran = False

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def assert_finite(self, what: str = "tensor") -> None:
        if not np.all(np.isfinite(self.data)):
            raise DiffcoreError(f"non-finite values in {what}")

    def _needs_tape(self) -> bool:
        return self.requires_grad or bool(self._parents)

    @staticmethod
    def _make(data: np.ndarray, parents: Sequence["Tensor"],
              backward: BackwardRule) -> "Tensor":
        out = Tensor(data)
        if _GRAD_ENABLED and any(p._needs_tape() for p in parents):
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other
        return Tensor._make(
            a.data + b.data, (a, b),
            lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other) -> "Tensor":
        return self + (-as_tensor(other))

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other
        return Tensor._make(
            a.data * b.data, (a, b),
            lambda g: (_unbroadcast(g * b.data, a.data.shape),
                       _unbroadcast(g * a.data, b.data.shape)))

    __rmul__ = __mul__

    def __truediv__(self, scalar) -> "Tensor":
        if isinstance(scalar, Tensor):
            raise DiffcoreError("division only supported by python scalars")
        return self * (1.0 / float(scalar))

    def matmul(self, other: "Tensor") -> "Tensor":
        other = as_tensor(other)
        a, b = self, other
        if a.data.ndim != 2 or b.data.ndim != 2:
            raise DiffcoreError("matmul expects 2-D operands")
        if a.data.shape[1] != b.data.shape[0]:
            raise DiffcoreError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
        return Tensor._make(
            a.data @ b.data, (a, b),
            lambda g: (g @ b.data.T, a.data.T @ g))

    __matmul__ = matmul

    def transpose(self) -> "Tensor":
        if self.data.ndim != 2:
            raise DiffcoreError("transpose expects a 2-D tensor")
        return Tensor._make(self.data.T.copy(), (self,), lambda g: (g.T,))

    def square(self) -> "Tensor":
        a = self
        return Tensor._make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))

    # -- nonlinearities --------------------------------------------------------

    def relu(self) -> "Tensor":
        a = self
        return Tensor._make(np.maximum(a.data, 0.0), (a,),
                            lambda g: (g * (a.data > 0.0),))

    def sigmoid(self) -> "Tensor":
        y = _sigmoid(self.data)
        return Tensor._make(y, (self,), lambda g: (g * y * (1.0 - y),))

    def tanh(self) -> "Tensor":
        y = np.tanh(self.data)
        return Tensor._make(y, (self,), lambda g: (g * (1.0 - y * y),))

    def exp(self) -> "Tensor":
        y = np.exp(self.data)
        return Tensor._make(y, (self,), lambda g: (g * y,))

    def log(self) -> "Tensor":
        a = self
        return Tensor._make(np.log(a.data), (a,), lambda g: (g / a.data,))

    # -- reductions ------------------------------------------------------------

    def sum(self) -> "Tensor":
        a = self
        return Tensor._make(np.asarray(a.data.sum()), (a,),
                            lambda g: (np.full_like(a.data, float(g)),))

    def mean(self) -> "Tensor":
        a = self
        n = a.data.size
        return Tensor._make(np.asarray(a.data.mean()), (a,),
                            lambda g: (np.full_like(a.data, float(g) / n),))

    # -- structural ops ----------------------------------------------------------

    def gather_rows(self, idx) -> "Tensor":
        """Select rows by integer index; backward scatter-adds."""
        a = self
        ix = np.asarray(idx, dtype=np.intp)

        def bwd(g):
            out = np.zeros_like(a.data)
            np.add.at(out, ix, g)
            return (out,)

        return Tensor._make(a.data[ix], (a,), bwd)

    def slice_cols(self, lo: int, hi: int) -> "Tensor":
        """Contiguous column slice [lo, hi) of a 2-D tensor."""
        a = self
        if a.data.ndim != 2:
            raise DiffcoreError("slice_cols expects a 2-D tensor")

        def bwd(g):
            out = np.zeros_like(a.data)
            out[:, lo:hi] = g
            return (out,)

        return Tensor._make(a.data[:, lo:hi].copy(), (a,), bwd)

    def take_along_rows(self, cols) -> "Tensor":
        """Pick one entry per row: out[i] = self[i, cols[i]]."""
        a = self
        cs = np.asarray(cols, dtype=np.intp)
        rows = np.arange(a.data.shape[0])

        def bwd(g):
            out = np.zeros_like(a.data)
            out[rows, cs] = g
            return (out,)

        return Tensor._make(a.data[rows, cs], (a,), bwd)

    def softmax(self) -> "Tensor":
        """Row softmax computed with max-subtraction for stability."""
        z = self.data - self.data.max(axis=-1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=-1, keepdims=True)

        def bwd(g):
            dot = (g * y).sum(axis=-1, keepdims=True)
            return (y * (g - dot),)

        return Tensor._make(y, (self,), bwd)

    def log_softmax(self) -> "Tensor":
        m = self.data.max(axis=-1, keepdims=True)
        z = self.data - m
        y = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        p = np.exp(y)

        def bwd(g):
            return (g - p * g.sum(axis=-1, keepdims=True),)

        return Tensor._make(y, (self,), bwd)

    def masked_softmax(self, mask: np.ndarray) -> "Tensor":
        """Row softmax restricted to ``mask`` (truthy = keep).

        Fully masked rows yield all-zero rows rather than NaN; that is the
        convention for agent groups with no present neighbors.
        """
        m = np.asarray(mask, dtype=bool)
        if m.shape != self.data.shape:
            raise DiffcoreError("mask shape must match tensor shape")
        masked = np.where(m, self.data, -np.inf)
        row_max = masked.max(axis=-1, keepdims=True)
        live = np.isfinite(row_max)
        shifted = np.where(m, self.data - np.where(live, row_max, 0.0), 0.0)
        e = np.where(m, np.exp(shifted), 0.0)
        denom = e.sum(axis=-1, keepdims=True)
        y = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)

        def bwd(g):
            dot = (g * y).sum(axis=-1, keepdims=True)
            return (y * (g - dot),)

        return Tensor._make(y, (self,), bwd)

    # -- backward pass -----------------------------------------------------------

    def backward(self) -> None:
        """Populate ``grad`` on every reachable parameter with d(self)/d(param).

        ``self`` must be scalar.  Calling backward a second time on the same
        forward result is an error; rebuild the graph first.
        """
        if self.data.size != 1:
            raise DiffcoreError("backward requires a scalar loss")
        if self._backward_ran:
            raise DiffcoreError("backward called twice without an intervening forward")
        self._backward_ran = True

        # iterative topological sort (graphs can be deep for long unrolls)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent._needs_tape():
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over broadcast dimensions back down to ``shape``."""
    if grad.shape == shape:
        return grad
    g = grad
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along ``axis``; backward splits the gradient."""
    ts = [as_tensor(t) for t in tensors]
    y = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        outs = []
        for lo, hi in zip(offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(int(lo), int(hi))
            outs.append(g[tuple(sl)])
        return tuple(outs)

    return Tensor._make(y, tuple(ts), bwd)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()
