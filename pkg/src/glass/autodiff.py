"""Reverse-mode automatic differentiation over numpy arrays.

A `Tensor` wraps an ndarray and remembers how it was produced; calling
`backward()` on a scalar loss walks the graph once in reverse topological
order and accumulates gradients into every `Parameter` (and any other
tensor built with requires_grad=True). Only the operations the model needs
are implemented; everything is deterministic given identical inputs.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from .errors import AccumulationError, ShapeError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _sum_to_shape(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back down to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_done")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _vjp: Callable[[np.ndarray], tuple[np.ndarray | None, ...]] | None = None,
    ):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._vjp = _vjp
        self._done = False

    # -- basic introspection ------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- graph construction helper -------------------------------------------
    @staticmethod
    def _make(data: np.ndarray, parents: tuple["Tensor", ...], vjp) -> "Tensor":
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            return Tensor(data, requires_grad=True, _parents=parents, _vjp=vjp)
        return Tensor(data)

    # -- arithmetic -----------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other
        out = a.data + b.data
        return Tensor._make(out, (a, b), lambda g: (_sum_to_shape(g, a.shape), _sum_to_shape(g, b.shape)))

    __radd__ = __add__

    def __neg__(self):
        a = self
        return Tensor._make(-a.data, (a,), lambda g: (-g,))

    def __sub__(self, other):
        other = as_tensor(other)
        a, b = self, other
        out = a.data - b.data
        return Tensor._make(out, (a, b), lambda g: (_sum_to_shape(g, a.shape), _sum_to_shape(-g, b.shape)))

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other
        out = a.data * b.data
        return Tensor._make(
            out, (a, b),
            lambda g: (_sum_to_shape(g * b.data, a.shape), _sum_to_shape(g * a.data, b.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self, other
        out = a.data / b.data
        return Tensor._make(
            out, (a, b),
            lambda g: (
                _sum_to_shape(g / b.data, a.shape),
                _sum_to_shape(-g * a.data / (b.data * b.data), b.shape),
            ),
        )

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self, other
        if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
            raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
        out = a.data @ b.data

        def vjp(g):
            ga = g @ np.swapaxes(b.data, -1, -2)
            gb = np.swapaxes(a.data, -1, -2) @ g
            return _sum_to_shape(ga, a.shape), _sum_to_shape(gb, b.shape)

        return Tensor._make(out, (a, b), vjp)

    # -- shape ops --------------------------------------------------------------
    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        out = a.data.reshape(shape)
        return Tensor._make(out, (a,), lambda g: (g.reshape(a.shape),))

    def transpose(self, *axes) -> "Tensor":
        a = self
        out = a.data.transpose(axes)
        inv = np.argsort(axes)
        return Tensor._make(out, (a,), lambda g: (g.transpose(inv),))

    def swapaxes(self, ax1: int, ax2: int) -> "Tensor":
        a = self
        out = np.swapaxes(a.data, ax1, ax2)
        return Tensor._make(out, (a,), lambda g: (np.swapaxes(g, ax1, ax2),))

    def __getitem__(self, key) -> "Tensor":
        a = self

        def vjp(g):
            full = np.zeros(a.shape, dtype=g.dtype)
            full[key] = g
            return (full,)

        return Tensor._make(a.data[key], (a,), vjp)

    # -- reductions --------------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self
        out = a.data.sum(axis=axis, keepdims=keepdims)

        def vjp(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape),)

        return Tensor._make(np.asarray(out), (a,), vjp)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self
        out = a.data.mean(axis=axis, keepdims=keepdims, dtype=a.dtype)
        if axis is None:
            n = a.data.size
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            n = 1
            for ax in axes:
                n *= a.shape[ax]

        def vjp(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            scale = np.asarray(1.0 / n, dtype=a.dtype)
            return (np.broadcast_to(g, a.shape) * scale,)

        return Tensor._make(np.asarray(out), (a,), vjp)

    # -- backward ------------------------------------------------------------------
    def backward(self) -> None:
        """Populate .grad on every requires_grad tensor reachable from this scalar."""
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar, got shape {self.shape}")
        if self._done:
            raise AccumulationError("backward() already called on this graph; rebuild or reset first")
        self._done = True

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            if node is self or not node._parents:
                node.grad = g


class Parameter(Tensor):
    """A named leaf tensor updated by the optimizer."""

    __slots__ = ("name",)

    def __init__(self, data: np.ndarray, name: str = ""):
        super().__init__(np.asarray(data), requires_grad=True)
        self.name = name


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- elementwise primitives ---------------------------------------------------

def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return Tensor._make(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return Tensor._make(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return Tensor._make(out, (x,), lambda g: (g * (0.5 / out),))


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return Tensor._make(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = 1.0 / (1.0 + np.exp(-x.data))
    return Tensor._make(out, (x,), lambda g: (g * out * (1.0 - out),))


def absolute(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return Tensor._make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor._make(x.data * mask, (x,), lambda g: (g * mask,))


_GELU_C = 0.7978845608028654  # sqrt(2/pi)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation (smooth, so finite differences apply)."""
    x = as_tensor(x)
    v = x.data
    inner = _GELU_C * (v + 0.044715 * v**3)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)

    def vjp(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * v * v)
        dt = (1.0 - t * t) * dinner
        return (g * (0.5 * (1.0 + t) + 0.5 * v * dt),)

    return Tensor._make(out, (x,), vjp)


def where(cond: np.ndarray, a, b) -> Tensor:
    """Select elementwise by a boolean ndarray; gradient flows to the chosen branch."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, a.data, b.data)

    def vjp(g):
        zero = np.zeros((), dtype=g.dtype)
        return (
            _sum_to_shape(np.where(cond, g, zero), a.shape),
            _sum_to_shape(np.where(cond, zero, g), b.shape),
        )

    return Tensor._make(out, (a, b), vjp)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return Tensor._make(out, (x,), vjp)


def ordered_mean(x: Tensor, axis: int = -2) -> Tensor:
    """Permutation-invariant mean along one axis.

    Sorting before the reduction canonicalizes the float summation order, so
    any permutation of the same values produces a bit-identical result; the
    gradient of a mean is uniform, independent of element order.
    """
    x = as_tensor(x)
    out = np.sort(x.data, axis=axis).mean(axis=axis, dtype=x.dtype)
    n = x.shape[axis]

    def vjp(g):
        g = np.expand_dims(np.asarray(g), axis)
        return (np.broadcast_to(g, x.shape) * np.asarray(1.0 / n, dtype=x.dtype),)

    return Tensor._make(np.asarray(out), (x,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(out, tuple(tensors), vjp)


def stack_params(values: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Stack same-shape tensors along a new axis."""
    tensors = [as_tensor(t) for t in values]
    out = np.stack([t.data for t in tensors], axis=axis)

    def vjp(g):
        parts = np.split(g, len(tensors), axis=axis)
        return tuple(np.squeeze(p, axis=axis) for p in parts)

    return Tensor._make(out, tuple(tensors), vjp)
