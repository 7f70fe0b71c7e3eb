"""Reverse-mode automatic differentiation over dense float64 arrays.

A single tape mechanism serves both training losses in the system (the TD
loss and the container loss with the diversity term), so layers never carry
hand-written gradient code. Tensors created while grad recording is enabled
remember their parents and a vector-Jacobian callback; ``backward`` walks the
graph once in reverse topological order and accumulates gradients into leaf
tensors (parameters).

Everything is float64. Elementwise ops broadcast like numpy; gradients are
un-broadcast by summing over the expanded axes.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "constant",
    "parameter",
    "no_grad",
    "is_recording",
    "backward",
    "concat",
    "bvm",
]


_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph recording (e.g. for acting,
    target-network evaluation, and sibling-policy replay)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def is_recording() -> bool:
    return _GRAD_ENABLED


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    return arr


class Tensor:
    """A node in the computation graph wrapping a float64 ndarray."""

    __slots__ = ("value", "requires_grad", "grad", "_parents", "_vjp", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = _as_array(value)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple[np.ndarray, ...]] | None = None
        self.name = name

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.value.shape}{tag})"

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator overloads ----------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(value) -> Tensor:
    """A graph input with no gradient (observations, masks, targets)."""
    return Tensor(value, requires_grad=False)


def parameter(value, name: str | None = None) -> Tensor:
    """A trainable leaf; ``backward`` deposits its gradient in ``.grad``."""
    return Tensor(value, requires_grad=True, name=name)


def _make(value: np.ndarray, parents: Sequence[Tensor], vjp) -> Tensor:
    out = Tensor(value)
    if _GRAD_ENABLED and any(p.requires_grad or p._parents for p in parents):
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- primitive operations ------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.value + b.value
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.value - b.value
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.value * b.value
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.value / b.value
    return _make(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.value, a.shape),
            _unbroadcast(-g * a.value / (b.value * b.value), b.shape),
        ),
    )


def neg(a: Tensor) -> Tensor:
    return _make(-a.value, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    out = a.value @ b.value
    return _make(out, (a, b), lambda g: (g @ b.value.T, a.value.T @ g))


def bvm(q: Tensor, w: Tensor) -> Tensor:
    """Batched vector-matrix product: (B, n) x (B, n, k) -> (B, k)."""
    out = np.einsum("bn,bnk->bk", q.value, w.value)

    def vjp(g):
        dq = np.einsum("bk,bnk->bn", g, w.value)
        dw = np.einsum("bn,bk->bnk", q.value, g)
        return dq, dw

    return _make(out, (q, w), vjp)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), vjp)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.value.reshape(shape)
    return _make(out, (a,), lambda g: (g.reshape(a.shape),))


def concat(parts: Iterable[Tensor], axis: int = 1) -> Tensor:
    parts = [(_wrap(p)) for p in parts]
    out = np.concatenate([p.value for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, parts, vjp)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    out = np.log(a.value)
    return _make(out, (a,), lambda g: (g / a.value,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.value)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.value))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.value, 0.0)
    return _make(out, (a,), lambda g: (g * (a.value > 0.0),))


def elu(a: Tensor) -> Tensor:
    out = np.where(a.value > 0.0, a.value, np.expm1(a.value))
    return _make(out, (a,), lambda g: (g * np.where(a.value > 0.0, 1.0, out + 1.0),))


def absolute(a: Tensor) -> Tensor:
    out = np.abs(a.value)
    return _make(out, (a,), lambda g: (g * np.sign(a.value),))


def where_const(cond: np.ndarray, a: Tensor, fill: float) -> Tensor:
    """Keep ``a`` where ``cond`` holds, else the constant ``fill``; the
    gradient flows only through kept entries."""
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, a.value, fill)
    return _make(out, (a,), lambda g: (_unbroadcast(np.where(cond, g, 0.0), a.shape),))


def square(a: Tensor) -> Tensor:
    return mul(a, a)


# -- backward pass -------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every trainable leaf.

    The loss must be a scalar node; the graph is released afterwards so a
    fresh tape starts with the next forward pass.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            if node.grad is None:
                node.grad = g.copy() if node._parents else g
            else:
                node.grad = node.grad + g
        if node._vjp is None:
            continue
        parent_grads = node._vjp(g)
        for p, pg in zip(node._parents, parent_grads):
            if not (p.requires_grad or p._parents):
                continue
            acc = grads.get(id(p))
            grads[id(p)] = pg if acc is None else acc + pg
        node._parents = ()
        node._vjp = None
