"""Small reverse-mode automatic differentiation over numpy float64 arrays.

A Tensor records its parents and a backward closure; `Tensor.backward()` runs
the tape in reverse topological order. Only the operations needed by the MLP,
graph-network blocks, and the training losses are provided.
"""

from __future__ import annotations

import numpy as np


class AutodiffError(RuntimeError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Accumulate gradients of this (scalar) tensor into every ancestor."""
        if seed is None:
            if self.value.size != 1:
                raise AutodiffError("backward() without seed requires a scalar")
            seed = np.ones_like(self.value)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                stack.append((p, False))
        self.grad = np.asarray(seed, dtype=np.float64)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None:
                    continue
                if parent.grad is None:
                    parent.grad = g.copy()
                else:
                    parent.grad = parent.grad + g

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        return Tensor(self.value + other.value, (self, other),
                      lambda g: (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape)))

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.value, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        return Tensor(self.value * other.value, (self, other),
                      lambda g: (_unbroadcast(g * other.value, self.shape),
                                 _unbroadcast(g * self.value, other.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        return Tensor(self.value / other.value, (self, other),
                      lambda g: (_unbroadcast(g / other.value, self.shape),
                                 _unbroadcast(-g * self.value / other.value ** 2, other.shape)))

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent: float):
        return Tensor(self.value ** exponent, (self,),
                      lambda g: (g * exponent * self.value ** (exponent - 1),))

    def __matmul__(self, other):
        other = as_tensor(other)
        return Tensor(self.value @ other.value, (self, other),
                      lambda g: (g @ other.value.T, self.value.T @ g))

    def __getitem__(self, idx):
        def back(g):
            full = np.zeros_like(self.value)
            np.add.at(full, idx, g)
            return (full,)
        return Tensor(self.value[idx], (self,), back)

    def reshape(self, *shape):
        return Tensor(self.value.reshape(*shape), (self,),
                      lambda g: (g.reshape(self.shape),))

    def sum(self, axis=None, keepdims=False):
        def back(g):
            if axis is None:
                return (np.broadcast_to(g, self.shape).copy(),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, self.shape).copy(),)
        return Tensor(self.value.sum(axis=axis, keepdims=keepdims), (self,), back)

    def mean(self, axis=None):
        n = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis) / float(n)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- elementwise functions ---------------------------------------------------

def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.value)
    return Tensor(y, (x,), lambda g: (g * (1.0 - y ** 2),))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.value)
    return Tensor(y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    return Tensor(np.log(x.value), (x,), lambda g: (g / x.value,))


def softplus(x: Tensor) -> Tensor:
    # log(1 + e^x), stable for large |x|
    y = np.logaddexp(0.0, x.value)
    return Tensor(y, (x,), lambda g: (g / (1.0 + np.exp(-x.value)),))


def square(x: Tensor) -> Tensor:
    return x * x


def minimum(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.value <= b.value
    return Tensor(np.minimum(a.value, b.value), (a, b),
                  lambda g: (_unbroadcast(g * take_a, a.shape),
                             _unbroadcast(g * ~take_a, b.shape)))


def maximum(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.value >= b.value
    return Tensor(np.maximum(a.value, b.value), (a, b),
                  lambda g: (_unbroadcast(g * take_a, a.shape),
                             _unbroadcast(g * ~take_a, b.shape)))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.value >= lo) & (x.value <= hi)
    return Tensor(np.clip(x.value, lo, hi), (x,), lambda g: (g * inside,))


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.value.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return Tensor(np.concatenate([t.value for t in tensors], axis=axis), tuple(tensors),
                  lambda g: tuple(np.split(g, splits, axis=axis)))


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Row-gather x[idx] with scatter-add backward."""
    idx = np.asarray(idx, dtype=np.intp)

    def back(g):
        full = np.zeros_like(x.value)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor(x.value[idx], (x,), back)


def segment_sum(x: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of x into `num_segments` buckets; empty buckets are zero."""
    segment_ids = np.asarray(segment_ids, dtype=np.intp)
    out = np.zeros((num_segments,) + x.value.shape[1:])
    np.add.at(out, segment_ids, x.value)
    return Tensor(out, (x,), lambda g: (g[segment_ids],))


def stack_rows(tensors: list[Tensor]) -> Tensor:
    """Stack 1-D tensors into a matrix."""
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.value.shape[0] for t in tensors]
    if len(set(sizes)) > 1:
        raise AutodiffError("stack_rows requires equal-length rows")
    value = np.stack([t.value for t in tensors])
    return Tensor(value, tuple(tensors), lambda g: tuple(g[i] for i in range(len(tensors))))
