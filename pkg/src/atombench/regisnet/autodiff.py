"""Tape-free reverse-mode automatic differentiation over numpy arrays.

Every :class:`Tensor` remembers its parents and a closure that pushes its
gradient to them; :meth:`Tensor.backward` walks the graph in reverse
topological order.  All arithmetic is float64.
"""
from __future__ import annotations

import numpy as np


class NumericError(FloatingPointError):
    """A non-finite value showed up in a forward or backward pass."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def as_tensor(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64), constant=True)


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "tag", "constant")

    def __init__(self, value, parents=(), backward_fn=None, tag=None, constant=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.tag = tag
        # constants (input data) never receive gradients
        self.constant = constant

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, tag={self.tag!r})"

    def _accumulate(self, g):
        if self.constant:
            return
        self.grad = g if self.grad is None else self.grad + g

    def backward(self, seed=None):
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.value) if seed is None else np.asarray(seed, dtype=np.float64)
        for node in reversed(order):
            if node.backward_fn is not None and node.grad is not None:
                node.backward_fn(node.grad)
                if not np.all(np.isfinite(node.grad)):
                    raise NumericError(f"non-finite gradient at {node.tag or 'node'}")

    # arithmetic -------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            a._accumulate(_unbroadcast(g, a.shape))
            b._accumulate(_unbroadcast(g, b.shape))

        return Tensor(a.value + b.value, (a, b), back)

    __radd__ = __add__

    def __neg__(self):
        a = self
        return Tensor(-a.value, (a,), lambda g: a._accumulate(-g))

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            a._accumulate(_unbroadcast(g * b.value, a.shape))
            b._accumulate(_unbroadcast(g * a.value, b.shape))

        return Tensor(a.value * b.value, (a, b), back)

    __rmul__ = __mul__

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            if b.value.ndim == 1:
                a._accumulate(_unbroadcast(g[..., None] * b.value, a.shape))
                b._accumulate((a.value * g[..., None]).reshape(-1, b.value.size).sum(axis=0))
                return
            if not a.constant:
                a._accumulate(_unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.shape))
            if b.value.ndim == 2:
                # shared weight matrix: fold the batch axes into one GEMM
                gb = a.value.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(a.value, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.shape))

        return Tensor(a.value @ b.value, (a, b), back)

    def sum(self, axis=None, keepdims=False):
        a = self

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.shape).copy())

        return Tensor(a.value.sum(axis=axis, keepdims=keepdims), (a,), back)

    def mean(self, axis=None):
        n = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    def reshape(self, *shape):
        a = self
        return Tensor(a.value.reshape(*shape), (a,), lambda g: a._accumulate(g.reshape(a.shape)))

    def transpose(self, *axes):
        a = self
        inv = np.argsort(axes)
        return Tensor(a.value.transpose(axes), (a,), lambda g: a._accumulate(g.transpose(inv)))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Row softmax with max subtraction."""
    z = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        x._accumulate(s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return Tensor(s, (x,), back, tag="softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    mu = x.value.mean(axis=-1, keepdims=True)
    xc = x.value - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.value + bias.value

    def back(g):
        n = x.value.shape[-1]
        gx = g * gain.value
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).sum(axis=-1, keepdims=True) / n)
        x._accumulate(dx)
        gain._accumulate(_unbroadcast(g * xhat, gain.shape))
        bias._accumulate(_unbroadcast(g, bias.shape))

    return Tensor(out, (x, gain, bias), back, tag="layer_norm")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-form GELU; smooth, so finite-difference checks stay clean."""
    v = x.value
    v2 = v * v
    inner = _GELU_C * v * (1.0 + 0.044715 * v2)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)

    def back(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * v2)
        x._accumulate(g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner))

    return Tensor(out, (x,), back, tag="gelu")
