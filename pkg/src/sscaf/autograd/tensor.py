"""Reverse-mode automatic differentiation over dense float arrays.

The graph is built eagerly: each operation stores its parent tensors and a
closure that maps the output gradient to parent gradients.  ``backward()``
walks the tape once in reverse topological order; gradients accumulate
additively across fan-out.  Reductions use numpy's row-major sequential
order throughout, so forward values are bitwise reproducible for identical
inputs.
"""

from __future__ import annotations

import numpy as np

from ..errors import NumericError, ShapeError

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


def _as_float_array(data, dtype=None):
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in _FLOAT_DTYPES:
        arr = arr.astype(np.float32)
    return arr


def _check_finite(op, arr):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by op '{op}'")


class Tensor:
    """Dense float array with optional gradient-tape participation."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_float_array(data, dtype)
        _check_finite("leaf", self.data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents = ()
        self._backward = None

    # ------------------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.shape}, grad={self.requires_grad})"

    # ------------------------------------------------------------------
    def backward(self, grad=None):
        """Backpropagate from this tensor.

        Without an explicit ``grad`` the tensor must be a scalar.
        """
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without gradient needs a scalar output")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.dtype)
            if grad.shape != self.shape:
                raise ShapeError(f"seed gradient shape {grad.shape} != {self.shape}")

        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        self.grad = np.array(grad, dtype=self.dtype)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    __radd__ = __add__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(_wrap(other, self.dtype), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other, self.dtype), scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)


def _wrap(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _node(op, data, parents, backward):
    """Build a graph node; drops the tape when no parent needs gradients."""
    _check_finite(op, data)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    track = any(p.requires_grad for p in parents)
    out.requires_grad = track
    out._parents = tuple(parents) if track else ()
    out._backward = backward if track else None
    return out


def accumulate_grad(t, g):
    """Add ``g`` into ``t.grad`` (no-op for tensors outside the tape)."""
    if not t.requires_grad:
        return
    g = np.asarray(g, dtype=t.dtype)
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g, shape):
    """Reduce gradient ``g`` back to the pre-broadcast ``shape``."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ----------------------------------------------------------------------
# primitive operations
# ----------------------------------------------------------------------

def add(a, b):
    data = a.data + b.data

    def _bw(g):
        accumulate_grad(a, _unbroadcast(g, a.shape))
        accumulate_grad(b, _unbroadcast(g, b.shape))

    return _node("add", data, (a, b), _bw)


def mul(a, b):
    data = a.data * b.data

    def _bw(g):
        accumulate_grad(a, _unbroadcast(g * b.data, a.shape))
        accumulate_grad(b, _unbroadcast(g * a.data, b.shape))

    return _node("mul", data, (a, b), _bw)


def scale(a, s):
    s = float(s)
    data = a.data * s

    def _bw(g):
        accumulate_grad(a, g * s)

    return _node("scale", data, (a,), _bw)


def matmul(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def _bw(g):
        if a.requires_grad:
            ga = np.matmul(g, b.data.swapaxes(-1, -2))
            accumulate_grad(a, _unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(a.data.swapaxes(-1, -2), g)
            accumulate_grad(b, _unbroadcast(gb, b.shape))

    return _node("matmul", data, (a, b), _bw)


def reshape(a, shape):
    data = a.data.reshape(shape)
    old_shape = a.shape

    def _bw(g):
        accumulate_grad(a, g.reshape(old_shape))

    return _node("reshape", data, (a,), _bw)


def transpose(a, axes):
    axes = tuple(axes)
    data = a.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def _bw(g):
        accumulate_grad(a, g.transpose(inverse))

    return _node("transpose", data, (a,), _bw)


def concat(tensors, axis):
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of an empty tensor list")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def _bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            accumulate_grad(t, g[tuple(idx)])

    return _node("concat", data, tuple(tensors), _bw)


def relu(a):
    data = np.maximum(a.data, 0)

    def _bw(g):
        accumulate_grad(a, g * (data > 0))

    return _node("relu", data, (a,), _bw)


def sigmoid(a):
    x = a.data
    data = np.empty_like(x)
    pos = x >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    data[~pos] = ex / (1.0 + ex)

    def _bw(g):
        accumulate_grad(a, g * data * (1.0 - data))

    return _node("sigmoid", data, (a,), _bw)


def log(a):
    if np.any(a.data <= 0):
        raise NumericError("log of a non-positive value")
    data = np.log(a.data)

    def _bw(g):
        accumulate_grad(a, g / a.data)

    return _node("log", data, (a,), _bw)


def clip(a, lo, hi):
    data = np.clip(a.data, lo, hi)
    inside = (a.data > lo) & (a.data < hi)

    def _bw(g):
        accumulate_grad(a, g * inside)

    return _node("clip", data, (a,), _bw)


def softmax(a, axis=-1):
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    data = ex / ex.sum(axis=axis, keepdims=True)

    def _bw(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        accumulate_grad(a, data * (g - inner))

    return _node("softmax", data, (a,), _bw)


def tsum(a, axis=None, keepdims=False):
    data = a.data.sum(axis=axis, keepdims=keepdims)
    if np.ndim(data) == 0:
        data = np.asarray(data)

    def _bw(g):
        if axis is None:
            accumulate_grad(a, np.broadcast_to(g, a.shape))
            return
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        accumulate_grad(a, np.broadcast_to(g, a.shape))

    return _node("sum", data, (a,), _bw)


def mean(a, axis=None, keepdims=False):
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    out = tsum(a, axis=axis, keepdims=keepdims)
    return scale(out, 1.0 / count)
