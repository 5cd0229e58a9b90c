"""Neural-network operations and parameterized layers.

Convolutions are fixed at 3x3, stride 1, zero padding 1; images are
channels-last ``(batch, height, width, channels)``.  The forward path of
``conv2d`` lowers to a single BLAS matmul via im2col; the patch matrix is
kept for the backward pass, trading memory for speed.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError
from .tensor import (
    Tensor,
    _node,
    accumulate_grad,
    concat,
    matmul,
    relu,
    reshape,
    softmax,
    transpose,
)


def kaiming_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


# ----------------------------------------------------------------------
# functional ops
# ----------------------------------------------------------------------

def _im2col3x3(x):
    """(B,H,W,C) -> (B*H*W, 9*C) patch matrix with zero padding 1."""
    b, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    view = sliding_window_view(xp, (3, 3), axis=(1, 2))  # (B,H,W,C,3,3)
    return np.ascontiguousarray(view.transpose(0, 1, 2, 4, 5, 3)).reshape(b * h * w, 9 * c)


def _col2im3x3(dcols, b, h, w, c, dtype):
    dxp = np.zeros((b, h + 2, w + 2, c), dtype=dtype)
    d = dcols.reshape(b, h, w, 3, 3, c)
    for ky in range(3):
        for kx in range(3):
            dxp[:, ky:ky + h, kx:kx + w, :] += d[:, :, :, ky, kx, :]
    return dxp[:, 1:h + 1, 1:w + 1, :]


def conv2d(x, weight, bias=None):
    """3x3 same-size convolution on (B,H,W,C) with weight (3,3,C,F)."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects (B,H,W,C) input, got {x.shape}")
    if weight.shape[:2] != (3, 3) or weight.shape[2] != x.shape[3]:
        raise ShapeError(f"conv2d weight {weight.shape} incompatible with input {x.shape}")
    b, h, w, c = x.shape
    f = weight.shape[3]
    cols = _im2col3x3(x.data)
    wmat = weight.data.reshape(9 * c, f)
    out = cols @ wmat
    if bias is not None:
        out += bias.data
    out = out.reshape(b, h, w, f)

    def _bw(g):
        g2 = g.reshape(-1, f)
        if bias is not None:
            accumulate_grad(bias, g2.sum(axis=0))
        if weight.requires_grad:
            accumulate_grad(weight, (cols.T @ g2).reshape(3, 3, c, f))
        if x.requires_grad:
            dcols = g2 @ weight.data.reshape(9 * c, f).T
            accumulate_grad(x, _col2im3x3(dcols, b, h, w, c, g.dtype))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node("conv2d", out, parents, _bw)


def avg_pool2d(x, kh=2, kw=2):
    """Non-overlapping average pooling; dims must divide exactly."""
    if x.ndim != 4:
        raise ShapeError(f"avg_pool2d expects (B,H,W,C) input, got {x.shape}")
    b, h, w, c = x.shape
    if h % kh or w % kw:
        raise ShapeError(f"avg_pool2d kernel ({kh},{kw}) does not divide ({h},{w})")
    ho, wo = h // kh, w // kw
    data = x.data.reshape(b, ho, kh, wo, kw, c).mean(axis=(2, 4))

    def _bw(g):
        tile = np.broadcast_to(
            (g / (kh * kw))[:, :, None, :, None, :], (b, ho, kh, wo, kw, c)
        )
        accumulate_grad(x, tile.reshape(b, h, w, c))

    return _node("avg_pool2d", data, (x,), _bw)


def global_avg_pool(x):
    """Mean over the spatial axes of (B,H,W,C) -> (B,C)."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects (B,H,W,C), got {x.shape}")
    return x.mean(axis=(1, 2))


def batch_norm(x, gamma, beta, running_mean, running_var, train,
               momentum=0.9, eps=1e-5):
    """Normalize over all leading axes per trailing channel.

    ``running_mean``/``running_var`` are plain arrays mutated in place when
    ``train`` is true (population statistics, momentum 0.9).
    """
    c = x.shape[-1]
    axes = tuple(range(x.ndim - 1))
    if train:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mu = running_mean.astype(x.dtype, copy=False)
        var = running_var.astype(x.dtype, copy=False)
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * invstd
    out = xhat * gamma.data + beta.data
    n = x.data.size // c

    def _bw(g):
        accumulate_grad(beta, g.sum(axis=axes))
        accumulate_grad(gamma, (g * xhat).sum(axis=axes))
        if not x.requires_grad:
            return
        gg = g * gamma.data
        if train:
            dx = (invstd / n) * (
                n * gg - gg.sum(axis=axes) - xhat * (gg * xhat).sum(axis=axes)
            )
        else:
            dx = gg * invstd
        accumulate_grad(x, dx)

    return _node("batch_norm", out, (x, gamma, beta), _bw)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis per row."""
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * invstd
    out = xhat * gamma.data + beta.data
    reduce_axes = tuple(range(x.ndim - 1))

    def _bw(g):
        accumulate_grad(beta, g.sum(axis=reduce_axes))
        accumulate_grad(gamma, (g * xhat).sum(axis=reduce_axes))
        if not x.requires_grad:
            return
        gg = g * gamma.data
        dx = (invstd / d) * (
            d * gg
            - gg.sum(axis=-1, keepdims=True)
            - xhat * (gg * xhat).sum(axis=-1, keepdims=True)
        )
        accumulate_grad(x, dx)

    return _node("layer_norm", out, (x, gamma, beta), _bw)


def linear(x, weight, bias=None):
    out = matmul(x, weight)
    if bias is not None:
        out = out + bias
    return out


# ----------------------------------------------------------------------
# layers
# ----------------------------------------------------------------------

class Linear:
    def __init__(self, d_in, d_out, rng, dtype=np.float32, bias=True):
        self.weight = Tensor(
            kaiming_uniform(rng, (d_in, d_out), d_in, dtype), requires_grad=True
        )
        self.bias = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x):
        return linear(x, self.weight, self.bias)

    def parameters(self):
        out = [("weight", self.weight)]
        if self.bias is not None:
            out.append(("bias", self.bias))
        return out

    def buffers(self):
        return []


class Conv2d:
    def __init__(self, c_in, c_out, rng, dtype=np.float32):
        self.weight = Tensor(
            kaiming_uniform(rng, (3, 3, c_in, c_out), 9 * c_in, dtype),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return conv2d(x, self.weight, self.bias)

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def buffers(self):
        return []


class BatchNorm:
    def __init__(self, num_features, dtype=np.float32, momentum=0.9, eps=1e-5):
        self.gamma = Tensor(np.ones(num_features, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(num_features, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(num_features, dtype=dtype)
        self.running_var = np.ones(num_features, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x, train):
        return batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            train, momentum=self.momentum, eps=self.eps,
        )

    def parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]


class LayerNorm:
    def __init__(self, num_features, dtype=np.float32, eps=1e-5):
        self.gamma = Tensor(np.ones(num_features, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(num_features, dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x):
        return layer_norm(x, self.gamma, self.beta, eps=self.eps)

    def parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def buffers(self):
        return []


class MultiHeadAttention:
    """Multi-head scaled dot-product attention with bias-free projections.

    Per head: softmax(Q Wq (K Wk)^T / sqrt(d_k)) V Wv; head outputs are
    concatenated and projected by Wo.  The most recent attention weights
    are kept on ``last_attention`` as an (batch, heads, T_q, T_k) array
    for visualization.
    """

    def __init__(self, d_model, heads, rng, dtype=np.float32):
        if d_model % heads:
            raise ShapeError(f"d_model {d_model} not divisible by heads {heads}")
        self.d_model = d_model
        self.heads = heads
        self.d_k = d_model // heads
        self.w_q = Tensor(kaiming_uniform(rng, (d_model, d_model), d_model, dtype), requires_grad=True)
        self.w_k = Tensor(kaiming_uniform(rng, (d_model, d_model), d_model, dtype), requires_grad=True)
        self.w_v = Tensor(kaiming_uniform(rng, (d_model, d_model), d_model, dtype), requires_grad=True)
        self.w_o = Tensor(kaiming_uniform(rng, (d_model, d_model), d_model, dtype), requires_grad=True)
        self.last_attention = None

    def _split_heads(self, x, b, t):
        return transpose(reshape(x, (b, t, self.heads, self.d_k)), (0, 2, 1, 3))

    def __call__(self, q, k, v):
        if q.shape[-1] != self.d_model or k.shape[-1] != self.d_model or v.shape[-1] != self.d_model:
            raise ShapeError(
                f"mha expects d_model={self.d_model}, got {q.shape}/{k.shape}/{v.shape}"
            )
        if k.shape[:-1] != v.shape[:-1]:
            raise ShapeError(f"key/value sequence shapes differ: {k.shape} vs {v.shape}")
        squeeze = q.ndim == 2
        if squeeze:
            q = reshape(q, (1,) + q.shape)
            k = reshape(k, (1,) + k.shape)
            v = reshape(v, (1,) + v.shape)
        b, tq = q.shape[0], q.shape[1]
        tk = k.shape[1]

        qh = self._split_heads(matmul(q, self.w_q), b, tq)   # (B,h,Tq,dk)
        kh = self._split_heads(matmul(k, self.w_k), b, tk)
        vh = self._split_heads(matmul(v, self.w_v), b, tk)

        scores = matmul(qh, transpose(kh, (0, 1, 3, 2))) * (1.0 / np.sqrt(self.d_k))
        attn = softmax(scores, axis=-1)                       # (B,h,Tq,Tk)
        self.last_attention = attn.data.copy()

        mixed = matmul(attn, vh)                              # (B,h,Tq,dk)
        merged = reshape(transpose(mixed, (0, 2, 1, 3)), (b, tq, self.d_model))
        out = matmul(merged, self.w_o)
        if squeeze:
            out = reshape(out, out.shape[1:])
        return out

    def parameters(self):
        return [("w_q", self.w_q), ("w_k", self.w_k), ("w_v", self.w_v), ("w_o", self.w_o)]

    def buffers(self):
        return []


class TransformerEncoderBlock:
    """Self-attention + two-layer feedforward, residuals, post layer norm."""

    def __init__(self, d_model, heads, rng, dtype=np.float32, ff_factor=4):
        self.mha = MultiHeadAttention(d_model, heads, rng, dtype)
        self.ln1 = LayerNorm(d_model, dtype)
        self.ff1 = Linear(d_model, ff_factor * d_model, rng, dtype)
        self.ff2 = Linear(ff_factor * d_model, d_model, rng, dtype)
        self.ln2 = LayerNorm(d_model, dtype)

    def __call__(self, x):
        x = self.ln1(x + self.mha(x, x, x))
        x = self.ln2(x + self.ff2(relu(self.ff1(x))))
        return x

    def parameters(self):
        out = []
        for prefix, layer in [("mha", self.mha), ("ln1", self.ln1),
                              ("ff1", self.ff1), ("ff2", self.ff2), ("ln2", self.ln2)]:
            out.extend((f"{prefix}.{n}", p) for n, p in layer.parameters())
        return out

    def buffers(self):
        return []


class ConvBlock:
    """Two 3x3 conv + batch-norm + relu units followed by average pooling.

    Pooling is over the time (height) axis only, halving it; the width
    axis is preserved so narrow inputs (width 1) pass through unchanged.
    """

    def __init__(self, c_in, c_out, rng, dtype=np.float32):
        self.conv1 = Conv2d(c_in, c_out, rng, dtype)
        self.bn1 = BatchNorm(c_out, dtype)
        self.conv2 = Conv2d(c_out, c_out, rng, dtype)
        self.bn2 = BatchNorm(c_out, dtype)

    def __call__(self, x, train):
        x = relu(self.bn1(self.conv1(x), train))
        x = relu(self.bn2(self.conv2(x), train))
        return avg_pool2d(x, kh=2, kw=1)

    def parameters(self):
        out = []
        for prefix, layer in [("conv1", self.conv1), ("bn1", self.bn1),
                              ("conv2", self.conv2), ("bn2", self.bn2)]:
            out.extend((f"{prefix}.{n}", p) for n, p in layer.parameters())
        return out

    def buffers(self):
        out = []
        for prefix, layer in [("bn1", self.bn1), ("bn2", self.bn2)]:
            out.extend((f"{prefix}.{n}", b) for n, b in layer.buffers())
        return out
