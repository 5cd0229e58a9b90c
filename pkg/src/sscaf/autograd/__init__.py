"""Minimal reverse-mode autodiff engine used by every model in the package."""

from .gradcheck import GradCheckReport, grad_check
from .losses import bce_loss, joint_loss, mse_loss
from .nn import (
    BatchNorm,
    Conv2d,
    ConvBlock,
    LayerNorm,
    Linear,
    MultiHeadAttention,
    TransformerEncoderBlock,
    avg_pool2d,
    batch_norm,
    conv2d,
    global_avg_pool,
    layer_norm,
    linear,
)
from .optim import Adam
from .tensor import (
    Tensor,
    add,
    clip,
    concat,
    log,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    transpose,
    tsum,
)

__all__ = [
    "Adam",
    "BatchNorm",
    "Conv2d",
    "ConvBlock",
    "GradCheckReport",
    "LayerNorm",
    "Linear",
    "MultiHeadAttention",
    "Tensor",
    "TransformerEncoderBlock",
    "add",
    "avg_pool2d",
    "batch_norm",
    "bce_loss",
    "clip",
    "concat",
    "conv2d",
    "global_avg_pool",
    "grad_check",
    "joint_loss",
    "layer_norm",
    "linear",
    "log",
    "matmul",
    "mean",
    "mse_loss",
    "mul",
    "relu",
    "reshape",
    "scale",
    "sigmoid",
    "softmax",
    "transpose",
    "tsum",
]
