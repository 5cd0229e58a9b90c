"""Training objectives: per-label binary cross-entropy, mean squared error,
and their unweighted joint sum.

All three are composed from primitive ops, so gradients come from the tape.
"""

from __future__ import annotations

import numpy as np

from ..errors import InputError
from .tensor import Tensor, add, clip, log, mean, mul, scale

BCE_CLAMP = 1e-7


def bce_loss(pred, target):
    """Mean binary cross-entropy over every prediction element.

    ``pred`` holds probabilities (sigmoid outputs); they are clamped to
    [1e-7, 1 - 1e-7] before the logs.  ``target`` must be 0/1 valued.
    """
    target = np.asarray(target, dtype=pred.dtype)
    if target.shape != pred.shape:
        raise InputError(f"bce target shape {target.shape} != pred {pred.shape}")
    if not np.all((target == 0) | (target == 1)):
        raise InputError("bce labels must be exactly 0 or 1")
    p = clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    one_minus_p = add(scale(p, -1.0), Tensor(np.ones((), dtype=pred.dtype)))
    ll = add(
        mul(Tensor(target), log(p)),
        mul(Tensor(1.0 - target), log(one_minus_p)),
    )
    return scale(mean(ll), -1.0)


def mse_loss(pred, target):
    """Mean squared error between predictions and targets."""
    target = np.asarray(target, dtype=pred.dtype)
    if target.size == 0:
        raise InputError("mse of empty input")
    if target.shape != pred.shape:
        raise InputError(f"mse target shape {target.shape} != pred {pred.shape}")
    diff = pred - Tensor(target)
    return mean(mul(diff, diff))


def joint_loss(l_ssc, l_arp, w_ssc=1.0, w_arp=1.0):
    """Sum of the two task losses; both default weights are 1."""
    return add(scale(l_ssc, w_ssc), scale(l_arp, w_arp))
