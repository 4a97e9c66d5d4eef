"""Prediction and combined training losses.

The prediction loss is a Huber loss on per-coordinate errors (quadratic
below the threshold, linear above, continuously differentiable at the
threshold) plus a soft unit-sphere penalty on each predicted joint:
weight * (x^2 + y^2 + z^2 - 1)^2.  Only the predicted coordinates enter the
penalty; the ground-truth term would be constant in the parameters.

The combined objective is the convex mixture
lambda * prediction + (1 - lambda) * recognition.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, add, as_tensor, custom_op, mul, reduce_mean, scale, sub


def huber(diff, beta=1.0):
    """Elementwise Huber transform of a difference tensor.

    0.5 d^2 / beta where |d| < beta, |d| - 0.5 beta otherwise; the two
    branches and their derivatives agree at |d| = beta.
    """
    if beta <= 0:
        raise ValueError(f"huber threshold must be positive, got {beta}")
    diff = as_tensor(diff)
    d = diff.data
    absd = np.abs(d)
    small = absd < beta
    data = np.where(small, 0.5 * d * d / beta, absd - 0.5 * beta)

    def vjp(g):
        if not diff.requires_grad:
            return (None,)
        return (g * np.clip(d / beta, -1.0, 1.0),)

    return custom_op("huber", (diff,), data, vjp)


def unit_sphere_penalty(pred):
    """Mean over joints of (||joint||^2 - 1)^2; pred: (..., N, 3)."""
    sq = mul(pred, pred)
    radial = sub(sq.sum(axis=-1), 1.0)
    return reduce_mean(mul(radial, radial))


def prediction_loss(x_fut, x_hat, huber_beta=1.0, penalty_weight=0.1):
    """Mean Huber error plus weighted unit-sphere penalty.

    ``x_fut`` (ground truth) and ``x_hat`` (prediction) must share a
    (..., N, 3) shape.
    """
    x_fut = as_tensor(x_fut)
    x_hat = as_tensor(x_hat)
    if x_fut.shape != x_hat.shape:
        raise ValueError(f"prediction_loss: shapes differ, {x_fut.shape} vs {x_hat.shape}")
    err = reduce_mean(huber(sub(x_hat, x_fut), huber_beta))
    if penalty_weight == 0.0:
        return err
    return add(err, scale(unit_sphere_penalty(x_hat), penalty_weight))


def combined_loss(loss_pred, loss_rec, lam):
    """lambda-weighted sum of the two task losses."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    return add(scale(loss_pred, lam), scale(loss_rec, 1.0 - lam))
