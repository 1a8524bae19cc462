"""Scalar losses and their gradients w.r.t. the prediction."""

import numpy as np

from .layers import ShapeError

BCE_CLAMP = 1e-7


def _check_shapes(pred, target, name):
    if pred.shape != target.shape:
        raise ShapeError(f"{name}: prediction shape {pred.shape} != target shape {target.shape}")


def loss_mse(pred, target):
    pred, target = np.asarray(pred), np.asarray(target)
    _check_shapes(pred, target, "mse")
    return float(np.mean((pred - target) ** 2))


def loss_mse_grad(pred, target):
    return 2.0 * (pred - target) / pred.size


def _check_bce(pred, target):
    _check_shapes(pred, target, "bce")
    if target.size and (target.min() < 0 or target.max() > 1):
        raise ValueError("bce: targets must lie in [0, 1]")


def loss_bce(pred, target):
    """Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7]."""
    pred, target = np.asarray(pred), np.asarray(target)
    _check_bce(pred, target)
    p = np.clip(pred, BCE_CLAMP, 1 - BCE_CLAMP)
    return float(-np.mean(target * np.log(p) + (1 - target) * np.log(1 - p)))


def loss_bce_grad(pred, target):
    p = np.clip(pred, BCE_CLAMP, 1 - BCE_CLAMP)
    g = (p - target) / (p * (1 - p)) / pred.size
    # clamped region has zero derivative
    return np.where((pred > BCE_CLAMP) & (pred < 1 - BCE_CLAMP), g, 0).astype(pred.dtype)


def bce_sigmoid_grad(prob, target, scale):
    """Gradient of ``scale * bce`` w.r.t. the logits of a sigmoid output.

    The sigmoid Jacobian cancels the BCE denominator, which keeps training
    stable when outputs saturate.
    """
    return (scale * (prob - target)).astype(prob.dtype)


def kl_diag_gaussian(mu, log_var):
    """KL(N(mu, exp(log_var)) || N(0, I)), summed over every element."""
    mu, log_var = np.asarray(mu), np.asarray(log_var)
    _check_shapes(mu, log_var, "kl")
    return float(-0.5 * np.sum(1 + log_var - mu ** 2 - np.exp(log_var)))


def kl_diag_gaussian_grad(mu, log_var):
    return mu.copy(), 0.5 * (np.exp(log_var) - 1)


def reparameterize(mu, log_var, eps):
    mu, log_var, eps = np.asarray(mu), np.asarray(log_var), np.asarray(eps)
    _check_shapes(mu, eps, "reparameterize")
    _check_shapes(mu, log_var, "reparameterize")
    return mu + np.exp(0.5 * log_var) * eps


def reparameterize_grad(dz, log_var, eps):
    """Backpropagate dL/dz to (dL/dmu, dL/dlog_var)."""
    return dz, dz * eps * 0.5 * np.exp(0.5 * log_var)
