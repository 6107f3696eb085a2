"""Numpy reference implementation of the training-epoch kernels.

Used when the compiled ``_kernels`` extension is unavailable or when
``BALENS_PURE_PYTHON`` is set. Signatures and in-place semantics match the
extension exactly; results agree up to floating-point summation order.

Parameter layout of the two-layer head (``hidden`` units, input dim ``D``)::

    W1 (hidden x D, row-major) | b1 (hidden) | W2 (2 x hidden) | b2 (2)

and of the logistic model: ``w (D) | b``.
"""
from __future__ import annotations

import numpy as np


def _softplus(d):
    return np.maximum(d, 0.0) + np.log1p(np.exp(-np.abs(d)))


def _sigmoid(d):
    e = np.exp(-np.abs(d))
    return np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _adam(theta, m, v, grad, t, lr, beta1, beta2, eps):
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    m[:] = beta1 * m + (1.0 - beta1) * grad
    v[:] = beta2 * v + (1.0 - beta2) * grad * grad
    theta[:] = theta - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def adam_epoch_mlp(theta, m, v, t, X, y, order, lr, batch_size, hidden, beta1, beta2, eps):
    """One pass over ``order`` with Adam updates; returns ``(t, summed loss)``.

    Loss terms are evaluated before the update of the batch they belong to.
    """
    n, D = X.shape
    H = hidden
    o1 = H * D
    o2 = o1 + H
    o3 = o2 + 2 * H
    W1 = theta[:o1].reshape(H, D)
    b1 = theta[o1:o2]
    W2 = theta[o2:o3].reshape(2, H)
    b2 = theta[o3:]
    grad = np.empty_like(theta)
    gW1 = grad[:o1].reshape(H, D)
    gW2 = grad[o2:o3].reshape(2, H)
    total = 0.0
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        Xb = X[idx]
        yb = y[idx]
        pre = Xb @ W1.T + b1
        h = np.maximum(pre, 0.0)
        z = h @ W2.T + b2
        d = z[:, 1] - z[:, 0]
        total += float(np.sum(_softplus(d) - yb * d))
        g = (_sigmoid(d) - yb) / len(idx)
        dz = np.stack([-g, g], axis=1)
        gW2[:] = dz.T @ h
        grad[o3:] = dz.sum(axis=0)
        dpre = g[:, None] * (W2[1] - W2[0])[None, :] * (pre > 0.0)
        gW1[:] = dpre.T @ Xb
        grad[o1:o2] = dpre.sum(axis=0)
        t += 1
        _adam(theta, m, v, grad, t, lr, beta1, beta2, eps)
    return t, total


def adam_epoch_logistic(theta, m, v, t, X, y, order, lr, batch_size, beta1, beta2, eps):
    n, D = X.shape
    grad = np.empty_like(theta)
    total = 0.0
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        Xb = X[idx]
        yb = y[idx]
        d = Xb @ theta[:D] + theta[D]
        total += float(np.sum(_softplus(d) - yb * d))
        g = (_sigmoid(d) - yb) / len(idx)
        grad[:D] = g @ Xb
        grad[D] = g.sum()
        t += 1
        _adam(theta, m, v, grad, t, lr, beta1, beta2, eps)
    return t, total
