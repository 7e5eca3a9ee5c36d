"""Reference implementations of the compiled kernels.

Used when the extension is not built, or when ``SHEPHERD_NO_EXT`` is set.
Signatures and return types match ``shepherd._kernels`` exactly.
"""

from __future__ import annotations

import math

import numpy as np


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    r = [float(x) for x in rewards]
    out = [0.0] * len(r)
    acc = 0.0
    for t in range(len(r) - 1, -1, -1):
        acc = r[t] + gamma * acc
        out[t] = acc
    return np.asarray(out, dtype=np.float64)


def discounted_returns_batch(rewards, offsets, gamma: float) -> np.ndarray:
    r = [float(x) for x in rewards]
    off = [int(o) for o in offsets]
    out = [0.0] * len(r)
    for lo, hi in zip(off[:-1], off[1:]):
        acc = 0.0
        for t in range(hi - 1, lo - 1, -1):
            acc = r[t] + gamma * acc
            out[t] = acc
    return np.asarray(out, dtype=np.float64)


def mse_loss_grad(X, y, w, l2: float = 0.0) -> tuple[float, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    resid = X @ w - y
    n = X.shape[0]
    loss = float(resid @ resid) / n + l2 * float(w @ w)
    grad = 2.0 * (X.T @ resid) / n + 2.0 * l2 * w
    return loss, grad


def gradient_descent(X, y, w0, lr: float, l2: float, epochs: int) -> tuple[np.ndarray, np.ndarray]:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    w = np.array(w0, dtype=np.float64, copy=True)
    losses = np.full(epochs + 1, np.nan)
    # divergence is reported through the loss history, not numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for e in range(epochs):
            loss, grad = mse_loss_grad(X, y, w, l2)
            losses[e] = loss
            if not math.isfinite(loss):
                return w, losses
            w -= lr * grad
        losses[epochs] = mse_loss_grad(X, y, w, l2)[0]
    return w, losses
