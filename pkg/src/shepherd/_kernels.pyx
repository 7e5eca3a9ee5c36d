# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled numeric kernels: discounted returns and least-squares descent."""

import numpy as np
cimport numpy as cnp
from libc.math cimport isfinite

cnp.import_array()


def discounted_returns(rewards, double gamma):
    cdef const double[:] r = np.ascontiguousarray(rewards, dtype=np.float64)
    cdef Py_ssize_t n = r.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[:] g = out
    cdef double acc = 0.0
    cdef Py_ssize_t t
    for t in range(n - 1, -1, -1):
        acc = r[t] + gamma * acc
        g[t] = acc
    return out


def discounted_returns_batch(rewards, offsets, double gamma):
    cdef const double[:] r = np.ascontiguousarray(rewards, dtype=np.float64)
    cdef const cnp.int64_t[:] off = np.ascontiguousarray(offsets, dtype=np.int64)
    out = np.empty(r.shape[0], dtype=np.float64)
    cdef double[:] g = out
    cdef Py_ssize_t s, t, lo, hi
    cdef double acc
    for s in range(off.shape[0] - 1):
        lo = off[s]
        hi = off[s + 1]
        acc = 0.0
        for t in range(hi - 1, lo - 1, -1):
            acc = r[t] + gamma * acc
            g[t] = acc
    return out


cdef double _loss_grad(const double[:, :] X, const double[:] y, const double[:] w,
                       double l2, double[:] grad, double[:] resid) noexcept nogil:
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t d = X.shape[1]
    cdef Py_ssize_t i, j
    cdef double pred, sse = 0.0, pen = 0.0
    for j in range(d):
        grad[j] = 0.0
    for i in range(n):
        pred = 0.0
        for j in range(d):
            pred += X[i, j] * w[j]
        resid[i] = pred - y[i]
        sse += resid[i] * resid[i]
        for j in range(d):
            grad[j] += X[i, j] * resid[i]
    for j in range(d):
        grad[j] = 2.0 * grad[j] / n + 2.0 * l2 * w[j]
        pen += w[j] * w[j]
    return sse / n + l2 * pen


def mse_loss_grad(X, y, w, double l2=0.0):
    cdef const double[:, :] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[:] wv = np.ascontiguousarray(w, dtype=np.float64)
    grad = np.empty(Xv.shape[1], dtype=np.float64)
    resid = np.empty(Xv.shape[0], dtype=np.float64)
    cdef double loss = _loss_grad(Xv, yv, wv, l2, grad, resid)
    return loss, grad


def gradient_descent(X, y, w0, double lr, double l2, int epochs):
    cdef const double[:, :] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:] yv = np.ascontiguousarray(y, dtype=np.float64)
    w_arr = np.array(w0, dtype=np.float64, copy=True)
    cdef double[:] w = w_arr
    cdef Py_ssize_t d = Xv.shape[1]
    grad_arr = np.empty(d, dtype=np.float64)
    cdef double[:] grad = grad_arr
    resid_arr = np.empty(Xv.shape[0], dtype=np.float64)
    cdef double[:] resid = resid_arr
    losses_arr = np.full(epochs + 1, np.nan, dtype=np.float64)
    cdef double[:] losses = losses_arr
    cdef Py_ssize_t e, j
    cdef double loss
    with nogil:
        for e in range(epochs):
            loss = _loss_grad(Xv, yv, w, l2, grad, resid)
            losses[e] = loss
            if not isfinite(loss):
                break
            for j in range(d):
                w[j] -= lr * grad[j]
        else:
            losses[epochs] = _loss_grad(Xv, yv, w, l2, grad, resid)
    return w_arr, losses_arr
