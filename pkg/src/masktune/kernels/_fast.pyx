# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel core. Same signatures and math as kernels.reference."""

from libc.math cimport exp, log, sqrt, tanh, INFINITY

import numpy as np


cdef double GELU_C = 0.7978845608028654  # sqrt(2/pi)
cdef double GELU_A = 0.044715


def softmax_fwd(double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    out = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef double m, s
    for i in range(n):
        m = -INFINITY
        for j in range(d):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(d):
            y[i, j] = exp(x[i, j] - m)
            s += y[i, j]
        for j in range(d):
            y[i, j] /= s
    return out


def softmax_bwd(double[:, ::1] y, double[:, ::1] dy):
    cdef Py_ssize_t n = y.shape[0], d = y.shape[1], i, j
    out = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] dx = out
    cdef double dot
    for i in range(n):
        dot = 0.0
        for j in range(d):
            dot += y[i, j] * dy[i, j]
        for j in range(d):
            dx[i, j] = (dy[i, j] - dot) * y[i, j]
    return out


def layer_norm_fwd(double[:, ::1] x, double[::1] gain, double[::1] bias,
                   double eps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    out = np.empty((n, d), dtype=np.float64)
    xhat_arr = np.empty((n, d), dtype=np.float64)
    inv_arr = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[::1] inv_std = inv_arr
    cdef double mean, var, c, istd
    for i in range(n):
        mean = 0.0
        for j in range(d):
            mean += x[i, j]
        mean /= d
        var = 0.0
        for j in range(d):
            c = x[i, j] - mean
            var += c * c
        var /= d
        istd = 1.0 / sqrt(var + eps)
        inv_std[i] = istd
        for j in range(d):
            xhat[i, j] = (x[i, j] - mean) * istd
            y[i, j] = xhat[i, j] * gain[j] + bias[j]
    return out, xhat_arr, inv_arr


def layer_norm_bwd(double[:, ::1] dy, double[:, ::1] xhat,
                   double[::1] inv_std, double[::1] gain):
    cdef Py_ssize_t n = dy.shape[0], d = dy.shape[1], i, j
    dx_arr = np.empty((n, d), dtype=np.float64)
    dgain_arr = np.zeros(d, dtype=np.float64)
    dbias_arr = np.zeros(d, dtype=np.float64)
    cdef double[:, ::1] dx = dx_arr
    cdef double[::1] dgain = dgain_arr
    cdef double[::1] dbias = dbias_arr
    cdef double c1, c2, dxh
    for i in range(n):
        c1 = 0.0
        c2 = 0.0
        for j in range(d):
            dxh = dy[i, j] * gain[j]
            c1 += dxh
            c2 += dxh * xhat[i, j]
        c1 /= d
        c2 /= d
        for j in range(d):
            dx[i, j] = (dy[i, j] * gain[j] - c1 - xhat[i, j] * c2) * inv_std[i]
            dgain[j] += dy[i, j] * xhat[i, j]
            dbias[j] += dy[i, j]
    return dx_arr, dgain_arr, dbias_arr


def gelu_fwd(double[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] y = out
    cdef double u
    for i in range(n):
        u = GELU_C * (x[i] + GELU_A * x[i] * x[i] * x[i])
        y[i] = 0.5 * x[i] * (1.0 + tanh(u))
    return out


def gelu_bwd(double[::1] x, double[::1] dy):
    cdef Py_ssize_t n = x.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] dx = out
    cdef double u, t, du
    for i in range(n):
        u = GELU_C * (x[i] + GELU_A * x[i] * x[i] * x[i])
        t = tanh(u)
        du = GELU_C * (1.0 + 3.0 * GELU_A * x[i] * x[i])
        dx[i] = dy[i] * (0.5 * (1.0 + t) + 0.5 * x[i] * (1.0 - t * t) * du)
    return out


def cross_entropy_fwd(double[:, ::1] logits, long[::1] targets,
                      unsigned char[::1] sel):
    cdef Py_ssize_t n = logits.shape[0], c = logits.shape[1], i, j
    probs_arr = np.zeros((n, c), dtype=np.float64)
    cdef double[:, ::1] probs = probs_arr
    if n == 0:
        return 0.0, probs_arr
    cdef double m, s, loss = 0.0
    cdef Py_ssize_t n_sel = 0
    for i in range(n):
        m = -INFINITY
        for j in range(c):
            if logits[i, j] > m:
                m = logits[i, j]
        s = 0.0
        for j in range(c):
            probs[i, j] = exp(logits[i, j] - m)
            s += probs[i, j]
        for j in range(c):
            probs[i, j] /= s
        if sel[i]:
            n_sel += 1
            loss += (m + log(s)) - logits[i, targets[i]]
    if n_sel == 0:
        return 0.0, probs_arr
    return loss / n_sel, probs_arr


def cross_entropy_bwd(double[:, ::1] probs, long[::1] targets,
                      unsigned char[::1] sel, double dloss):
    cdef Py_ssize_t n = probs.shape[0], c = probs.shape[1], i, j
    out = np.zeros((n, c), dtype=np.float64)
    cdef double[:, ::1] dlogits = out
    cdef Py_ssize_t n_sel = 0
    for i in range(n):
        if sel[i]:
            n_sel += 1
    if n_sel == 0:
        return out
    cdef double scale = dloss / n_sel
    for i in range(n):
        if sel[i]:
            for j in range(c):
                dlogits[i, j] = probs[i, j] * scale
            dlogits[i, targets[i]] -= scale
    return out


def adam_step(double[::1] p, double[::1] g, double[::1] m, double[::1] v,
              long t, double lr, double beta1, double beta2, double eps,
              double weight_decay):
    cdef Py_ssize_t n = p.shape[0], i
    cdef double bc1 = 1.0 - beta1 ** t
    cdef double bc2 = 1.0 - beta2 ** t
    cdef double mhat, vhat
    for i in range(n):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        mhat = m[i] / bc1
        vhat = v[i] / bc2
        p[i] -= lr * (mhat / (sqrt(vhat) + eps) + weight_decay * p[i])
