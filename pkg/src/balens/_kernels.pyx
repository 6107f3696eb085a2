# cython: language_level=3
"""Compiled training-epoch kernels (Adam, cross-entropy, small batches).

Drop-in replacement for ``_kernels_py``; the inner loops run without the GIL
so independent ensemble units can train on separate threads.
"""
import numpy as np

from libc.math cimport exp, log1p, sqrt, pow, fabs


cdef inline double _softplus(double d) noexcept nogil:
    return (d if d > 0.0 else 0.0) + log1p(exp(-fabs(d)))


cdef inline double _sigmoid(double d) noexcept nogil:
    cdef double e = exp(-fabs(d))
    if d >= 0.0:
        return 1.0 / (1.0 + e)
    return e / (1.0 + e)


cdef inline void _adam(double[::1] theta, double[::1] m, double[::1] v, double[::1] grad,
                       long long t, double lr, double beta1, double beta2, double eps) noexcept nogil:
    cdef Py_ssize_t i
    cdef double bc1 = 1.0 - pow(beta1, <double>t)
    cdef double bc2 = 1.0 - pow(beta2, <double>t)
    cdef double g
    for i in range(theta.shape[0]):
        g = grad[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * g
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
        theta[i] = theta[i] - lr * (m[i] / bc1) / (sqrt(v[i] / bc2) + eps)


def adam_epoch_mlp(double[::1] theta, double[::1] m, double[::1] v, long long t,
                   const double[:, ::1] X, const double[::1] y, const long long[::1] order,
                   double lr, Py_ssize_t batch_size, Py_ssize_t hidden,
                   double beta1, double beta2, double eps):
    cdef Py_ssize_t D = X.shape[1]
    cdef Py_ssize_t H = hidden
    cdef Py_ssize_t o1 = H * D
    cdef Py_ssize_t o2 = o1 + H
    cdef Py_ssize_t o3 = o2 + 2 * H
    cdef Py_ssize_t n_order = order.shape[0]
    cdef double[::1] grad = np.empty(theta.shape[0])
    cdef double[::1] pre = np.empty(H)
    cdef Py_ssize_t start, stop, s, r, j, k
    cdef double acc, z0, z1, d, g, dh, inv_b, total = 0.0
    if theta.shape[0] != o3 + 2:
        raise ValueError("parameter vector does not match (hidden, D)")
    with nogil:
        start = 0
        while start < n_order:
            stop = start + batch_size
            if stop > n_order:
                stop = n_order
            inv_b = 1.0 / <double>(stop - start)
            for j in range(theta.shape[0]):
                grad[j] = 0.0
            for s in range(start, stop):
                r = order[s]
                z0 = theta[o3]
                z1 = theta[o3 + 1]
                for j in range(H):
                    acc = 0.0
                    for k in range(D):
                        acc = acc + theta[j * D + k] * X[r, k]
                    acc = acc + theta[o1 + j]
                    pre[j] = acc
                    if acc > 0.0:
                        z0 = z0 + theta[o2 + j] * acc
                        z1 = z1 + theta[o2 + H + j] * acc
                d = z1 - z0
                total = total + (_softplus(d) - y[r] * d)
                g = (_sigmoid(d) - y[r]) * inv_b
                grad[o3] = grad[o3] - g
                grad[o3 + 1] = grad[o3 + 1] + g
                for j in range(H):
                    if pre[j] > 0.0:
                        grad[o2 + j] = grad[o2 + j] - g * pre[j]
                        grad[o2 + H + j] = grad[o2 + H + j] + g * pre[j]
                        dh = g * (theta[o2 + H + j] - theta[o2 + j])
                        grad[o1 + j] = grad[o1 + j] + dh
                        for k in range(D):
                            grad[j * D + k] = grad[j * D + k] + dh * X[r, k]
            t += 1
            _adam(theta, m, v, grad, t, lr, beta1, beta2, eps)
            start = stop
    return t, total


def adam_epoch_logistic(double[::1] theta, double[::1] m, double[::1] v, long long t,
                        const double[:, ::1] X, const double[::1] y, const long long[::1] order,
                        double lr, Py_ssize_t batch_size,
                        double beta1, double beta2, double eps):
    cdef Py_ssize_t D = X.shape[1]
    cdef Py_ssize_t n_order = order.shape[0]
    cdef double[::1] grad = np.empty(theta.shape[0])
    cdef Py_ssize_t start, stop, s, r, k
    cdef double d, g, inv_b, total = 0.0
    if theta.shape[0] != D + 1:
        raise ValueError("parameter vector does not match D")
    with nogil:
        start = 0
        while start < n_order:
            stop = start + batch_size
            if stop > n_order:
                stop = n_order
            inv_b = 1.0 / <double>(stop - start)
            for k in range(D + 1):
                grad[k] = 0.0
            for s in range(start, stop):
                r = order[s]
                d = theta[D]
                for k in range(D):
                    d = d + theta[k] * X[r, k]
                total = total + (_softplus(d) - y[r] * d)
                g = (_sigmoid(d) - y[r]) * inv_b
                for k in range(D):
                    grad[k] = grad[k] + g * X[r, k]
                grad[D] = grad[D] + g
            t += 1
            _adam(theta, m, v, grad, t, lr, beta1, beta2, eps)
            start = stop
    return t, total
