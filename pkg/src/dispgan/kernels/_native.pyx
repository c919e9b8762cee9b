# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_numpy``.

Fused single-pass loops over contiguous float32/float64 buffers; the
formulas match the numpy backend exactly (same operation order), so the
two backends agree to the last few ulps.
"""
import numpy as np

cimport cython
from libc.math cimport exp, fabs, log1p, sqrt

BACKEND_NAME = "native"

ctypedef fused real:
    float
    double


def _flat(arr):
    return np.ascontiguousarray(arr).reshape(-1)


def leaky_relu_fwd(x, double slope):
    out = np.empty_like(x, order="C")
    _leaky_fwd(_flat(x), _flat(out), slope)
    return out


def _leaky_fwd(real[::1] x, real[::1] out, double slope):
    cdef Py_ssize_t i
    for i in range(x.shape[0]):
        out[i] = x[i] if x[i] > 0.0 else <real>(slope * x[i])


def leaky_relu_bwd(x, grad, double slope):
    out = np.empty_like(grad, order="C")
    _leaky_bwd(_flat(x), _flat(grad), _flat(out), slope)
    return out


def _leaky_bwd(real[::1] x, real[::1] grad, real[::1] out, double slope):
    cdef Py_ssize_t i
    for i in range(x.shape[0]):
        out[i] = grad[i] if x[i] > 0.0 else <real>(slope * grad[i])


def softplus_fwd(x):
    out = np.empty_like(x, order="C")
    _softplus_fwd(_flat(x), _flat(out))
    return out


def _softplus_fwd(real[::1] x, real[::1] out):
    cdef Py_ssize_t i
    cdef double v
    for i in range(x.shape[0]):
        v = x[i]
        out[i] = <real>((v if v > 0.0 else 0.0) + log1p(exp(-fabs(v))))


def softplus_bwd(x, grad):
    out = np.empty_like(grad, order="C")
    _softplus_bwd(_flat(x), _flat(grad), _flat(out))
    return out


def _softplus_bwd(real[::1] x, real[::1] grad, real[::1] out):
    cdef Py_ssize_t i
    for i in range(x.shape[0]):
        out[i] = <real>(grad[i] / (1.0 + exp(-x[i])))


def hinge_fwd(x, double sign):
    out = np.empty_like(x, order="C")
    _hinge_fwd(_flat(x), _flat(out), sign)
    return out


def _hinge_fwd(real[::1] x, real[::1] out, double sign):
    cdef Py_ssize_t i
    cdef double v
    for i in range(x.shape[0]):
        v = 1.0 + sign * x[i]
        out[i] = <real>(v if v > 0.0 else 0.0)


def hinge_bwd(x, grad, double sign):
    out = np.empty_like(grad, order="C")
    _hinge_bwd(_flat(x), _flat(grad), _flat(out), sign)
    return out


def _hinge_bwd(real[::1] x, real[::1] grad, real[::1] out, double sign):
    cdef Py_ssize_t i
    for i in range(x.shape[0]):
        out[i] = <real>(sign * grad[i]) if 1.0 + sign * x[i] > 0.0 else <real>0.0


def scale_shift_fwd(h, gamma, beta):
    out = np.empty_like(h)
    _scale_shift_fwd(_flat(h), _flat(gamma), _flat(beta), _flat(out))
    return out


def _scale_shift_fwd(real[::1] h, real[::1] g, real[::1] b, real[::1] out):
    cdef Py_ssize_t i
    for i in range(h.shape[0]):
        out[i] = <real>(h[i] * (1.0 + g[i]) + b[i])


def scale_shift_bwd(h, gamma, grad):
    dh = np.empty_like(h, order="C")
    dg = np.empty_like(h, order="C")
    db = np.empty_like(h, order="C")
    _scale_shift_bwd(_flat(h), _flat(gamma), _flat(grad),
                     _flat(dh), _flat(dg), _flat(db))
    return dh, dg, db


def _scale_shift_bwd(real[::1] h, real[::1] g, real[::1] grad,
                     real[::1] dh, real[::1] dg, real[::1] db):
    cdef Py_ssize_t i
    for i in range(h.shape[0]):
        dh[i] = <real>(grad[i] * (1.0 + g[i]))
        dg[i] = <real>(grad[i] * h[i])
        db[i] = grad[i]


def batchnorm_fwd(x, double eps):
    x = np.ascontiguousarray(x)
    y = np.empty_like(x, order="C")
    mean = np.empty(x.shape[1], dtype=x.dtype)
    var = np.empty(x.shape[1], dtype=x.dtype)
    inv_std = np.empty(x.shape[1], dtype=x.dtype)
    _bn_fwd(x, y, mean, var, inv_std, eps)
    return y, mean, var, inv_std


def _bn_fwd(real[:, ::1] x, real[:, ::1] y, real[::1] mean, real[::1] var,
            real[::1] inv_std, double eps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef double acc, dv
    for j in range(d):
        acc = 0.0
        for i in range(n):
            acc += x[i, j]
        mean[j] = <real>(acc / n)
        acc = 0.0
        for i in range(n):
            dv = x[i, j] - mean[j]
            acc += dv * dv
        var[j] = <real>(acc / n)
        inv_std[j] = <real>(1.0 / sqrt(var[j] + eps))
        for i in range(n):
            y[i, j] = <real>((x[i, j] - mean[j]) * inv_std[j])


def batchnorm_bwd(y, inv_std, grad):
    y = np.ascontiguousarray(y)
    grad = np.ascontiguousarray(grad)
    out = np.empty_like(grad, order="C")
    _bn_bwd(y, np.ascontiguousarray(inv_std), grad, out)
    return out


def _bn_bwd(real[:, ::1] y, real[::1] inv_std, real[:, ::1] grad,
            real[:, ::1] out):
    cdef Py_ssize_t n = y.shape[0], d = y.shape[1], i, j
    cdef double g_mean, gy_mean
    for j in range(d):
        g_mean = 0.0
        gy_mean = 0.0
        for i in range(n):
            g_mean += grad[i, j]
            gy_mean += grad[i, j] * y[i, j]
        g_mean /= n
        gy_mean /= n
        for i in range(n):
            out[i, j] = <real>(inv_std[j] * (grad[i, j] - g_mean - y[i, j] * gy_mean))


def adam_update(param, grad, m, v, long t, double lr, double beta1,
                double beta2, double eps):
    _adam(_flat(param), _flat(grad), _flat(m), _flat(v), t, lr, beta1, beta2, eps)


def _adam(real[::1] p, real[::1] g, real[::1] m, real[::1] v, long t,
          double lr, double beta1, double beta2, double eps):
    cdef Py_ssize_t i
    cdef double c1 = 1.0 - beta1 ** t
    cdef double c2 = 1.0 - beta2 ** t
    for i in range(p.shape[0]):
        m[i] = <real>(beta1 * m[i] + (1.0 - beta1) * g[i])
        v[i] = <real>(beta2 * v[i] + (1.0 - beta2) * g[i] * g[i])
        p[i] -= <real>(lr * (m[i] / c1) / (sqrt(v[i] / c2) + eps))


def ema_update(shadow, live, double decay):
    _ema(_flat(shadow), _flat(live), decay)


def _ema(real[::1] s, real[::1] l, double decay):
    cdef Py_ssize_t i
    for i in range(s.shape[0]):
        s[i] = <real>(decay * s[i] + (1.0 - decay) * l[i])


def pairwise_sqdist(a, b, block=0):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    out = np.empty((a.shape[0], b.shape[0]), dtype=np.float64)
    _pdist(a, b, out)
    return out


def _pdist(double[:, ::1] a, double[:, ::1] b, double[:, ::1] out):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], d = a.shape[1], i, j, k
    cdef double acc, dv
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(d):
                dv = a[i, k] - b[j, k]
                acc += dv * dv
            out[i, j] = acc
