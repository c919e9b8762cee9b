"""Pure-numpy reference implementations of the hot kernels.

Every function here has a signature-compatible twin in the compiled
backend (``_native``).  The training loop and the metrics stack call
through :mod:`dispgan.kernels`, which picks one backend at import time.
"""
from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"


def leaky_relu_fwd(x, slope):
    return np.where(x > 0.0, x, slope * x)


def leaky_relu_bwd(x, grad, slope):
    return np.where(x > 0.0, grad, slope * grad)


def softplus_fwd(x):
    # log(1 + exp(x)) without overflow for large |x|
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus_bwd(x, grad):
    return grad / (1.0 + np.exp(-x))


def hinge_fwd(x, sign):
    return np.maximum(0.0, 1.0 + sign * x)


def hinge_bwd(x, grad, sign):
    return np.where(1.0 + sign * x > 0.0, sign * grad, 0.0)


def scale_shift_fwd(h, gamma, beta):
    return h * (1.0 + gamma) + beta


def scale_shift_bwd(h, gamma, grad):
    return grad * (1.0 + gamma), grad * h, grad.copy()


def batchnorm_fwd(x, eps):
    """Standardize each column over the batch axis.

    Returns (y, mean, var, inv_std); variance is the biased batch variance.
    """
    mean = x.mean(axis=0)
    var = np.mean((x - mean) ** 2, axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    y = (x - mean) * inv_std
    return y, mean, var, inv_std


def batchnorm_bwd(y, inv_std, grad):
    # dx = inv_std * (g - mean(g) - y * mean(g*y)), means over the batch axis
    g_mean = grad.mean(axis=0)
    gy_mean = (grad * y).mean(axis=0)
    return inv_std * (grad - g_mean - y * gy_mean)


def adam_update(param, grad, m, v, t, lr, beta1, beta2, eps):
    """One bias-corrected Adam step, in place on param/m/v."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


def ema_update(shadow, live, decay):
    """shadow <- decay * shadow + (1 - decay) * live, in place."""
    shadow *= decay
    shadow += (1.0 - decay) * live


def pairwise_sqdist(a, b, block=128):
    """Squared euclidean distances between rows of a (n,d) and b (m,d).

    Computed by direct differencing in blocks so results match a naive
    per-pair loop (no gemm-style cancellation).
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    n = a.shape[0]
    out = np.empty((n, b.shape[0]), dtype=np.float64)
    for start in range(0, n, block):
        stop = min(start + block, n)
        diff = a[start:stop, None, :] - b[None, :, :]
        out[start:stop] = np.einsum("ijk,ijk->ij", diff, diff)
    return out
