"""Pure-numpy reference kernels.

Every function takes 2-D row-major arrays (rows, cols) and works row-wise on
the last axis. Any float dtype is accepted, which is what the float64 shadow
path used by gradient checks relies on.
"""
from __future__ import annotations

import numpy as np

GELU_C = 0.7978845608028654  # sqrt(2 / pi)
GELU_A = 0.044715


def layernorm_fwd(x, gain, bias, eps):
    mean = x.mean(axis=1, keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * rstd
    return xhat * gain + bias, xhat, rstd[:, 0]


def layernorm_bwd(dy, xhat, rstd, gain):
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    g = dy * gain
    mean_g = g.mean(axis=1, keepdims=True)
    mean_gx = (g * xhat).mean(axis=1, keepdims=True)
    dx = (g - mean_g - xhat * mean_gx) * rstd[:, None]
    return dx, dgain, dbias


def softmax_fwd(x):
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd(y, dy):
    return y * (dy - (dy * y).sum(axis=1, keepdims=True))


def gelu_fwd(x):
    t = np.tanh(GELU_C * (x + GELU_A * x * x * x))
    return 0.5 * x * (1.0 + t)


def gelu_bwd(x, dy):
    x2 = x * x
    t = np.tanh(GELU_C * (x + GELU_A * x2 * x))
    dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x2)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * dt)
