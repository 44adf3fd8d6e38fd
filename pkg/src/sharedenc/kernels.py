"""Row-kernel dispatch: compiled float32 kernels when available, numpy otherwise.

The backend is chosen once at import. Set ``SHAREDENC_PURE_PYTHON=1`` to force
the numpy fallback. Non-float32 inputs (the float64 gradient-check shadow path)
always take the numpy route.
"""
from __future__ import annotations

import os

import numpy as np

from . import _pykernels

try:
    if os.environ.get("SHAREDENC_PURE_PYTHON"):
        raise ImportError("pure-python backend forced")
    from . import _ckernels
except ImportError:
    _ckernels = None

BACKEND = "cython" if _ckernels is not None else "numpy"


def _use_c(*arrays) -> bool:
    return _ckernels is not None and all(a.dtype == np.float32 for a in arrays)


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float32)


def layernorm_fwd(x, gain, bias, eps):
    if _use_c(x, gain, bias):
        return _ckernels.layernorm_fwd(_c(x), _c(gain), _c(bias), eps)
    return _pykernels.layernorm_fwd(x, gain, bias, eps)


def layernorm_bwd(dy, xhat, rstd, gain):
    if _use_c(dy, xhat, rstd, gain):
        return _ckernels.layernorm_bwd(_c(dy), _c(xhat), _c(rstd), _c(gain))
    return _pykernels.layernorm_bwd(dy, xhat, rstd, gain)


def softmax_fwd(x):
    if _use_c(x):
        return _ckernels.softmax_fwd(_c(x))
    return _pykernels.softmax_fwd(x)


def softmax_bwd(y, dy):
    if _use_c(y, dy):
        return _ckernels.softmax_bwd(_c(y), _c(dy))
    return _pykernels.softmax_bwd(y, dy)


def gelu_fwd(x):
    if _use_c(x):
        return _ckernels.gelu_fwd(_c(x))
    return _pykernels.gelu_fwd(x)


def gelu_bwd(x, dy):
    if _use_c(x, dy):
        return _ckernels.gelu_bwd(_c(x), _c(dy))
    return _pykernels.gelu_bwd(x, dy)
