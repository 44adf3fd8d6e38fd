# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled float32 row kernels; same contracts as ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

cdef extern from *:
    """
    #include <stdint.h>
    #include <string.h>
    /* Cephes-style expf: range reduction by ln2, degree-6 polynomial, exponent
       rebuilt from integer bits. Branch-free so loops calling it vectorise. */
    static inline float sharedenc_expf(float x) {
        x = x < 88.3762626647949f ? x : 88.3762626647949f;
        x = x > -87.3365447504f ? x : -87.3365447504f;
        float fx = x * 1.44269504088896341f + 0.5f;
        int32_t n = (int32_t)fx;
        n -= (float)n > fx;
        float fn = (float)n;
        float r = x - fn * 0.693359375f + fn * 2.12194440e-4f;
        float r2 = r * r;
        float y = 1.9875691500e-4f;
        y = y * r + 1.3981999507e-3f;
        y = y * r + 8.3334519073e-3f;
        y = y * r + 4.1665795894e-2f;
        y = y * r + 1.6666665459e-1f;
        y = y * r + 5.0000001201e-1f;
        y = y * r2 + r + 1.0f;
        int32_t bits = (n + 127) << 23;
        float scale;
        memcpy(&scale, &bits, sizeof scale);
        return y * scale;
    }
    """
    float sharedenc_expf(float x) nogil

cdef float GELU_C = 0.7978845608028654
cdef float GELU_A = 0.044715


cdef float TANH_CLAMP = 7.90531110763549805


cdef inline float _tanhf(float u) noexcept nogil:
    # clamped odd rational approximation (max abs error ~1e-7 in float32);
    # branch-free so gcc vectorises the calling loops
    cdef float x = u if u < TANH_CLAMP else TANH_CLAMP
    x = x if x > -TANH_CLAMP else -TANH_CLAMP
    cdef float x2 = x * x
    cdef float p = x2 * <float>-2.76076847742355e-16 + <float>2.00018790482477e-13
    p = x2 * p + <float>-8.60467152213735e-11
    p = x2 * p + <float>5.12229709037114e-08
    p = x2 * p + <float>1.48572235717979e-05
    p = x2 * p + <float>6.37261928875436e-04
    p = x2 * p + <float>4.89352455891786e-03
    p = x * p
    cdef float q = x2 * <float>1.19825839466702e-06 + <float>1.18534705686654e-04
    q = x2 * q + <float>2.26843463243900e-03
    q = x2 * q + <float>4.89352518554385e-03
    return p / q


cdef void _gelu_fwd(const float* x, float* y, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef float v, t
    for i in range(n):
        v = x[i]
        t = _tanhf(GELU_C * (v + GELU_A * v * v * v))
        y[i] = <float>0.5 * v * (<float>1.0 + t)


cdef void _gelu_bwd(const float* x, const float* dy, float* dx, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef float v, v2, t, dt
    for i in range(n):
        v = x[i]
        v2 = v * v
        t = _tanhf(GELU_C * (v + GELU_A * v2 * v))
        dt = (<float>1.0 - t * t) * GELU_C * (<float>1.0 + <float>3.0 * GELU_A * v2)
        dx[i] = dy[i] * (<float>0.5 * (<float>1.0 + t) + <float>0.5 * v * dt)


def layernorm_fwd(const float[:, ::1] x, const float[::1] gain, const float[::1] bias, double eps):
    cdef Py_ssize_t rows = x.shape[0], cols = x.shape[1], i, j
    y_arr = np.empty((rows, cols), dtype=np.float32)
    xhat_arr = np.empty((rows, cols), dtype=np.float32)
    rstd_arr = np.empty(rows, dtype=np.float32)
    cdef float[:, ::1] y = y_arr
    cdef float[:, ::1] xhat = xhat_arr
    cdef float[::1] rstd = rstd_arr
    cdef double mean, var, d, r
    with nogil:
        for i in range(rows):
            mean = 0.0
            for j in range(cols):
                mean += x[i, j]
            mean /= cols
            var = 0.0
            for j in range(cols):
                d = x[i, j] - mean
                var += d * d
            var /= cols
            r = 1.0 / sqrt(var + eps)
            rstd[i] = <float>r
            for j in range(cols):
                xhat[i, j] = <float>((x[i, j] - mean) * r)
                y[i, j] = xhat[i, j] * gain[j] + bias[j]
    return y_arr, xhat_arr, rstd_arr


def layernorm_bwd(const float[:, ::1] dy, const float[:, ::1] xhat, const float[::1] rstd,
                  const float[::1] gain):
    cdef Py_ssize_t rows = dy.shape[0], cols = dy.shape[1], i, j
    dx_arr = np.empty((rows, cols), dtype=np.float32)
    dgain_acc = np.zeros(cols, dtype=np.float64)
    dbias_acc = np.zeros(cols, dtype=np.float64)
    cdef float[:, ::1] dx = dx_arr
    cdef double[::1] dgain = dgain_acc
    cdef double[::1] dbias = dbias_acc
    cdef double mg, mgx, g
    with nogil:
        for i in range(rows):
            mg = 0.0
            mgx = 0.0
            for j in range(cols):
                g = dy[i, j] * gain[j]
                mg += g
                mgx += g * xhat[i, j]
                dgain[j] += dy[i, j] * xhat[i, j]
                dbias[j] += dy[i, j]
            mg /= cols
            mgx /= cols
            for j in range(cols):
                g = dy[i, j] * gain[j]
                dx[i, j] = <float>((g - mg - xhat[i, j] * mgx) * rstd[i])
    return dx_arr, dgain_acc.astype(np.float32), dbias_acc.astype(np.float32)


def softmax_fwd(const float[:, ::1] x):
    cdef Py_ssize_t rows = x.shape[0], cols = x.shape[1], i, j
    y_arr = np.empty((rows, cols), dtype=np.float32)
    cdef float[:, ::1] y = y_arr
    cdef float m, e
    cdef double s
    with nogil:
        for i in range(rows):
            m = x[i, 0]
            for j in range(1, cols):
                if x[i, j] > m:
                    m = x[i, j]
            for j in range(cols):
                y[i, j] = sharedenc_expf(x[i, j] - m)
            s = 0.0
            for j in range(cols):
                s += y[i, j]
            e = <float>(1.0 / s)
            for j in range(cols):
                y[i, j] = y[i, j] * e
    return y_arr


def softmax_bwd(const float[:, ::1] y, const float[:, ::1] dy):
    cdef Py_ssize_t rows = y.shape[0], cols = y.shape[1], i, j
    dx_arr = np.empty((rows, cols), dtype=np.float32)
    cdef float[:, ::1] dx = dx_arr
    cdef double dot
    with nogil:
        for i in range(rows):
            dot = 0.0
            for j in range(cols):
                dot += dy[i, j] * y[i, j]
            for j in range(cols):
                dx[i, j] = <float>(y[i, j] * (dy[i, j] - dot))
    return dx_arr


def gelu_fwd(const float[:, ::1] x):
    y_arr = np.empty((x.shape[0], x.shape[1]), dtype=np.float32)
    cdef float[:, ::1] y = y_arr
    if x.shape[0] * x.shape[1]:
        with nogil:
            _gelu_fwd(&x[0, 0], &y[0, 0], x.shape[0] * x.shape[1])
    return y_arr


def gelu_bwd(const float[:, ::1] x, const float[:, ::1] dy):
    dx_arr = np.empty((x.shape[0], x.shape[1]), dtype=np.float32)
    cdef float[:, ::1] dx = dx_arr
    if x.shape[0] * x.shape[1]:
        with nogil:
            _gelu_bwd(&x[0, 0], &dy[0, 0], &dx[0, 0], x.shape[0] * x.shape[1])
    return dx_arr
