# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled 2-D cross-correlation kernels.

Weights use the [Cin, Cout, kh, kw] layout. All sums accumulate in double
precision regardless of the storage type.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef fused real_t:
    float
    double


def conv2d_forward(real_t[:, :, :, ::1] x, real_t[:, :, :, ::1] w,
                   real_t[::1] b, int ph, int pw):
    cdef Py_ssize_t B = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Cout = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t Ho = H + 2 * ph - kh + 1, Wo = W + 2 * pw - kw + 1
    cdef Py_ssize_t n, o, c, i, j, u, v, yi, xj
    cdef double acc
    dtype = np.float32 if real_t is float else np.float64
    out = np.empty((B, Cout, Ho, Wo), dtype=dtype)
    cdef real_t[:, :, :, ::1] y = out
    for n in range(B):
        for o in range(Cout):
            for i in range(Ho):
                for j in range(Wo):
                    acc = b[o]
                    for c in range(Cin):
                        for u in range(kh):
                            yi = i + u - ph
                            if yi < 0 or yi >= H:
                                continue
                            for v in range(kw):
                                xj = j + v - pw
                                if xj < 0 or xj >= W:
                                    continue
                                acc += <double>x[n, c, yi, xj] * <double>w[c, o, u, v]
                    y[n, o, i, j] = <real_t>acc
    return out


def conv2d_backward(real_t[:, :, :, ::1] gy, real_t[:, :, :, ::1] x,
                    real_t[:, :, :, ::1] w, int ph, int pw):
    """Return (grad_input, grad_weight, grad_bias) for ``conv2d_forward``."""
    cdef Py_ssize_t B = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Cout = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t Ho = gy.shape[2], Wo = gy.shape[3]
    cdef Py_ssize_t n, o, c, i, j, u, v, yi, xj
    cdef double g
    gx64 = np.zeros((B, Cin, H, W), dtype=np.float64)
    gw64 = np.zeros((Cin, Cout, kh, kw), dtype=np.float64)
    gb64 = np.zeros(Cout, dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx64
    cdef double[:, :, :, ::1] gw = gw64
    cdef double[::1] gb = gb64
    for n in range(B):
        for o in range(Cout):
            for i in range(Ho):
                for j in range(Wo):
                    g = gy[n, o, i, j]
                    if g == 0.0:
                        continue
                    gb[o] += g
                    for c in range(Cin):
                        for u in range(kh):
                            yi = i + u - ph
                            if yi < 0 or yi >= H:
                                continue
                            for v in range(kw):
                                xj = j + v - pw
                                if xj < 0 or xj >= W:
                                    continue
                                gx[n, c, yi, xj] += g * w[c, o, u, v]
                                gw[c, o, u, v] += g * x[n, c, yi, xj]
    dtype = np.float32 if real_t is float else np.float64
    return gx64.astype(dtype), gw64.astype(dtype), gb64.astype(dtype)
