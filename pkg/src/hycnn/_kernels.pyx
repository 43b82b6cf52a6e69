# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False, language_level=3
"""Compiled hot loops: fused log-sum-exp gate and Sinkhorn soft-min.

Semantics match `_kernels_py` (same formulas, same branches); results agree
to rounding.
"""
import numpy as np
from libc.math cimport exp, log, log1p, fabs


def lse_gate(a1, a2, double tau):
    x1_arr = np.ascontiguousarray(a1, dtype=np.float64)
    x2_arr = np.ascontiguousarray(a2, dtype=np.float64)
    shape = x1_arr.shape
    cdef const double[::1] x1 = x1_arr.reshape(-1)
    cdef const double[::1] x2 = x2_arr.reshape(-1)
    cdef Py_ssize_t n = x1.shape[0], i
    z_arr = np.empty(n)
    w_arr = np.empty(n)
    cdef double[::1] z = z_arr
    cdef double[::1] w = w_arr
    cdef double d, e, hi, inv = 1.0 / tau
    with nogil:
        for i in range(n):
            d = (x1[i] - x2[i]) * inv
            e = exp(-fabs(d))
            hi = x1[i] if x1[i] >= x2[i] else x2[i]
            z[i] = hi + tau * log1p(e)
            if d >= 0:
                w[i] = 1.0 / (1.0 + e)
            else:
                w[i] = e / (1.0 + e)
    return z_arr.reshape(shape), w_arr.reshape(shape)


def softmin_rows(X, Y, h, double eps):
    """r_i = -eps * log sum_j exp((h_j - |x_i - y_j|^2 / 2) / eps)."""
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, ::1] y = np.ascontiguousarray(Y, dtype=np.float64)
    cdef const double[::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], m = y.shape[0], d = x.shape[1], i, j, k
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    cdef double[::1] row = np.empty(m)
    cdef double[::1] sy = np.empty(m)
    cdef double c, sx, dot, mx, s, inv = 1.0 / eps
    with nogil:
        for j in range(m):
            c = 0.0
            for k in range(d):
                c = c + y[j, k] * y[j, k]
            sy[j] = 0.5 * c
        for i in range(n):
            sx = 0.0
            for k in range(d):
                sx = sx + x[i, k] * x[i, k]
            sx = 0.5 * sx
            mx = -1e308
            for j in range(m):
                dot = 0.0
                for k in range(d):
                    dot = dot + x[i, k] * y[j, k]
                c = sx + sy[j] - dot
                if c < 0.0:
                    c = 0.0
                row[j] = (hv[j] - c) * inv
                if row[j] > mx:
                    mx = row[j]
            s = 0.0
            for j in range(m):
                s = s + exp(row[j] - mx)
            out[i] = -eps * (mx + log(s))
    return out_arr
