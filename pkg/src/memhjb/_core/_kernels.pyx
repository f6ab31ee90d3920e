# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops.

Every function here has a numpy twin in ``_fallback.py`` with the same
signature and the same floating-point semantics up to summation order.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


def sl_sweep(const double[:, ::1] w,
             const cnp.int64_t[:, :, ::1] ix,
             const cnp.int64_t[:, :, ::1] iy,
             const double[:, :, ::1] tx,
             const double[:, :, ::1] ty,
             const double[:, :, ::1] stage_cost,
             double beta,
             double[:, ::1] out):
    """One semi-Lagrangian value-iteration sweep; returns sup |out - w|."""
    cdef Py_ssize_t nk = ix.shape[0]
    cdef Py_ssize_t nx = w.shape[0]
    cdef Py_ssize_t ny = w.shape[1]
    cdef Py_ssize_t k, i, j, i0, j0
    cdef double best, val, a, b, interp, diff
    cdef double sup = 0.0
    for i in range(nx):
        for j in range(ny):
            best = 0.0
            for k in range(nk):
                i0 = ix[k, i, j]
                j0 = iy[k, i, j]
                a = tx[k, i, j]
                b = ty[k, i, j]
                interp = ((1.0 - a) * ((1.0 - b) * w[i0, j0] + b * w[i0, j0 + 1])
                          + a * ((1.0 - b) * w[i0 + 1, j0] + b * w[i0 + 1, j0 + 1]))
                val = stage_cost[k, i, j] + beta * interp
                # strict < keeps the first control on ties
                if k == 0 or val < best:
                    best = val
            out[i, j] = best
            diff = fabs(best - w[i, j])
            if diff > sup:
                sup = diff
    return sup


def exp_sweeps(const double[:, ::1] z, double e, double a, double b):
    """Sweeps fwd[i] = e fwd[i-1] + a z[i-1] + b z[i] and bwd[i] = e bwd[i+1] + b z[i] + a z[i+1]."""
    cdef Py_ssize_t n = z.shape[0]
    cdef Py_ssize_t d = z.shape[1]
    cdef Py_ssize_t i, c
    fwd_arr = np.zeros((n, d))
    bwd_arr = np.zeros((n, d))
    cdef double[:, ::1] fwd = fwd_arr
    cdef double[:, ::1] bwd = bwd_arr
    for c in range(d):
        for i in range(1, n):
            fwd[i, c] = e * fwd[i - 1, c] + a * z[i - 1, c] + b * z[i, c]
        for i in range(n - 2, -1, -1):
            bwd[i, c] = e * bwd[i + 1, c] + b * z[i, c] + a * z[i + 1, c]
    return fwd_arr, bwd_arr


def causal_trapezoid(const double[::1] a, const double[::1] y, double h):
    """out[n] = trapezoid over j=0..n of a[j] * y[n-j]; a is truncated at len(a)."""
    cdef Py_ssize_t n_y = y.shape[0]
    cdef Py_ssize_t n_a = a.shape[0]
    cdef Py_ssize_t n, j, top
    cdef double acc, s0, s1, s2, s3
    out_arr = np.zeros(n_y)
    cdef double[::1] out = out_arr
    for n in range(1, n_y):
        top = n if n < n_a - 1 else n_a - 1
        # four partial sums break the add dependency chain
        s0 = s1 = s2 = s3 = 0.0
        j = 1
        while j + 3 < top:
            s0 += a[j] * y[n - j]
            s1 += a[j + 1] * y[n - j - 1]
            s2 += a[j + 2] * y[n - j - 2]
            s3 += a[j + 3] * y[n - j - 3]
            j += 4
        while j < top:
            s0 += a[j] * y[n - j]
            j += 1
        acc = 0.5 * a[0] * y[n] + ((s0 + s1) + (s2 + s3))
        if top == n:
            acc += 0.5 * a[n] * y[0]
        else:
            acc += 0.5 * a[top] * y[n - top]
        out[n] = h * acc
    return out_arr
