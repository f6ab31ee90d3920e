"""Numpy implementations of the compiled kernels (same signatures)."""

import numpy as np
from scipy.signal import lfilter


def sl_sweep(w, ix, iy, tx, ty, stage_cost, beta, out):
    w00 = w[ix, iy]
    w01 = w[ix, iy + 1]
    w10 = w[ix + 1, iy]
    w11 = w[ix + 1, iy + 1]
    interp = (1.0 - tx) * ((1.0 - ty) * w00 + ty * w01) + tx * ((1.0 - ty) * w10 + ty * w11)
    vals = stage_cost + beta * interp
    # argmin keeps the first control on ties, like the compiled loop
    k = np.argmin(vals, axis=0)
    out[...] = np.take_along_axis(vals, k[None], axis=0)[0]
    return float(np.max(np.abs(out - w)))


def exp_sweeps(z, e, a, b):
    z = np.asarray(z, dtype=float)
    # fwd[i] = e fwd[i-1] + a z[i-1] + b z[i], fwd[0] = 0
    drive = b * z
    drive[1:] += a * z[:-1]
    drive[0] = 0.0
    fwd = lfilter([1.0], [1.0, -e], drive, axis=0)
    rz = z[::-1]
    drive_b = b * rz
    drive_b[1:] += a * rz[:-1]
    drive_b[0] = 0.0
    bwd = lfilter([1.0], [1.0, -e], drive_b, axis=0)[::-1]
    return np.ascontiguousarray(fwd), np.ascontiguousarray(bwd)


def causal_trapezoid(a, y, h):
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    n_y = y.shape[0]
    n_a = a.shape[0]
    full = np.convolve(a, y)[:n_y]
    out = full - 0.5 * a[0] * y
    n = np.arange(n_y)
    inside = n <= n_a - 1
    # endpoint at j = n (kernel support covers the whole past)
    out[inside] -= 0.5 * a[n[inside]] * y[0]
    # endpoint at j = n_a - 1 (truncated by the support)
    out[~inside] -= 0.5 * a[n_a - 1] * y[n[~inside] - (n_a - 1)]
    out[0] = 0.0
    return h * out
