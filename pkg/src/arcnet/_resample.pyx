# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled bilinear sampling kernels.

Axis modes: 0 = zero outside the grid, 1 = clamp to the edge, 2 = wrap.
A NaN coordinate marks a masked sample whose output is 0.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, isnan

cnp.import_array()


cdef inline Py_ssize_t _fix(Py_ssize_t i, Py_ssize_t n, int mode, bint *ok) noexcept nogil:
    if mode == 2:
        i = i % n
        if i < 0:
            i += n
        return i
    if mode == 1:
        if i < 0:
            return 0
        if i >= n:
            return n - 1
        return i
    if i < 0 or i >= n:
        ok[0] = False
        return 0
    return i


def sample(const double[:, :, ::1] src, const double[::1] ys, const double[::1] xs,
           int mode_y=0, int mode_x=0):
    """out[m, n] = bilinear sample of src[m] at (ys[n], xs[n])."""
    cdef Py_ssize_t M = src.shape[0], H = src.shape[1], W = src.shape[2]
    cdef Py_ssize_t N = ys.shape[0]
    out_arr = np.zeros((M, N), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t n, m, y0, x0, ya, yb, xa, xb
    cdef double y, x, fy, fx, w00, w01, w10, w11
    cdef bint oka, okb, okc, okd
    with nogil:
        for n in range(N):
            y = ys[n]
            x = xs[n]
            if isnan(y) or isnan(x):
                continue
            y0 = <Py_ssize_t>floor(y)
            x0 = <Py_ssize_t>floor(x)
            fy = y - y0
            fx = x - x0
            oka = True
            okb = True
            okc = True
            okd = True
            ya = _fix(y0, H, mode_y, &oka)
            yb = _fix(y0 + 1, H, mode_y, &okb)
            xa = _fix(x0, W, mode_x, &okc)
            xb = _fix(x0 + 1, W, mode_x, &okd)
            w00 = (1.0 - fy) * (1.0 - fx) if (oka and okc) else 0.0
            w01 = (1.0 - fy) * fx if (oka and okd) else 0.0
            w10 = fy * (1.0 - fx) if (okb and okc) else 0.0
            w11 = fy * fx if (okb and okd) else 0.0
            for m in range(M):
                out[m, n] = (w00 * src[m, ya, xa] + w01 * src[m, ya, xb]
                             + w10 * src[m, yb, xa] + w11 * src[m, yb, xb])
    return out_arr


def sample_adjoint(const double[:, ::1] grad, const double[::1] ys, const double[::1] xs,
                   Py_ssize_t H, Py_ssize_t W, int mode_y=0, int mode_x=0):
    """Scatter grad[m, n] back onto an (M, H, W) grid; transpose of `sample`."""
    cdef Py_ssize_t M = grad.shape[0], N = ys.shape[0]
    out_arr = np.zeros((M, H, W), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t n, m, y0, x0, ya, yb, xa, xb
    cdef double y, x, fy, fx, w00, w01, w10, w11, g
    cdef bint oka, okb, okc, okd
    with nogil:
        for n in range(N):
            y = ys[n]
            x = xs[n]
            if isnan(y) or isnan(x):
                continue
            y0 = <Py_ssize_t>floor(y)
            x0 = <Py_ssize_t>floor(x)
            fy = y - y0
            fx = x - x0
            oka = True
            okb = True
            okc = True
            okd = True
            ya = _fix(y0, H, mode_y, &oka)
            yb = _fix(y0 + 1, H, mode_y, &okb)
            xa = _fix(x0, W, mode_x, &okc)
            xb = _fix(x0 + 1, W, mode_x, &okd)
            w00 = (1.0 - fy) * (1.0 - fx) if (oka and okc) else 0.0
            w01 = (1.0 - fy) * fx if (oka and okd) else 0.0
            w10 = fy * (1.0 - fx) if (okb and okc) else 0.0
            w11 = fy * fx if (okb and okd) else 0.0
            for m in range(M):
                g = grad[m, n]
                out[m, ya, xa] += w00 * g
                out[m, ya, xb] += w01 * g
                out[m, yb, xa] += w10 * g
                out[m, yb, xb] += w11 * g
    return out_arr


ctypedef fused real:
    float
    double


def apply_table(const real[:, ::1] src, const long long[:, ::1] idx,
                const double[:, ::1] w, real[:, ::1] out):
    """out[m, n] = sum_k w[n, k] * src[m, idx[n, k]] for a precomputed table."""
    cdef Py_ssize_t M = src.shape[0], N = idx.shape[0], m, n
    with nogil:
        for m in range(M):
            for n in range(N):
                out[m, n] = <real>(w[n, 0] * src[m, idx[n, 0]] + w[n, 1] * src[m, idx[n, 1]]
                                   + w[n, 2] * src[m, idx[n, 2]] + w[n, 3] * src[m, idx[n, 3]])


def apply_table_adjoint(const real[:, ::1] grad, const long long[:, ::1] idx,
                        const double[:, ::1] w, real[:, ::1] out):
    """Accumulate the transpose of `apply_table` into a zeroed ``out``."""
    cdef Py_ssize_t M = grad.shape[0], N = idx.shape[0], m, n, k
    cdef double g
    with nogil:
        for m in range(M):
            for n in range(N):
                g = grad[m, n]
                if g == 0.0:
                    continue
                for k in range(4):
                    out[m, idx[n, k]] += <real>(w[n, k] * g)
