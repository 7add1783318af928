# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: im2col/col2im, 2x2 max pooling, exact EDT."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()

NAME = "cython"


def im2col(double[:, :, :, ::1] x, int kh, int kw, int stride, int padding):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h + 2 * padding - kh) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * padding - kw) // stride + 1
    out = np.empty((c * kh * kw, n * ho * wo), dtype=np.float64)
    cdef double[:, ::1] cols = out
    cdef Py_ssize_t b, ch, i, j, oy, ox, iy, ix, row, base, lo, hi
    with nogil:
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ch * kh + i) * kw + j
                    # valid ox range: 0 <= ox*stride + j - padding < w
                    lo = 0
                    while lo < wo and lo * stride + j - padding < 0:
                        lo = lo + 1
                    hi = wo
                    while hi > lo and (hi - 1) * stride + j - padding >= w:
                        hi = hi - 1
                    for b in range(n):
                        for oy in range(ho):
                            base = (b * ho + oy) * wo
                            iy = oy * stride + i - padding
                            if iy < 0 or iy >= h:
                                for ox in range(wo):
                                    cols[row, base + ox] = 0.0
                                continue
                            for ox in range(lo):
                                cols[row, base + ox] = 0.0
                            for ox in range(lo, hi):
                                cols[row, base + ox] = x[b, ch, iy, ox * stride + j - padding]
                            for ox in range(hi, wo):
                                cols[row, base + ox] = 0.0
    return out


def col2im(cols_in, shape, int kh, int kw, int stride, int padding):
    cdef Py_ssize_t n = shape[0], c = shape[1], h = shape[2], w = shape[3]
    cdef Py_ssize_t ho = (h + 2 * padding - kh) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * padding - kw) // stride + 1
    cdef double[:, ::1] cols = np.ascontiguousarray(cols_in, dtype=np.float64).reshape(
        c * kh * kw, n * ho * wo)
    out = np.zeros((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] img = out
    cdef Py_ssize_t b, ch, i, j, oy, ox, iy, row, base, lo, hi
    with nogil:
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ch * kh + i) * kw + j
                    lo = 0
                    while lo < wo and lo * stride + j - padding < 0:
                        lo = lo + 1
                    hi = wo
                    while hi > lo and (hi - 1) * stride + j - padding >= w:
                        hi = hi - 1
                    for b in range(n):
                        for oy in range(ho):
                            iy = oy * stride + i - padding
                            if iy < 0 or iy >= h:
                                continue
                            base = (b * ho + oy) * wo
                            for ox in range(lo, hi):
                                img[b, ch, iy, ox * stride + j - padding] += cols[row, base + ox]
    return out


def maxpool2_forward(double[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], ho = x.shape[2] // 2, wo = x.shape[3] // 2
    out = np.empty((n, c, ho, wo), dtype=np.float64)
    arg = np.empty((n, c, ho, wo), dtype=np.int8)
    cdef double[:, :, :, ::1] o = out
    cdef cnp.int8_t[:, :, :, ::1] a = arg
    cdef Py_ssize_t b, ch, y, xx
    cdef double best, v
    cdef cnp.int8_t k
    for b in range(n):
        for ch in range(c):
            for y in range(ho):
                for xx in range(wo):
                    best = x[b, ch, 2 * y, 2 * xx]
                    k = 0
                    v = x[b, ch, 2 * y, 2 * xx + 1]
                    if v > best:
                        best = v
                        k = 1
                    v = x[b, ch, 2 * y + 1, 2 * xx]
                    if v > best:
                        best = v
                        k = 2
                    v = x[b, ch, 2 * y + 1, 2 * xx + 1]
                    if v > best:
                        best = v
                        k = 3
                    o[b, ch, y, xx] = best
                    a[b, ch, y, xx] = k
    return out, arg


def maxpool2_backward(double[:, :, :, ::1] grad, cnp.int8_t[:, :, :, ::1] idx):
    cdef Py_ssize_t n = grad.shape[0], c = grad.shape[1], ho = grad.shape[2], wo = grad.shape[3]
    out = np.zeros((n, c, 2 * ho, 2 * wo), dtype=np.float64)
    cdef double[:, :, :, ::1] g = out
    cdef Py_ssize_t b, ch, y, xx
    cdef int k
    for b in range(n):
        for ch in range(c):
            for y in range(ho):
                for xx in range(wo):
                    k = idx[b, ch, y, xx]
                    g[b, ch, 2 * y + k // 2, 2 * xx + k % 2] = grad[b, ch, y, xx]
    return out


cdef void _envelope(double[::1] f, double[::1] d, Py_ssize_t n,
                    Py_ssize_t[::1] v, double[::1] z) noexcept nogil:
    # Felzenszwalb & Huttenlocher lower envelope of parabolas; inf-safe.
    cdef Py_ssize_t k = -1, q, j
    cdef double s
    for q in range(n):
        if f[q] == INFINITY:
            continue
        while k >= 0:
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k])
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        if k == 0:
            z[k] = -INFINITY
        else:
            z[k] = ((f[q] + q * q) - (f[v[k - 1]] + v[k - 1] * v[k - 1])) / (2.0 * q - 2.0 * v[k - 1])
        z[k + 1] = INFINITY
    if k < 0:
        for q in range(n):
            d[q] = INFINITY
        return
    j = 0
    for q in range(n):
        while z[j + 1] < q:
            j += 1
        d[q] = (q - v[j]) * (q - v[j]) + f[v[j]]


def edt_sq(features):
    feat = np.ascontiguousarray(features, dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] fm = feat
    cdef Py_ssize_t h = fm.shape[0], w = fm.shape[1], y, x
    out = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] g = out
    cdef Py_ssize_t m = h if h > w else w
    cdef double[::1] f = np.empty(m, dtype=np.float64)
    cdef double[::1] d = np.empty(m, dtype=np.float64)
    cdef Py_ssize_t[::1] v = np.empty(m, dtype=np.intp)
    cdef double[::1] z = np.empty(m + 1, dtype=np.float64)
    for x in range(w):
        for y in range(h):
            f[y] = 0.0 if fm[y, x] else INFINITY
        _envelope(f, d, h, v, z)
        for y in range(h):
            g[y, x] = d[y]
    for y in range(h):
        for x in range(w):
            f[x] = g[y, x]
        _envelope(f, d, w, v, z)
        for x in range(w):
            g[y, x] = d[x]
    return out
