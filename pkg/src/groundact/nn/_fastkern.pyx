# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled conv / maxpool kernels: im2col + BLAS dgemm, plus pooling loops."""

import numpy as np

cimport numpy as cnp
from libc.string cimport memcpy, memset
from scipy.linalg.cython_blas cimport daxpy, dgemm

cnp.import_array()


cdef void _gemm(double[:, ::1] a, double[:, ::1] b, double[:, ::1] c) noexcept nogil:
    # c (m,n) = a (m,k) @ b (k,n), all C-contiguous: computed as the
    # column-major product b^T a^T via argument swap.
    cdef int m = a.shape[0]
    cdef int k = a.shape[1]
    cdef int n = b.shape[1]
    cdef double one = 1.0
    cdef double zero = 0.0
    cdef char nt = b'N'
    if m == 0 or k == 0 or n == 0:
        return
    dgemm(&nt, &nt, &n, &m, &k, &one, &b[0, 0], &n, &a[0, 0], &k, &zero, &c[0, 0], &n)


cdef void _gemm_nt(double[:, ::1] a, double[:, ::1] b, double[:, ::1] c) noexcept nogil:
    # c (m,n) = a (m,k) @ b(n,k)^T without materializing the transpose.
    cdef int m = a.shape[0]
    cdef int k = a.shape[1]
    cdef int n = b.shape[0]
    cdef double one = 1.0
    cdef double zero = 0.0
    cdef char t = b'T'
    cdef char nt = b'N'
    if m == 0 or k == 0 or n == 0:
        return
    dgemm(&t, &nt, &n, &m, &k, &one, &b[0, 0], &k, &a[0, 0], &k, &zero, &c[0, 0], &n)


cdef void _gemm_tn(double[:, ::1] a, double[:, ::1] b, double[:, ::1] c) noexcept nogil:
    # c (m,n) = a(k,m)^T @ b (k,n) without materializing the transpose.
    cdef int k = a.shape[0]
    cdef int m = a.shape[1]
    cdef int n = b.shape[1]
    cdef double one = 1.0
    cdef double zero = 0.0
    cdef char t = b'T'
    cdef char nt = b'N'
    if m == 0 or k == 0 or n == 0:
        return
    dgemm(&nt, &t, &n, &m, &k, &one, &b[0, 0], &n, &a[0, 0], &m, &zero, &c[0, 0], &n)


cdef void _im2col(double[:, :, ::1] xp, double[:, ::1] cols,
                  int h, int w, int kh, int kw) noexcept nogil:
    cdef int cin = xp.shape[0]
    cdef int hp = xp.shape[1]
    cdef int wp = xp.shape[2]
    cdef double *xb = &xp[0, 0, 0]
    cdef double *cb = &cols[0, 0]
    cdef int c, i, j, y0, row
    for c in range(cin):
        for i in range(kh):
            for j in range(kw):
                row = (c * kh + i) * kw + j
                for y0 in range(h):
                    memcpy(cb + <size_t>row * h * w + y0 * w,
                           xb + (<size_t>c * hp + i + y0) * wp + j,
                           w * sizeof(double))


cdef void _col2im(double[:, ::1] cols, double[:, :, ::1] xp,
                  int h, int w, int kh, int kw) noexcept nogil:
    cdef int cin = xp.shape[0]
    cdef int hp = xp.shape[1]
    cdef int wp = xp.shape[2]
    cdef double *xb = &xp[0, 0, 0]
    cdef double *cb = &cols[0, 0]
    cdef double one = 1.0
    cdef int inc = 1
    cdef int c, i, j, y0, row
    for c in range(cin):
        for i in range(kh):
            for j in range(kw):
                row = (c * kh + i) * kw + j
                for y0 in range(h):
                    daxpy(&w, &one,
                          cb + <size_t>row * h * w + y0 * w, &inc,
                          xb + (<size_t>c * hp + i + y0) * wp + j, &inc)


def conv2d_forward(cnp.ndarray x, cnp.ndarray w, cnp.ndarray b):
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    cdef int cin = x.shape[0], h = x.shape[1], ww = x.shape[2]
    cdef int cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef int ph = kh // 2, pw = kw // 2
    xp_arr = np.zeros((cin, h + 2 * ph, ww + 2 * pw), dtype=np.float64)
    xp_arr[:, ph:ph + h, pw:pw + ww] = x
    cols_arr = np.empty((cin * kh * kw, h * ww), dtype=np.float64)
    cdef double[:, :, ::1] xp = xp_arr
    cdef double[:, ::1] cols = cols_arr
    with nogil:
        _im2col(xp, cols, h, ww, kh, kw)
    w2 = w.reshape(cout, cin * kh * kw)
    y_arr = np.empty((cout, h * ww), dtype=np.float64)
    cdef double[:, ::1] w2v = w2
    cdef double[:, ::1] yv = y_arr
    with nogil:
        _gemm(w2v, cols, yv)
    y_arr += b[:, None]
    return y_arr.reshape(cout, h, ww)


def conv2d_backward(cnp.ndarray x, cnp.ndarray w, cnp.ndarray dy):
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    dy = np.ascontiguousarray(dy, dtype=np.float64)
    cdef int cin = x.shape[0], h = x.shape[1], ww = x.shape[2]
    cdef int cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef int ph = kh // 2, pw = kw // 2
    xp_arr = np.zeros((cin, h + 2 * ph, ww + 2 * pw), dtype=np.float64)
    xp_arr[:, ph:ph + h, pw:pw + ww] = x
    cols_arr = np.empty((cin * kh * kw, h * ww), dtype=np.float64)
    cdef double[:, :, ::1] xp = xp_arr
    cdef double[:, ::1] cols = cols_arr
    with nogil:
        _im2col(xp, cols, h, ww, kh, kw)

    dy2 = dy.reshape(cout, h * ww)
    dw_arr = np.empty((cout, cin * kh * kw), dtype=np.float64)
    cdef double[:, ::1] dy2v = dy2
    cdef double[:, ::1] dwv = dw_arr
    with nogil:
        _gemm_nt(dy2v, cols, dwv)  # dw = dy2 @ cols^T

    w2 = w.reshape(cout, cin * kh * kw)
    dcols_arr = np.empty((cin * kh * kw, h * ww), dtype=np.float64)
    cdef double[:, ::1] w2v = w2
    cdef double[:, ::1] dcolsv = dcols_arr
    with nogil:
        _gemm_tn(w2v, dy2v, dcolsv)  # dcols = w2^T @ dy2

    dxp_arr = np.zeros_like(xp_arr)
    cdef double[:, :, ::1] dxp = dxp_arr
    with nogil:
        _col2im(dcolsv, dxp, h, ww, kh, kw)

    db = dy.sum(axis=(1, 2))
    dx = dxp_arr[:, ph:ph + h, pw:pw + ww]
    return np.ascontiguousarray(dx), dw_arr.reshape(cout, cin, kh, kw), db


def maxpool2_forward(cnp.ndarray x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    cdef int c = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef int h2 = h // 2, w2 = w // 2
    y_arr = np.empty((c, h2, w2), dtype=np.float64)
    idx_arr = np.empty((c, h2, w2), dtype=np.int8)
    cdef double[:, :, ::1] xv = x
    cdef double[:, :, ::1] yv = y_arr
    cdef signed char[:, :, ::1] iv = idx_arr
    cdef int ci, i, j, k
    cdef double best, v
    cdef int bi
    with nogil:
        for ci in range(c):
            for i in range(h2):
                for j in range(w2):
                    best = xv[ci, 2 * i, 2 * j]
                    bi = 0
                    v = xv[ci, 2 * i, 2 * j + 1]
                    if v > best:
                        best = v; bi = 1
                    v = xv[ci, 2 * i + 1, 2 * j]
                    if v > best:
                        best = v; bi = 2
                    v = xv[ci, 2 * i + 1, 2 * j + 1]
                    if v > best:
                        best = v; bi = 3
                    yv[ci, i, j] = best
                    iv[ci, i, j] = <signed char>bi
    return y_arr, idx_arr


def maxpool2_backward(cnp.ndarray dy, cnp.ndarray idx):
    dy = np.ascontiguousarray(dy, dtype=np.float64)
    idx = np.ascontiguousarray(idx, dtype=np.int8)
    cdef int c = dy.shape[0], h2 = dy.shape[1], w2 = dy.shape[2]
    dx_arr = np.zeros((c, h2 * 2, w2 * 2), dtype=np.float64)
    cdef double[:, :, ::1] dyv = dy
    cdef double[:, :, ::1] dxv = dx_arr
    cdef signed char[:, :, ::1] iv = idx
    cdef int ci, i, j, k
    with nogil:
        for ci in range(c):
            for i in range(h2):
                for j in range(w2):
                    k = iv[ci, i, j]
                    dxv[ci, 2 * i + (k >> 1), 2 * j + (k & 1)] += dyv[ci, i, j]
    return dx_arr
