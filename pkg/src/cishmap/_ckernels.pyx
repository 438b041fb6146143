# cython: language_level=3, boundscheck=False, wraparound=False
# cython: cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels in ``_pykernels``.

Loops run in a fixed order so results are bit-reproducible run to run.
Signatures and return layouts match the numpy backend exactly.
"""

import numpy as np
from cython cimport floating

NAME = "cython"


cdef inline Py_ssize_t _ceil_div(Py_ssize_t a, Py_ssize_t b) nogil:
    if a <= 0:
        return 0
    return (a + b - 1) // b


cdef inline void _col_range(Py_ssize_t kj, Py_ssize_t pad, Py_ssize_t stride,
                            Py_ssize_t width, Py_ssize_t wo,
                            Py_ssize_t *j0, Py_ssize_t *j1) nogil:
    # output columns j with 0 <= j*stride + kj - pad < width
    cdef Py_ssize_t hi
    j0[0] = _ceil_div(pad - kj, stride)
    hi = width - 1 + pad - kj
    if hi < 0:
        j1[0] = 0
    else:
        j1[0] = hi // stride + 1
        if j1[0] > wo:
            j1[0] = wo


def _dtype(arr):
    return np.float32 if arr.dtype == np.float32 else np.float64


def conv2d_forward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w,
                   Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n_b = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0], K = w.shape[2]
    cdef Py_ssize_t Ho = (H + 2 * pad - K) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - K) // stride + 1
    out = np.zeros((n_b, O, Ho, Wo), dtype=_dtype(np.asarray(x)))
    cdef floating[:, :, :, ::1] y = out
    cdef Py_ssize_t n, o, c, ki, kj, i, j, ii, j0, j1, off
    cdef floating wv
    cdef floating *yrow
    cdef floating *xrow
    with nogil:
        for n in range(n_b):
            for o in range(O):
                for c in range(C):
                    for ki in range(K):
                        for kj in range(K):
                            wv = w[o, c, ki, kj]
                            _col_range(kj, pad, stride, W, Wo, &j0, &j1)
                            off = kj - pad
                            for i in range(Ho):
                                ii = i * stride + ki - pad
                                if ii < 0 or ii >= H:
                                    continue
                                yrow = &y[n, o, i, 0]
                                xrow = &x[n, c, ii, 0]
                                if stride == 1:
                                    for j in range(j0, j1):
                                        yrow[j] += wv * xrow[j + off]
                                else:
                                    for j in range(j0, j1):
                                        yrow[j] += wv * xrow[j * stride + off]
    return out


def conv2d_backward_input(floating[:, :, :, ::1] gy, floating[:, :, :, ::1] w,
                          in_hw, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n_b = gy.shape[0], O = gy.shape[1], Ho = gy.shape[2], Wo = gy.shape[3]
    cdef Py_ssize_t C = w.shape[1], K = w.shape[2]
    cdef Py_ssize_t H = in_hw[0], W = in_hw[1]
    out = np.zeros((n_b, C, H, W), dtype=_dtype(np.asarray(gy)))
    cdef floating[:, :, :, ::1] gx = out
    cdef Py_ssize_t n, o, c, ki, kj, i, j, ii, j0, j1, off
    cdef floating wv
    cdef floating *grow
    cdef floating *xrow
    with nogil:
        for n in range(n_b):
            for c in range(C):
                for o in range(O):
                    for ki in range(K):
                        for kj in range(K):
                            wv = w[o, c, ki, kj]
                            _col_range(kj, pad, stride, W, Wo, &j0, &j1)
                            off = kj - pad
                            for i in range(Ho):
                                ii = i * stride + ki - pad
                                if ii < 0 or ii >= H:
                                    continue
                                grow = &gy[n, o, i, 0]
                                xrow = &gx[n, c, ii, 0]
                                if stride == 1:
                                    for j in range(j0, j1):
                                        xrow[j + off] += wv * grow[j]
                                else:
                                    for j in range(j0, j1):
                                        xrow[j * stride + off] += wv * grow[j]
    return out


def conv2d_backward_weight(floating[:, :, :, ::1] x, floating[:, :, :, ::1] gy,
                           Py_ssize_t K, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n_b = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = gy.shape[1], Ho = gy.shape[2], Wo = gy.shape[3]
    out = np.zeros((O, C, K, K), dtype=_dtype(np.asarray(x)))
    buf_arr = np.zeros(Wo, dtype=out.dtype)
    cdef floating[:, :, :, ::1] gw = out
    cdef floating[::1] buf = buf_arr
    cdef Py_ssize_t n, o, c, ki, kj, i, j, ii, j0, j1, off
    cdef double acc
    cdef floating *grow
    cdef floating *xrow
    with nogil:
        for o in range(O):
            for c in range(C):
                for ki in range(K):
                    for kj in range(K):
                        _col_range(kj, pad, stride, W, Wo, &j0, &j1)
                        off = kj - pad
                        for j in range(Wo):
                            buf[j] = 0
                        # per-column partial sums keep the inner loop vectorizable
                        for n in range(n_b):
                            for i in range(Ho):
                                ii = i * stride + ki - pad
                                if ii < 0 or ii >= H:
                                    continue
                                grow = &gy[n, o, i, 0]
                                xrow = &x[n, c, ii, 0]
                                if stride == 1:
                                    for j in range(j0, j1):
                                        buf[j] += grow[j] * xrow[j + off]
                                else:
                                    for j in range(j0, j1):
                                        buf[j] += grow[j] * xrow[j * stride + off]
                        acc = 0.0
                        for j in range(Wo):
                            acc += buf[j]
                        gw[o, c, ki, kj] = <floating>acc
    return out


def maxpool_forward(floating[:, :, :, ::1] x, Py_ssize_t size):
    cdef Py_ssize_t n_b = x.shape[0], C = x.shape[1]
    cdef Py_ssize_t Ho = x.shape[2] // size, Wo = x.shape[3] // size
    out = np.empty((n_b, C, Ho, Wo), dtype=_dtype(np.asarray(x)))
    idx_arr = np.empty((n_b, C, Ho, Wo), dtype=np.int32)
    cdef floating[:, :, :, ::1] y = out
    cdef int[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t n, c, i, j, a, b
    cdef int best_k
    cdef floating best, v
    with nogil:
        for n in range(n_b):
            for c in range(C):
                for i in range(Ho):
                    for j in range(Wo):
                        best = x[n, c, i * size, j * size]
                        best_k = 0
                        for a in range(size):
                            for b in range(size):
                                v = x[n, c, i * size + a, j * size + b]
                                if v > best:
                                    best = v
                                    best_k = <int>(a * size + b)
                        y[n, c, i, j] = best
                        idx[n, c, i, j] = best_k
    return out, idx_arr


def maxpool_backward(floating[:, :, :, ::1] gy, int[:, :, :, ::1] idx,
                     Py_ssize_t size):
    cdef Py_ssize_t n_b = gy.shape[0], C = gy.shape[1], Ho = gy.shape[2], Wo = gy.shape[3]
    out = np.zeros((n_b, C, Ho * size, Wo * size), dtype=_dtype(np.asarray(gy)))
    cdef floating[:, :, :, ::1] gx = out
    cdef Py_ssize_t n, c, i, j, kk
    with nogil:
        for n in range(n_b):
            for c in range(C):
                for i in range(Ho):
                    for j in range(Wo):
                        kk = idx[n, c, i, j]
                        gx[n, c, i * size + kk // size, j * size + kk % size] = gy[n, c, i, j]
    return out


def reconstruct(seed, mask):
    """Queue-based geodesic reconstruction; equals the dilation fixpoint."""
    m_arr = np.ascontiguousarray(mask, dtype=np.uint8)
    out_arr = np.ascontiguousarray(seed, dtype=np.uint8) & m_arr
    cdef unsigned char[:, ::1] m = m_arr
    cdef unsigned char[:, ::1] out = out_arr
    cdef Py_ssize_t H = m.shape[0], W = m.shape[1]
    queue_arr = np.empty(H * W, dtype=np.intp)
    cdef Py_ssize_t[::1] queue = queue_arr
    cdef Py_ssize_t head = 0, tail = 0, p, y, x, q
    with nogil:
        for y in range(H):
            for x in range(W):
                if out[y, x]:
                    queue[tail] = y * W + x
                    tail += 1
        while head < tail:
            p = queue[head]
            head += 1
            y = p // W
            x = p % W
            if y > 0 and m[y - 1, x] and not out[y - 1, x]:
                out[y - 1, x] = 1
                queue[tail] = p - W
                tail += 1
            if y < H - 1 and m[y + 1, x] and not out[y + 1, x]:
                out[y + 1, x] = 1
                queue[tail] = p + W
                tail += 1
            if x > 0 and m[y, x - 1] and not out[y, x - 1]:
                out[y, x - 1] = 1
                queue[tail] = p - 1
                tail += 1
            if x < W - 1 and m[y, x + 1] and not out[y, x + 1]:
                out[y, x + 1] = 1
                queue[tail] = p + 1
                tail += 1
    return out_arr.astype(bool)
