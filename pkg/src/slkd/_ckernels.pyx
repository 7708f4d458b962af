# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution gather/scatter kernels (same layout as _pykernels)."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col(const float[:, :, :, ::1] x, int kh, int kw, int stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t ho = (x.shape[2] - kh) // stride + 1
    cdef Py_ssize_t wo = (x.shape[3] - kw) // stride + 1
    out = np.empty((n, ho, wo, c, kh, kw), dtype=np.float32)
    cdef float[:, :, :, :, :, ::1] o = out
    cdef Py_ssize_t b, y, xx, ch, i, j
    with nogil:
        for b in range(n):
            for y in range(ho):
                for xx in range(wo):
                    for ch in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                o[b, y, xx, ch, i, j] = x[b, ch, y * stride + i, xx * stride + j]
    return out


def col2im(const float[:, :, :, :, :, ::1] cols, shape, int kh, int kw, int stride):
    cdef Py_ssize_t n = shape[0], c = shape[1]
    cdef Py_ssize_t ho = cols.shape[1], wo = cols.shape[2]
    out = np.zeros(shape, dtype=np.float32)
    cdef float[:, :, :, ::1] o = out
    cdef Py_ssize_t b, y, xx, ch, i, j
    # tap-major accumulation keeps the summation order of the numpy fallback
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        for y in range(ho):
                            for xx in range(wo):
                                o[b, ch, y * stride + i, xx * stride + j] += cols[b, y, xx, ch, i, j]
    return out
