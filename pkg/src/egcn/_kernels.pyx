# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled CSR kernels. Signatures mirror ``egcn._kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()

ctypedef cnp.int64_t idx_t


def csr_spmm(const idx_t[::1] indptr, const idx_t[::1] indices,
             const double[::1] data, const double[:, ::1] x):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t d = x.shape[1]
    out_arr = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, p, c
    cdef idx_t j
    cdef double v
    with nogil:
        for i in range(n):
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                v = data[p]
                for c in range(d):
                    out[i, c] += v * x[j, c]
    return out_arr


def csr_spmm_t(const idx_t[::1] indptr, const idx_t[::1] indices,
               const double[::1] data, const double[:, ::1] y, Py_ssize_t n_cols):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t d = y.shape[1]
    out_arr = np.zeros((n_cols, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, p, c
    cdef idx_t j
    cdef double v
    with nogil:
        for i in range(n):
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                v = data[p]
                for c in range(d):
                    out[j, c] += v * y[i, c]
    return out_arr


def csr_sddmm(const idx_t[::1] indptr, const idx_t[::1] indices,
              const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t d = a.shape[1]
    out_arr = np.empty(indices.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, p, c
    cdef idx_t j
    cdef double acc
    with nogil:
        for i in range(n):
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                acc = 0.0
                for c in range(d):
                    acc = acc + a[i, c] * b[j, c]
                out[p] = acc
    return out_arr


def segment_softmax(const idx_t[::1] indptr, const double[::1] e):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    out_arr = np.empty(e.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, p
    cdef double m, s
    with nogil:
        for i in range(n):
            if indptr[i] == indptr[i + 1]:
                continue
            m = e[indptr[i]]
            for p in range(indptr[i] + 1, indptr[i + 1]):
                if e[p] > m:
                    m = e[p]
            s = 0.0
            for p in range(indptr[i], indptr[i + 1]):
                out[p] = exp(e[p] - m)
                s = s + out[p]
            for p in range(indptr[i], indptr[i + 1]):
                out[p] = out[p] / s
    return out_arr


def segment_softmax_backward(const idx_t[::1] indptr, const double[::1] alpha,
                             const double[::1] grad_alpha):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    out_arr = np.empty(alpha.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, p
    cdef double dot
    with nogil:
        for i in range(n):
            dot = 0.0
            for p in range(indptr[i], indptr[i + 1]):
                dot = dot + alpha[p] * grad_alpha[p]
            for p in range(indptr[i], indptr[i + 1]):
                out[p] = alpha[p] * (grad_alpha[p] - dot)
    return out_arr
