# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled dense kernels: affine and tanh forward/backward on small float64
matrices. Signatures mirror purecc.kernels._pyref exactly."""

from libc.math cimport tanh as c_tanh

import numpy as np


def affine_fwd(double[:, ::1] x, double[:, ::1] w, b):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t k = x.shape[1]
    cdef Py_ssize_t m = w.shape[0]
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef double[::1] bv
    cdef Py_ssize_t i, j, p
    cdef double acc
    if b is None:
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for p in range(k):
                    acc += x[i, p] * w[j, p]
                y[i, j] = acc
    else:
        bv = b
        for i in range(n):
            for j in range(m):
                acc = bv[j]
                for p in range(k):
                    acc += x[i, p] * w[j, p]
                y[i, j] = acc
    return out


def affine_bwd_x(double[:, ::1] dy, double[:, ::1] w):
    cdef Py_ssize_t n = dy.shape[0]
    cdef Py_ssize_t m = dy.shape[1]
    cdef Py_ssize_t k = w.shape[1]
    out = np.zeros((n, k), dtype=np.float64)
    cdef double[:, ::1] dx = out
    cdef Py_ssize_t i, j, p
    cdef double g
    for i in range(n):
        for j in range(m):
            g = dy[i, j]
            for p in range(k):
                dx[i, p] += g * w[j, p]
    return out


def affine_bwd_w(double[:, ::1] dy, double[:, ::1] x):
    cdef Py_ssize_t n = dy.shape[0]
    cdef Py_ssize_t m = dy.shape[1]
    cdef Py_ssize_t k = x.shape[1]
    out = np.zeros((m, k), dtype=np.float64)
    cdef double[:, ::1] dw = out
    cdef Py_ssize_t i, j, p
    cdef double g
    for i in range(n):
        for j in range(m):
            g = dy[i, j]
            for p in range(k):
                dw[j, p] += g * x[i, p]
    return out


def colsum(double[:, ::1] dy):
    cdef Py_ssize_t n = dy.shape[0]
    cdef Py_ssize_t m = dy.shape[1]
    out = np.zeros(m, dtype=np.float64)
    cdef double[::1] db = out
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(m):
            db[j] += dy[i, j]
    return out


def tanh_fwd(double[:, ::1] z):
    cdef Py_ssize_t n = z.shape[0]
    cdef Py_ssize_t m = z.shape[1]
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] a = out
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(m):
            a[i, j] = c_tanh(z[i, j])
    return out


def tanh_bwd(double[:, ::1] a, double[:, ::1] da):
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t m = a.shape[1]
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] dz = out
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(m):
            dz[i, j] = da[i, j] * (1.0 - a[i, j] * a[i, j])
    return out
