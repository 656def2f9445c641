# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled batch kernels; mirrors kernels/_pykern.py.

Fuses the per-row loops so no intermediate N-by-K temporaries are allocated.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()


def softmax_rows(logits):
    cdef cnp.ndarray[double, ndim=2, mode="c"] s = np.ascontiguousarray(logits, dtype=np.float64)
    cdef Py_ssize_t n = s.shape[0], k = s.shape[1]
    cdef cnp.ndarray[double, ndim=2, mode="c"] out = np.empty((n, k), dtype=np.float64)
    cdef Py_ssize_t i, j
    cdef double m, tot
    for i in range(n):
        m = s[i, 0]
        for j in range(1, k):
            if s[i, j] > m:
                m = s[i, j]
        tot = 0.0
        for j in range(k):
            out[i, j] = exp(s[i, j] - m)
            tot += out[i, j]
        for j in range(k):
            out[i, j] /= tot
    return out


def softmax_backward_rows(probs, dprobs):
    cdef cnp.ndarray[double, ndim=2, mode="c"] p = np.ascontiguousarray(probs, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] dp = np.ascontiguousarray(dprobs, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], k = p.shape[1]
    cdef cnp.ndarray[double, ndim=2, mode="c"] out = np.empty((n, k), dtype=np.float64)
    cdef Py_ssize_t i, j
    cdef double inner
    for i in range(n):
        inner = 0.0
        for j in range(k):
            inner += p[i, j] * dp[i, j]
        for j in range(k):
            out[i, j] = p[i, j] * (dp[i, j] - inner)
    return out


def entropy_rows(probs, double floor):
    cdef cnp.ndarray[double, ndim=2, mode="c"] p = np.ascontiguousarray(probs, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], k = p.shape[1]
    cdef cnp.ndarray[double, ndim=1, mode="c"] out = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t i, j
    cdef double acc, pj
    for i in range(n):
        acc = 0.0
        for j in range(k):
            pj = p[i, j]
            if pj > floor:
                acc += pj * log(pj)
            else:
                acc += pj * log(floor)
        out[i] = -acc
    return out


def entropy_rows_grad(probs, double floor):
    cdef cnp.ndarray[double, ndim=2, mode="c"] p = np.ascontiguousarray(probs, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], k = p.shape[1]
    cdef cnp.ndarray[double, ndim=2, mode="c"] out = np.empty((n, k), dtype=np.float64)
    cdef Py_ssize_t i, j
    cdef double pj
    for i in range(n):
        for j in range(k):
            pj = p[i, j]
            if pj > floor:
                out[i, j] = -(log(pj) + 1.0)
            else:
                out[i, j] = -log(floor)
    return out
