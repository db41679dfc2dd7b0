# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled inner loops for the backward recursions.

Semantics are defined by the numpy versions in ``_fallback``; both must
agree to rounding.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()

ctypedef cnp.float64_t f64
ctypedef cnp.int64_t i64

cdef double SUP_TIE_REL = 2e-15
cdef double MINIMAX_TIE_REL = 1e-13


def sup_step(const f64[::1] v_next, const i64[:, ::1] child, const f64[:, :, ::1] kernels):
    cdef Py_ssize_t n = child.shape[0]
    cdef Py_ssize_t deg = child.shape[1]
    cdef Py_ssize_t m = kernels.shape[1]
    cdef Py_ssize_t i, j, d
    cdef double acc, absacc, best, scale, tol
    cdef Py_ssize_t best_j
    out = np.empty(n, dtype=np.float64)
    arg = np.empty(n, dtype=np.int64)
    cdef f64[::1] out_v = out
    cdef i64[::1] arg_v = arg
    cdef double[::1] vals = np.empty(max(m, 1), dtype=np.float64)
    for i in range(n):
        best = -1e308
        scale = 1.0
        for j in range(m):
            acc = 0.0
            absacc = 0.0
            for d in range(deg):
                acc = acc + kernels[i, j, d] * v_next[child[i, d]]
                absacc = absacc + fabs(kernels[i, j, d] * v_next[child[i, d]])
            vals[j] = acc
            if acc > best:
                best = acc
            if absacc > scale:
                scale = absacc
        tol = SUP_TIE_REL * scale
        best_j = 0
        for j in range(m):
            if vals[j] >= best - tol:
                best_j = j
                break
        out_v[i] = best
        arg_v[i] = best_j
    return out, arg


def expect_step(const f64[::1] v_next, const i64[:, ::1] child, const f64[:, ::1] weights):
    cdef Py_ssize_t n = child.shape[0]
    cdef Py_ssize_t deg = child.shape[1]
    cdef Py_ssize_t i, d
    cdef double acc
    out = np.empty(n, dtype=np.float64)
    cdef f64[::1] out_v = out
    for i in range(n):
        acc = 0.0
        for d in range(deg):
            acc = acc + weights[i, d] * v_next[child[i, d]]
        out_v[i] = acc
    return out


cdef inline double _objective(double delta, double[::1] a, double[::1] s, Py_ssize_t k):
    cdef double best = -1e308
    cdef double val
    cdef Py_ssize_t d
    for d in range(k):
        val = a[d] - delta * s[d]
        if val > best:
            best = val
    return best


def minimax_step(const f64[::1] v_next, const f64[::1] v_now, const f64[::1] s_next,
                 const f64[::1] s_now, const i64[:, ::1] child, const cnp.uint8_t[:, ::1] support):
    cdef Py_ssize_t n = child.shape[0]
    cdef Py_ssize_t deg = child.shape[1]
    cdef Py_ssize_t i, d, p, q, k
    cdef double cand, val, best_val, best_delta, scale, tol
    cdef bint found
    delta = np.zeros(n, dtype=np.float64)
    resid = np.zeros(n, dtype=np.float64)
    cdef f64[::1] delta_v = delta
    cdef f64[::1] resid_v = resid
    cdef double[::1] a = np.empty(deg, dtype=np.float64)
    cdef double[::1] s = np.empty(deg, dtype=np.float64)
    for i in range(n):
        k = 0
        scale = 1.0
        for d in range(deg):
            if support[i, d]:
                a[k] = v_next[child[i, d]] - v_now[i]
                s[k] = s_next[child[i, d]] - s_now[i]
                if fabs(a[k]) > scale:
                    scale = fabs(a[k])
                k += 1
        if k == 0:
            continue
        tol = MINIMAX_TIE_REL * scale
        # pass 1: optimal value over all candidates
        best_val = _objective(0.0, a, s, k)
        for p in range(k):
            for q in range(p + 1, k):
                if s[p] == s[q]:
                    continue
                cand = (a[p] - a[q]) / (s[p] - s[q])
                val = _objective(cand, a, s, k)
                if val < best_val:
                    best_val = val
        # pass 2: smallest |delta| within tolerance, then the smaller delta
        best_delta = 0.0
        found = _objective(0.0, a, s, k) <= best_val + tol
        for p in range(k):
            for q in range(p + 1, k):
                if s[p] == s[q]:
                    continue
                cand = (a[p] - a[q]) / (s[p] - s[q])
                if _objective(cand, a, s, k) > best_val + tol:
                    continue
                if not found or fabs(cand) < fabs(best_delta) or (
                        fabs(cand) == fabs(best_delta) and cand < best_delta):
                    best_delta = cand
                    found = True
        delta_v[i] = best_delta
        resid_v[i] = _objective(best_delta, a, s, k)
    return delta, resid
