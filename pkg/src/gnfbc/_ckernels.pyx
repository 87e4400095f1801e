# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled CSR kernels.

Every reduction walks its row in stored order so results are reproducible
run to run. The numpy fallback in ``_pykernels`` has the same signatures.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()


def spmm(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices, const double[::1] data,
         const double[:, ::1] h):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t d = h.shape[1]
    out_arr = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, k, e, j, start, stop
    cdef double v
    for i in range(n):
        start = indptr[i]
        stop = indptr[i + 1]
        if start == stop:
            continue
        # first term assigned, not added, so 1.0 * x reproduces x bit for bit
        j = indices[start]
        v = data[start]
        for k in range(d):
            out[i, k] = v * h[j, k]
        for e in range(start + 1, stop):
            j = indices[e]
            v = data[e]
            for k in range(d):
                out[i, k] += v * h[j, k]
    return out_arr


def edge_dot(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
             const double[:, ::1] a, const double[:, ::1] b):
    """Per stored entry (i, j): <a[i], b[j]>."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t d = a.shape[1]
    out_arr = np.zeros(indices.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, e, j, k
    cdef double acc
    for i in range(n):
        for e in range(indptr[i], indptr[i + 1]):
            j = indices[e]
            acc = 0.0
            for k in range(d):
                acc += a[i, k] * b[j, k]
            out[e] = acc
    return out_arr


def segment_softmax(const cnp.int64_t[::1] indptr, const double[::1] scores):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    out_arr = np.zeros(scores.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, e, start, stop
    cdef double m, total
    for i in range(n):
        start = indptr[i]
        stop = indptr[i + 1]
        if start == stop:
            continue
        m = scores[start]
        for e in range(start + 1, stop):
            if scores[e] > m:
                m = scores[e]
        total = 0.0
        for e in range(start, stop):
            out[e] = exp(scores[e] - m)
            total += out[e]
        for e in range(start, stop):
            out[e] = out[e] / total
    return out_arr


def segment_softmax_backward(const cnp.int64_t[::1] indptr, const double[::1] alpha,
                             const double[::1] grad):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    out_arr = np.zeros(alpha.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, e
    cdef double dot
    for i in range(n):
        dot = 0.0
        for e in range(indptr[i], indptr[i + 1]):
            dot += alpha[e] * grad[e]
        for e in range(indptr[i], indptr[i + 1]):
            out[e] = alpha[e] * (grad[e] - dot)
    return out_arr


def segment_sum(const cnp.int64_t[::1] indptr, const double[::1] values):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, e
    cdef double acc
    for i in range(n):
        acc = 0.0
        for e in range(indptr[i], indptr[i + 1]):
            acc += values[e]
        out[i] = acc
    return out_arr


def scatter_sum(const cnp.int64_t[::1] indices, const double[::1] values, Py_ssize_t n):
    out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t e
    for e in range(indices.shape[0]):
        out[indices[e]] += values[e]
    return out_arr


def neighbor_penalty(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
                     const double[::1] weights, const double[:, ::1] p):
    """sum_i w_i sum_{j in N(i)} ||p_i - p_j||^2"""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t d = p.shape[1]
    cdef Py_ssize_t i, e, j, k
    cdef double total = 0.0, row, diff
    for i in range(n):
        if weights[i] == 0.0:
            continue
        row = 0.0
        for e in range(indptr[i], indptr[i + 1]):
            j = indices[e]
            for k in range(d):
                diff = p[i, k] - p[j, k]
                row += diff * diff
        total += weights[i] * row
    return total


def neighbor_penalty_grad(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
                          const double[::1] weights, const double[:, ::1] p):
    """Gradient of ``neighbor_penalty`` for a symmetric neighbor structure."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t d = p.shape[1]
    out_arr = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, e, j, k
    cdef double c
    for i in range(n):
        for e in range(indptr[i], indptr[i + 1]):
            j = indices[e]
            c = 2.0 * (weights[i] + weights[j])
            if c == 0.0:
                continue
            for k in range(d):
                out[i, k] += c * (p[i, k] - p[j, k])
    return out_arr


def dirichlet_energy(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
                     const double[:, ::1] x):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t d = x.shape[1]
    out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, e, j, k
    cdef double si, sj, acc, diff
    for i in range(n):
        if indptr[i + 1] == indptr[i]:
            continue
        si = sqrt(<double>(indptr[i + 1] - indptr[i]))
        acc = 0.0
        for e in range(indptr[i], indptr[i + 1]):
            j = indices[e]
            sj = sqrt(<double>(indptr[j + 1] - indptr[j]))
            for k in range(d):
                diff = x[i, k] / si - x[j, k] / sj
                acc += diff * diff
        out[i] = 0.25 * acc
    return out_arr


def blend_act(const double[:, ::1] a, const double[:, ::1] b, const double[::1] beta, bint relu):
    """Row i: (1 - beta_i) f(a_i) + beta_i f(b_i) with f = relu or identity."""
    cdef Py_ssize_t n = a.shape[0], d = a.shape[1], i, k
    out_arr = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double w, x, y
    for i in range(n):
        w = beta[i]
        for k in range(d):
            x = a[i, k]
            y = b[i, k]
            if relu:
                if x < 0.0:
                    x = 0.0
                if y < 0.0:
                    y = 0.0
            out[i, k] = (1.0 - w) * x + w * y
    return out_arr


def blend_act_backward(const double[:, ::1] g, const double[:, ::1] a, const double[:, ::1] b,
                       const double[::1] beta, bint relu):
    cdef Py_ssize_t n = a.shape[0], d = a.shape[1], i, k
    # one block for both outputs: two separate large buffers churn mmap every call
    block = np.empty((2, n, d), dtype=np.float64)
    cdef double[:, :, ::1] out = block
    cdef double w, keep
    cdef const double* gp
    cdef const double* ap
    cdef const double* bp
    cdef double* gap
    cdef double* gbp
    for i in range(n):
        w = beta[i]
        keep = 1.0 - w
        gp = &g[i, 0]
        ap = &a[i, 0]
        bp = &b[i, 0]
        gap = &out[0, i, 0]
        gbp = &out[1, i, 0]
        if relu:
            for k in range(d):
                # 0/1 factors rather than branches; signs are close to random
                gap[k] = keep * gp[k] * (ap[k] > 0.0)
                gbp[k] = w * gp[k] * (bp[k] > 0.0)
        else:
            for k in range(d):
                gap[k] = keep * gp[k]
                gbp[k] = w * gp[k]
    return block[0], block[1]
