"""Numpy fallback for the compiled CSR kernels in ``_ckernels.pyx``.

Signatures and semantics match the compiled module; summation order may
differ, so the two backends agree to rounding, not bit for bit.
"""

import numpy as np


def _rows(indptr):
    return np.repeat(np.arange(len(indptr) - 1), np.diff(indptr))


def _segment_reduce(ufunc, indptr, values, n):
    counts = np.diff(indptr)
    nonempty = np.flatnonzero(counts)
    out_shape = (n,) + values.shape[1:]
    out = np.zeros(out_shape, dtype=np.float64)
    if len(nonempty):
        out[nonempty] = ufunc.reduceat(values, indptr[nonempty], axis=0)
    return out


def spmm(indptr, indices, data, h):
    n = len(indptr) - 1
    contrib = data[:, None] * h[indices]
    return _segment_reduce(np.add, indptr, contrib, n)


def edge_dot(indptr, indices, a, b):
    rows = _rows(indptr)
    return np.einsum("ek,ek->e", a[rows], b[indices])


def segment_softmax(indptr, scores):
    n = len(indptr) - 1
    rows = _rows(indptr)
    m = _segment_reduce(np.maximum, indptr, scores, n)
    ex = np.exp(scores - m[rows])
    total = _segment_reduce(np.add, indptr, ex, n)
    return ex / total[rows]


def segment_softmax_backward(indptr, alpha, grad):
    n = len(indptr) - 1
    rows = _rows(indptr)
    dot = _segment_reduce(np.add, indptr, alpha * grad, n)
    return alpha * (grad - dot[rows])


def segment_sum(indptr, values):
    return _segment_reduce(np.add, indptr, values, len(indptr) - 1)


def scatter_sum(indices, values, n):
    return np.bincount(indices, weights=values, minlength=n).astype(np.float64)


def neighbor_penalty(indptr, indices, weights, p):
    rows = _rows(indptr)
    diff = p[rows] - p[indices]
    per_entry = np.einsum("ek,ek->e", diff, diff)
    return float(np.dot(weights, segment_sum(indptr, per_entry)))


def neighbor_penalty_grad(indptr, indices, weights, p):
    rows = _rows(indptr)
    coef = 2.0 * (weights[rows] + weights[indices])
    contrib = coef[:, None] * (p[rows] - p[indices])
    return _segment_reduce(np.add, indptr, contrib, len(indptr) - 1)


def dirichlet_energy(indptr, indices, x):
    deg = np.diff(indptr).astype(np.float64)
    rows = _rows(indptr)
    scale = np.sqrt(deg)
    diff = x[rows] / scale[rows, None] - x[indices] / scale[indices, None]
    per_entry = np.einsum("ek,ek->e", diff, diff)
    return 0.25 * segment_sum(indptr, per_entry)


def blend_act(a, b, beta, relu):
    if relu:
        a = np.maximum(a, 0.0)
        b = np.maximum(b, 0.0)
    w = beta[:, None]
    return (1.0 - w) * a + w * b


def blend_act_backward(g, a, b, beta, relu):
    w = beta[:, None]
    ga = (1.0 - w) * g
    gb = w * g
    if relu:
        ga[a <= 0.0] = 0.0
        gb[b <= 0.0] = 0.0
    return ga, gb
