"""Tape-based reverse-mode differentiation over dense float64 matrices.

Operations record onto the innermost active :class:`Tape`. Outside a tape
they evaluate eagerly and nothing is recorded, which is how inference runs.

    with Tape() as tape:
        loss = cross_entropy(softmax_rows(matmul(x, w)), labels, mask)
    tape.backward(loss)
"""

import threading
from collections import Counter

import numpy as np

from . import kernels
from .errors import DimensionError, GnfbcError

LOG_CLAMP = 1e-12

_local = threading.local()


def _tapes():
    # per-thread so concurrent training runs never share a tape
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


class Value:
    """A matrix payload and its gradient.

    The gradient is allocated on first use and reads as zeros before that.
    """

    __slots__ = ("data", "_grad", "requires_grad", "tape_id", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        elif arr.ndim != 2:
            raise DimensionError(f"Value must be 2-D, got shape {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        self._grad = None
        self.requires_grad = requires_grad
        self.tape_id = None
        self.name = name

    @classmethod
    def _wrap(cls, arr, requires_grad):
        # fresh op output: no copy, no validation
        v = cls.__new__(cls)
        v.data = arr
        v._grad = None
        v.requires_grad = requires_grad
        v.tape_id = None
        v.name = None
        return v

    @property
    def shape(self):
        return self.data.shape

    @property
    def grad(self):
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = value

    def zero_grad(self):
        self._grad = None

    def _accumulate(self, g):
        # never mutates g: backward rules may hand the same array to several inputs
        self._grad = g if self._grad is None else self._grad + g

    def item(self):
        if self.data.size != 1:
            raise DimensionError(f"item() needs a 1x1 value, got {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Value{label}(shape={self.shape})"


def parameter(data, name=None):
    return Value(data, requires_grad=True, name=name)


def constant(data):
    if isinstance(data, Value):
        return data
    return Value(data, requires_grad=False)


class _Node:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of operations, replayed in reverse by :meth:`backward`."""

    def __init__(self):
        self.nodes = []
        self.consumed = False
        self.visits = 0

    def __enter__(self):
        _tapes().append(self)
        return self

    def __exit__(self, *exc):
        _tapes().remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, op, inputs, output, backward):
        output.tape_id = len(self.nodes)
        self.nodes.append(_Node(op, inputs, output, backward))

    def op_counts(self):
        return Counter(node.op for node in self.nodes)

    def backward(self, loss):
        if self.consumed:
            raise GnfbcError("backward already ran on this tape; build a new tape")
        if loss.shape != (1, 1):
            raise DimensionError(f"loss must be 1x1, got {loss.shape}")
        if not self.nodes or self.nodes[-1].output is not loss:
            raise GnfbcError("loss must be the final node recorded on the tape")
        for node in self.nodes:
            for v in node.inputs:
                if v.tape_id is None and v.requires_grad and v._grad is not None and np.any(v._grad):
                    raise GnfbcError(
                        f"gradient of {v!r} is not zero; call zero_grad() before backward"
                    )
        self.consumed = True
        loss.grad = np.ones((1, 1))
        self.visits = 0
        for node in reversed(self.nodes):
            self.visits += 1
            needs = tuple(v.requires_grad for v in node.inputs)
            if not any(needs) or node.output._grad is None:
                continue
            grads = node.backward(node.output._grad, needs)
            for v, g, need in zip(node.inputs, grads, needs):
                if need and g is not None:
                    v._accumulate(g)


def backward(tape, loss):
    tape.backward(loss)


def _emit(op, inputs, out_data, backward):
    out = Value._wrap(out_data, any(v.requires_grad for v in inputs))
    tapes = _tapes()
    if tapes and out.requires_grad:
        tapes[-1].record(op, inputs, out, backward)
    elif tapes:
        # constant subgraph; still recorded so op counts see it
        tapes[-1].record(op, inputs, out, lambda g, needs: (None,) * len(inputs))
    return out


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- elementwise and reductions ---------------------------------------------


def add(a, b):
    _same_shape("add", a, b)
    return _emit("add", (a, b), a.data + b.data, lambda g, needs: (g, g))


def sub(a, b):
    _same_shape("sub", a, b)
    return _emit("sub", (a, b), a.data - b.data, lambda g, needs: (g, -g))


def mul(a, b):
    _same_shape("mul", a, b)
    return _emit("mul", (a, b), a.data * b.data, lambda g, needs: (g * b.data, g * a.data))


def scale(a, c):
    c = float(c)
    return _emit("scale", (a,), a.data * c, lambda g, needs: (g * c,))


def sum_all(a):
    return _emit("sum", (a,), np.array([[a.data.sum()]]), lambda g, needs: (np.full(a.shape, g[0, 0]),))


def relu(x):
    out = np.maximum(x.data, 0.0)
    return _emit("relu", (x,), out, lambda g, needs: (g * (out > 0),))


def leaky_relu(x, slope=0.2):
    mask = x.data > 0
    factor = np.where(mask, 1.0, slope)
    return _emit("leaky_relu", (x,), x.data * factor, lambda g, needs: (g * factor,))


def activate(x, activation):
    if activation == "relu":
        return relu(x)
    if activation in (None, "none"):
        return x
    raise ValueError(f"unknown activation {activation!r}")


def softmax_rows(x):
    if x.shape[1] < 1:
        raise DimensionError("softmax_rows needs at least one column")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    p = ex / ex.sum(axis=1, keepdims=True)

    def back(g, needs):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return _emit("softmax", (x,), p, back)


def row_blend(aware, agnostic, beta):
    """Row i: (1 - beta_i) * aware_i + beta_i * agnostic_i."""
    _same_shape("row_blend", aware, agnostic)
    beta = np.asarray(beta, dtype=np.float64).reshape(-1, 1)
    if beta.shape[0] != aware.shape[0]:
        raise DimensionError(
            f"row_blend: beta has length {beta.shape[0]}, inputs have {aware.shape[0]} rows"
        )
    keep = 1.0 - beta
    out = keep * aware.data + beta * agnostic.data
    return _emit("blend", (aware, agnostic), out, lambda g, needs: (keep * g, beta * g))


def blend_activate(aware, agnostic, beta, activation="relu"):
    """``row_blend(activate(aware), activate(agnostic), beta)`` as one fused op."""
    _same_shape("blend_activate", aware, agnostic)
    if activation not in ("relu", None, "none"):
        raise ValueError(f"unknown activation {activation!r}")
    beta = np.ascontiguousarray(beta, dtype=np.float64).ravel()
    if beta.shape[0] != aware.shape[0]:
        raise DimensionError(
            f"blend_activate: beta has length {beta.shape[0]}, inputs have {aware.shape[0]} rows"
        )
    relu_on = activation == "relu"
    a, b = aware.data, agnostic.data
    out = kernels.blend_act(a, b, beta, relu_on)

    def back(g, needs):
        return kernels.blend_act_backward(np.ascontiguousarray(g), a, b, beta, relu_on)

    return _emit("blend", (aware, agnostic), out, back)


# -- products ----------------------------------------------------------------


def matmul(a, b):
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not chain")

    def back(g, needs):
        ga = g @ b.data.T if needs[0] else None
        gb = a.data.T @ g if needs[1] else None
        return ga, gb

    return _emit("matmul", (a, b), a.data @ b.data, back)


def spmm(adj, h):
    """``adj @ h`` for a constant CSR matrix."""
    if adj.n_cols != h.shape[0]:
        raise DimensionError(f"spmm: adjacency is {adj.shape}, features have {h.shape[0]} rows")
    out = kernels.spmm(adj.indptr, adj.indices, adj.data, h.data)
    adj_t = adj.transpose()

    def back(g, needs):
        return (kernels.spmm(adj_t.indptr, adj_t.indices, adj_t.data, np.ascontiguousarray(g)),)

    return _emit("spmm", (h,), out, back)


def edge_spmm(struct, weights, h):
    """``A @ h`` where A has sparsity ``struct`` and entries from the E x 1 ``weights``."""
    if weights.shape != (struct.nnz, 1):
        raise DimensionError(f"edge_spmm: weights {weights.shape} vs {struct.nnz} entries")
    if struct.n_cols != h.shape[0]:
        raise DimensionError(f"edge_spmm: structure is {struct.shape}, features have {h.shape[0]} rows")
    w = np.ascontiguousarray(weights.data[:, 0])
    out = kernels.spmm(struct.indptr, struct.indices, w, h.data)

    def back(g, needs):
        g = np.ascontiguousarray(g)
        gw = gh = None
        if needs[0]:
            gw = kernels.edge_dot(struct.indptr, struct.indices, g, h.data)[:, None]
        if needs[1]:
            t = struct.transpose()
            perm = struct.transpose_permutation()
            gh = kernels.spmm(t.indptr, t.indices, np.ascontiguousarray(w[perm]), g)
        return gw, gh

    return _emit("edge_spmm", (weights, h), out, back)


def edge_scores(struct, z, att):
    """Per stored entry (i, j): att[:d] . z_i + att[d:] . z_j, as an E x 1 value."""
    d = z.shape[1]
    if att.shape != (2 * d, 1):
        raise DimensionError(f"edge_scores: attention vector {att.shape}, expected {(2 * d, 1)}")
    rows = struct.row_ids()
    s_src = z.data @ att.data[:d]
    s_dst = z.data @ att.data[d:]
    out = s_src[rows] + s_dst[struct.indices]

    def back(g, needs):
        ge = np.ascontiguousarray(g[:, 0])
        g_src = kernels.segment_sum(struct.indptr, ge)[:, None]
        g_dst = kernels.scatter_sum(struct.indices, ge, z.shape[0])[:, None]
        gz = g_src @ att.data[:d].T + g_dst @ att.data[d:].T if needs[0] else None
        ga = None
        if needs[1]:
            ga = np.vstack([z.data.T @ g_src, z.data.T @ g_dst])
        return gz, ga

    return _emit("edge_scores", (z, att), out, back)


def segment_softmax(struct, scores):
    """Softmax of an E x 1 score column within each CSR row."""
    if scores.shape != (struct.nnz, 1):
        raise DimensionError(f"segment_softmax: scores {scores.shape} vs {struct.nnz} entries")
    alpha = kernels.segment_softmax(struct.indptr, np.ascontiguousarray(scores.data[:, 0]))

    def back(g, needs):
        ge = np.ascontiguousarray(g[:, 0])
        return (kernels.segment_softmax_backward(struct.indptr, alpha, ge)[:, None],)

    return _emit("segment_softmax", (scores,), alpha[:, None], back)


# -- losses --------------------------------------------------------------------


def _mask_indices(mask, n):
    mask = np.asarray(mask)
    idx = np.flatnonzero(mask) if mask.dtype == bool else mask.astype(np.int64)
    if mask.dtype == bool and len(mask) != n:
        raise DimensionError(f"mask has length {len(mask)}, expected {n}")
    if len(idx) == 0:
        raise GnfbcError("mask selects no nodes")
    return idx


def cross_entropy(probs, labels, mask):
    """Mean of -log p[i, y_i] over masked nodes, with p clamped at 1e-12."""
    n, c = probs.shape
    idx = _mask_indices(mask, n)
    y = np.asarray(labels, dtype=np.int64)[idx]
    if np.any((y < 0) | (y >= c)):
        bad = y[(y < 0) | (y >= c)][0]
        raise GnfbcError(f"label {bad} outside [0, {c})")
    picked = probs.data[idx, y]
    clamped = np.maximum(picked, LOG_CLAMP)
    value = -np.log(clamped).mean()

    def back(g, needs):
        grad = np.zeros_like(probs.data)
        live = picked >= LOG_CLAMP
        np.add.at(grad, (idx[live], y[live]), -g[0, 0] / (len(idx) * picked[live]))
        return (grad,)

    return _emit("cross_entropy", (probs,), np.array([[value]]), back)


def mse_loss(pred, target, mask):
    """Mean over masked nodes of the squared row error ||pred_i - target_i||^2."""
    target = np.asarray(target.data if isinstance(target, Value) else target, dtype=np.float64)
    if target.shape != pred.shape:
        raise DimensionError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    idx = _mask_indices(mask, pred.shape[0])
    diff = pred.data[idx] - target[idx]
    value = np.einsum("ij,ij->", diff, diff) / len(idx)

    def back(g, needs):
        grad = np.zeros_like(pred.data)
        grad[idx] = 2.0 * g[0, 0] * diff / len(idx)
        return (grad,)

    return _emit("mse", (pred,), np.array([[value]]), back)


def neighbor_penalty(pred, adj, weights):
    """sum_i w_i sum_{j in N(i)} ||pred_i - pred_j||^2 over a symmetric structure."""
    w = np.ascontiguousarray(weights, dtype=np.float64)
    if len(w) != pred.shape[0] or adj.n_rows != pred.shape[0]:
        raise DimensionError(
            f"neighbor_penalty: {pred.shape[0]} rows, {len(w)} weights, {adj.n_rows} graph nodes"
        )
    value = kernels.neighbor_penalty(adj.indptr, adj.indices, w, pred.data)

    def back(g, needs):
        return (g[0, 0] * kernels.neighbor_penalty_grad(adj.indptr, adj.indices, w, pred.data),)

    return _emit("neighbor_penalty", (pred,), np.array([[value]]), back)


# -- initialization and optimization ---------------------------------------------


def xavier_init(rng, fan_in, fan_out):
    """Glorot-uniform matrix of shape (fan_in, fan_out), gain 1."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"fans must be positive, got ({fan_in}, {fan_out})")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Adam:
    """Adam with bias correction. Moments are zero until the first step."""

    def __init__(self, params, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        for p, m in zip(self.params, self.m):
            if p.grad.shape != m.shape:
                raise DimensionError(f"Adam state {m.shape} does not match parameter {p.shape}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
