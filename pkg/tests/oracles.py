"""Brute-force reference implementations, written against dense matrices and
plain loops so they share no code path with the package."""

import math

import numpy as np


def dense_adjacency(n, pairs):
    a = np.zeros((n, n))
    for u, v in pairs:
        if u != v:
            a[u, v] = a[v, u] = 1.0
    return a


def neighbors(a, i):
    return [j for j in range(a.shape[0]) if a[i, j]]


def normalized(a):
    n = a.shape[0]
    deg = a.sum(axis=1) + 1.0
    out = np.zeros_like(a)
    for i in range(n):
        for j in range(n):
            if i == j or a[i, j]:
                out[i, j] = 1.0 / math.sqrt(deg[i] * deg[j])
    return out


def mean_matrix(a):
    n = a.shape[0]
    m = np.zeros_like(a)
    for i in range(n):
        nb = neighbors(a, i)
        if not nb:
            m[i, i] = 1.0
        for j in nb:
            m[i, j] = 1.0 / len(nb)
    return m


def edge_homophily(a, labels):
    same = total = 0
    n = a.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            if a[i, j]:
                total += 1
                same += labels[i] == labels[j]
    return same / total


def dirichlet_energy_node(a, x, i):
    x = np.asarray(x, dtype=float).reshape(a.shape[0], -1)
    deg = a.sum(axis=1)
    total = 0.0
    for j in neighbors(a, i):
        diff = x[i] / math.sqrt(deg[i]) - x[j] / math.sqrt(deg[j])
        total += float(diff @ diff)
    return total / 4.0


def neighbor_penalty(a, pred, beta):
    pred = np.asarray(pred, dtype=float).reshape(a.shape[0], -1)
    total = 0.0
    for i in range(a.shape[0]):
        for j in neighbors(a, i):
            d = pred[i] - pred[j]
            total += beta[i] * float(d @ d)
    return total


def bias(rho, yhat, y, sigma2=1.0):
    """``rho`` is a dense N x N matrix of rho_ij (zero off the edge set)."""
    n = len(y)
    total = 0.0
    for i in range(n):
        eps = yhat[i]
        rho_sq = 0.0
        for j in range(n):
            eps += rho[i, j] * (y[j] - yhat[j])
            rho_sq += rho[i, j] ** 2
        total += (y[i] - yhat[i]) ** 2 / (2 * sigma2) - (y[i] - eps) ** 2 / (2 * sigma2 * (1 - rho_sq))
    return total


def relu(x):
    return np.where(x > 0, x, 0.0)


def softmax(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def gat_alpha(a, z, att, slope=0.2):
    n, d = z.shape
    alpha = np.zeros((n, n))
    for i in range(n):
        support = sorted(set(neighbors(a, i)) | {i})
        s = np.array([float(att[:d, 0] @ z[i] + att[d:, 0] @ z[j]) for j in support])
        s = np.where(s > 0, s, slope * s)
        e = np.exp(s - s.max())
        alpha[i, support] = e / e.sum()
    return alpha


def layer(kind, params, h, a, act=True, hops=2):
    """One dense backbone layer; ``a`` is the raw adjacency (identity-free)."""
    f = relu if act else (lambda v: v)
    if kind == "gcn":
        return f(normalized(a) @ h @ params["w"])
    if kind == "sgc":
        p = h @ params["w"]
        for _ in range(hops):
            p = normalized(a) @ p
        return p
    if kind == "sage":
        return f(h @ params["w_self"] + mean_matrix(a) @ h @ params["w_neigh"])
    if kind == "gat":
        z = h @ params["w"]
        return f(gat_alpha(a, z, params["att"]) @ z)
    return f(h @ params["w"])


def gnfbc_probs(kind, params_list, x, a, beta):
    """Straight-line per-layer blend of the aware layer and its edgeless twin."""
    empty = np.zeros_like(a)
    h = x
    b = np.asarray(beta, dtype=float)[:, None]
    for idx, params in enumerate(params_list):
        act = idx < len(params_list) - 1 and kind != "sgc"
        aware = layer(kind, params, h, a, act)
        agn = layer(kind, params, h, empty, act)
        h = (1 - b) * aware + b * agn
    return softmax(h)


def numeric_grad(f, arr, h=1e-5):
    """Central differences of scalar ``f()`` with respect to ``arr`` (mutated in place)."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = arr[idx]
        arr[idx] = old + h
        up = f()
        arr[idx] = old - h
        down = f()
        arr[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def rel_err(analytic, numeric):
    scale = max(np.linalg.norm(numeric), np.linalg.norm(analytic), 1e-8)
    return float(np.linalg.norm(analytic - numeric) / scale)
