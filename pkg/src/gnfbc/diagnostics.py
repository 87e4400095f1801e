"""Bias from label autocorrelation between first-order neighbors.

Targets here are scalar per node. For C classes evaluate each one-hot
column on its own and add up the totals (see :func:`multiclass_bias`).
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, GnfbcError
from .graph import edge_homophily

RHO_SQ_LIMIT = 0.99


@dataclass
class CorrelationModel:
    """Per-entry partial correlations aligned with ``graph.indices``.

    ``rho[e]`` for the stored entry e = (i, j) is rho_ij; rho_ij and rho_ji are
    stored independently.
    """

    graph: object
    rho: np.ndarray
    sigma2: float = 1.0

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=np.float64)
        if self.rho.shape != self.graph.indices.shape:
            raise GnfbcError(f"need one rho per stored entry ({len(self.graph.indices)}), got {self.rho.shape}")
        if not self.sigma2 > 0:
            raise GnfbcError("sigma^2 must be positive")

    @property
    def rho_sq(self):
        """rho_i^2 = sum_{j in N(i)} rho_ij^2."""
        out = np.zeros(self.graph.n_nodes)
        np.add.at(out, self.graph.adjacency.row_ids(), self.rho**2)
        return out


@dataclass
class BiasReport:
    total: float
    per_node: np.ndarray
    eps: np.ndarray
    sigma2: float
    kappa: float | None = None
    params: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(
            {
                "total": self.total,
                "per_node": [float(v) for v in self.per_node],
                "sigma2": self.sigma2,
                "kappa": self.kappa,
                "params": self.params,
            },
            sort_keys=True,
        )


def autocorrelated_error(yhat, y, corr):
    """eps_i = yhat_i + sum_{j in N(i)} rho_ij (y_j - yhat_j)."""
    g = corr.graph
    yhat = np.asarray(yhat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    resid = y - yhat
    contrib = corr.rho * resid[g.indices]
    out = yhat.copy()
    np.add.at(out, g.adjacency.row_ids(), contrib)
    return out


def bias_estimate(yhat, y, corr, kappa=None):
    """sum_i (y_i - yhat_i)^2 / 2s^2 - sum_i (y_i - eps_i)^2 / (2 s^2 (1 - rho_i^2))."""
    rho_sq = corr.rho_sq
    over = np.flatnonzero(rho_sq > RHO_SQ_LIMIT)
    if len(over):
        i = over[0]
        raise GnfbcError(f"rho_i^2 = {rho_sq[i]:.4f} at node {i} exceeds {RHO_SQ_LIMIT}; the bias is singular")
    yhat = np.asarray(yhat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    eps = autocorrelated_error(yhat, y, corr)
    s2 = corr.sigma2
    per_node = (y - yhat) ** 2 / (2.0 * s2) - (y - eps) ** 2 / (2.0 * s2 * (1.0 - rho_sq))
    return BiasReport(float(per_node.sum()), per_node, eps, s2, kappa)


def multiclass_bias(probs, labels, corr, kappa=None):
    """Sum of scalar biases over the one-hot columns."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    reports = [bias_estimate(probs[:, c], (labels == c).astype(float), corr, kappa) for c in range(probs.shape[1])]
    per_node = np.sum([r.per_node for r in reports], axis=0)
    return BiasReport(
        float(sum(r.total for r in reports)),
        per_node,
        np.column_stack([r.eps for r in reports]),
        corr.sigma2,
        kappa,
        {"classes": probs.shape[1]},
    )


def adjusted_correlation(rho, gamma):
    """rho' = rho (1 - gamma)."""
    return np.asarray(rho, dtype=np.float64) * (1.0 - np.asarray(gamma, dtype=np.float64))


def gat_rho_from_attention(g, alpha, kappa, sigma2=1.0):
    """rho_ij = kappa * alpha_ij on neighbor entries.

    ``alpha`` is either aligned with ``g.indices`` or with
    ``g.with_self_loops`` (self terms are dropped either way).
    """
    if kappa < 0:
        raise GnfbcError("kappa must be non-negative")
    alpha = np.asarray(alpha, dtype=np.float64).ravel()
    if len(alpha) == g.with_self_loops.nnz and len(alpha) != len(g.indices):
        s = g.with_self_loops
        alpha = alpha[s.row_ids() != s.indices]
    corr = CorrelationModel(g, kappa * alpha, sigma2)
    rho_sq = corr.rho_sq
    if np.any(rho_sq >= 1.0):
        i = int(np.argmax(rho_sq))
        raise GnfbcError(f"kappa={kappa} gives rho_i^2 = {rho_sq[i]:.4f} >= 1 at node {i}; use a smaller kappa")
    return corr


def estimate_rho_global(g, labels, sigma2=1.0):
    """Uniform rho = clamp(2 * homophily - 1, -0.9, 0.9) on every entry."""
    h = edge_homophily(g, labels)
    rho = float(np.clip(2.0 * h - 1.0, -0.9, 0.9))
    return CorrelationModel(g, np.full(len(g.indices), rho), sigma2)


def residual_variance(yhat, y):
    return float(np.var(np.asarray(y, dtype=np.float64) - np.asarray(yhat, dtype=np.float64), ddof=1))


def load_rho_file(path, g, sigma2=1.0):
    """Entries from lines "u v rho"; unlisted entries are 0. Each line sets rho_uv only."""
    rho = np.zeros(len(g.indices))
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                u, v, r = int(parts[0]), int(parts[1]), float(parts[2])
                if len(parts) != 3:
                    raise ValueError
            except (ValueError, IndexError):
                raise FormatError(f"{path}:{lineno}: expected 'u v rho', got {line!r}") from None
            if not (0 <= u < g.n_nodes):
                raise FormatError(f"{path}:{lineno}: node {u} out of range")
            nbrs = g.neighbors(u)
            pos = np.searchsorted(nbrs, v)
            if pos >= len(nbrs) or nbrs[pos] != v:
                raise FormatError(f"{path}:{lineno}: ({u}, {v}) is not an edge")
            rho[g.indptr[u] + pos] = r
    return CorrelationModel(g, rho, sigma2)
