"""Undirected graphs, adjacency normalization, homophily and Dirichlet energy."""

from functools import cached_property

import numpy as np

from . import kernels
from .errors import GnfbcError
from .sparse import CsrMatrix

DEFAULT_BETA_MIN = 0.05
DEFAULT_BETA_MAX = 0.95


class SparseGraph:
    """Simple undirected graph stored as symmetric CSR neighbor lists.

    Neighbor lists are sorted ascending and hold no self-loops or duplicates.
    Instances are immutable after construction.
    """

    def __init__(self, n_nodes, indptr, indices):
        self.n_nodes = int(n_nodes)
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        self.indptr.setflags(write=False)
        self.indices.setflags(write=False)
        if len(self.indptr) != self.n_nodes + 1 or self.indptr[-1] != len(self.indices):
            raise GnfbcError("CSR offsets do not match the neighbor array")

    @property
    def degrees(self):
        return np.diff(self.indptr)

    @property
    def num_edges(self):
        return len(self.indices) // 2

    def neighbors(self, i):
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def edges(self):
        """Undirected edges (u, v) with u < v, as an (|E|, 2) array."""
        rows = self.adjacency.row_ids()
        keep = rows < self.indices
        return np.column_stack([rows[keep], self.indices[keep]])

    @cached_property
    def adjacency(self):
        return CsrMatrix(self.indptr, self.indices, np.ones(len(self.indices)), self.n_nodes, symmetric=True)

    @cached_property
    def normalized(self):
        return normalize_adjacency(self)

    @cached_property
    def with_self_loops(self):
        """Structure of A + I (values all ones), rows sorted ascending."""
        return _add_self_loops(self, np.ones(self.n_nodes), lambda rows, cols: np.ones(len(rows)))

    @cached_property
    def mean_operator(self):
        """Row-stochastic neighbor mean; an isolated node maps to itself."""
        deg = self.degrees
        isolated = np.flatnonzero(deg == 0)
        rows = np.concatenate([self.adjacency.row_ids(), isolated])
        cols = np.concatenate([self.indices, isolated])
        vals = np.concatenate([1.0 / deg[self.adjacency.row_ids()], np.ones(len(isolated))])
        order = np.lexsort((cols, rows))
        indptr = np.concatenate([[0], np.cumsum(np.maximum(deg, 1))])
        return CsrMatrix(indptr, cols[order], vals[order], self.n_nodes)

    def to_dense(self):
        return self.adjacency.to_dense()

    def permute(self, perm):
        """Graph with node ``perm[k]`` renamed to ``k``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        e = self.edges()
        return build_graph(inv[e].tolist(), self.n_nodes)

    def __repr__(self):
        return f"SparseGraph(n_nodes={self.n_nodes}, num_edges={self.num_edges})"


def build_graph(edge_pairs, n_nodes):
    """Symmetric, deduplicated, self-loop-free graph from arbitrary pairs."""
    pairs = np.asarray(list(edge_pairs), dtype=np.int64).reshape(-1, 2)
    if len(pairs) and (pairs.min() < 0 or pairs.max() >= n_nodes):
        bad = pairs[(pairs < 0).any(axis=1) | (pairs >= n_nodes).any(axis=1)][0]
        raise GnfbcError(f"edge ({bad[0]}, {bad[1]}) references a node outside [0, {n_nodes})")
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    both = np.vstack([pairs, pairs[:, ::-1]])
    if len(both):
        both = np.unique(both, axis=0)  # sorted by row then column
    counts = np.bincount(both[:, 0], minlength=n_nodes) if len(both) else np.zeros(n_nodes, dtype=np.int64)
    indptr = np.concatenate([[0], np.cumsum(counts)])
    return SparseGraph(n_nodes, indptr, both[:, 1] if len(both) else np.zeros(0, dtype=np.int64))


def _add_self_loops(g, diag, offdiag):
    n = g.n_nodes
    rows = g.adjacency.row_ids()
    all_rows = np.concatenate([rows, np.arange(n)])
    all_cols = np.concatenate([g.indices, np.arange(n)])
    all_vals = np.concatenate([offdiag(rows, g.indices), diag])
    order = np.lexsort((all_cols, all_rows))
    indptr = np.concatenate([[0], np.cumsum(g.degrees + 1)])
    return CsrMatrix(indptr, all_cols[order], all_vals[order], n, symmetric=True)


def normalize_adjacency(g):
    """D^-1/2 (A + I) D^-1/2 with D = diag(deg + 1)."""
    d = g.degrees + 1.0
    return _add_self_loops(g, 1.0 / d, lambda rows, cols: 1.0 / np.sqrt(d[rows] * d[cols]))


def edge_homophily(g, labels):
    """Fraction of undirected edges whose endpoints share a label."""
    if g.num_edges == 0:
        raise GnfbcError("edge homophily is undefined on a graph with no edges")
    labels = np.asarray(labels)
    e = g.edges()
    return float(np.mean(labels[e[:, 0]] == labels[e[:, 1]]))


def _as_features(x, n):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.shape[0] != n:
        raise GnfbcError(f"features have {x.shape[0]} rows, graph has {n} nodes")
    return x


def dirichlet_energies(g, x):
    """Per-node energy 1/4 sum_{j in N(i)} || x_i/sqrt|N(i)| - x_j/sqrt|N(j)| ||^2."""
    x = _as_features(x, g.n_nodes)
    return kernels.dirichlet_energy(g.indptr, g.indices, x)


def dirichlet_energy_node(g, x, i):
    x = _as_features(x, g.n_nodes)
    nbrs = g.neighbors(i)
    if len(nbrs) == 0:
        return 0.0
    deg = g.degrees
    diff = x[i] / np.sqrt(deg[i]) - x[nbrs] / np.sqrt(deg[nbrs])[:, None]
    return float(0.25 * np.sum(diff * diff))


def dirichlet_energy_directed(n_nodes, arcs, x, in_degrees=None, out_degrees=None):
    """Total energy of a directed graph; arc (u, v) carries information from u into v.

    Each arc contributes || x_v / sqrt(d_in(v)) - x_u / sqrt(d_out(u)) ||^2 / 4.
    Degrees default to those implied by ``arcs`` (deduplicated).
    """
    x = _as_features(x, n_nodes)
    arcs = np.asarray(list(arcs), dtype=np.int64).reshape(-1, 2)
    if len(arcs) == 0:
        return 0.0
    arcs = np.unique(arcs, axis=0)
    src, dst = arcs[:, 0], arcs[:, 1]
    if in_degrees is None:
        in_degrees = np.bincount(dst, minlength=n_nodes)
    if out_degrees is None:
        out_degrees = np.bincount(src, minlength=n_nodes)
    in_degrees = np.asarray(in_degrees, dtype=np.float64)
    out_degrees = np.asarray(out_degrees, dtype=np.float64)
    if np.any(in_degrees[dst] < 1) or np.any(out_degrees[src] < 1):
        raise GnfbcError("an arc references a node with zero in- or out-degree")
    diff = x[dst] / np.sqrt(in_degrees[dst])[:, None] - x[src] / np.sqrt(out_degrees[src])[:, None]
    return float(0.25 * np.sum(diff * diff))


def compute_beta(energies, beta_min=DEFAULT_BETA_MIN, beta_max=DEFAULT_BETA_MAX):
    """Feedback coefficients: 1 - minmax(energy), mapped into [beta_min, beta_max].

    Lower energy gives a larger coefficient. When all energies are equal the
    normalized energy is taken as 0.5 for every node.
    """
    if beta_min > beta_max:
        raise GnfbcError(f"beta_min {beta_min} exceeds beta_max {beta_max}")
    e = np.asarray(energies, dtype=np.float64)
    if e.size == 0:
        raise GnfbcError("need at least one node")
    lo, hi = e.min(), e.max()
    if hi == lo:
        norm = np.full_like(e, 0.5)
    else:
        norm = (e - lo) / (hi - lo)
    t = 1.0 - norm
    # convex form keeps beta_min, beta_max and their midpoint exact
    return (1.0 - t) * beta_min + t * beta_max
