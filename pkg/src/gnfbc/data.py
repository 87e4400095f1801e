"""Dataset files, seeded splits and a synthetic generator with tunable homophily.

A dataset directory holds:

    graph.edges   one "u v" pair per line, 0-indexed, '#' starts a comment
    features.csv  N lines of d comma-separated values
    labels.txt    N lines, one integer class each
    splits.txt    optional; N lines of train / val / test
"""

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, GnfbcError
from .graph import build_graph

SPLIT_NAMES = ("train", "val", "test")
DEFAULT_RATIOS = (0.4, 0.2, 0.4)


@dataclass(eq=False)
class Dataset:
    graph: object
    features: np.ndarray
    labels: np.ndarray
    splits: np.ndarray  # 0 train, 1 val, 2 test
    n_classes: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.splits = np.asarray(self.splits, dtype=np.int64)
        n = self.graph.n_nodes
        for name, arr in (("features", self.features), ("labels", self.labels), ("splits", self.splits)):
            if len(arr) != n:
                raise GnfbcError(f"{name} has {len(arr)} rows, graph has {n} nodes")
        if not self.n_classes:
            self.n_classes = int(self.labels.max()) + 1 if n else 0

    @property
    def n_nodes(self):
        return self.graph.n_nodes

    @property
    def n_features(self):
        return self.features.shape[1]

    def mask(self, split):
        return self.splits == SPLIT_NAMES.index(split)


def make_splits(n, labels=None, ratios=DEFAULT_RATIOS, seed=0):
    """Uniform random (not stratified) split codes.

    Sizes: train = round(r0 * n), val = round(r1 * n), test gets the remainder.
    ``labels`` is accepted for interface symmetry and does not affect the split.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise GnfbcError(f"split ratios must be three non-negative values summing to 1, got {ratios}")
    n_train = min(n, int(math.floor(ratios[0] * n + 0.5)))
    n_val = min(n - n_train, int(math.floor(ratios[1] * n + 0.5)))
    perm = np.random.default_rng(seed).permutation(n)
    splits = np.full(n, 2, dtype=np.int64)
    splits[perm[:n_train]] = 0
    splits[perm[n_train : n_train + n_val]] = 1
    return splits


# -- files --------------------------------------------------------------------------


def _content_lines(path):
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line


def _read_edges(path):
    pairs = []
    for lineno, line in _content_lines(path):
        parts = line.split()
        if len(parts) != 2:
            raise FormatError(f"{path}:{lineno}: expected 'u v', got {line!r}")
        try:
            pairs.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise FormatError(f"{path}:{lineno}: node ids must be integers, got {line!r}") from None
    return pairs


def _read_features(path):
    rows = []
    width = None
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                row = [float(v) for v in line.split(",")]
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric feature value") from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise FormatError(f"{path}:{lineno}: expected {width} values, got {len(row)}")
            rows.append(row)
    arr = np.array(rows, dtype=np.float64).reshape(len(rows), width or 0)
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{path}: features must be finite")
    return arr


def _read_labels(path):
    out = []
    for lineno, line in _content_lines(path):
        try:
            v = int(line)
        except ValueError:
            raise FormatError(f"{path}:{lineno}: label must be an integer, got {line!r}") from None
        if v < 0:
            raise FormatError(f"{path}:{lineno}: label {v} out of range")
        out.append(v)
    return np.array(out, dtype=np.int64)


def _read_splits(path):
    out = []
    for lineno, line in _content_lines(path):
        if line not in SPLIT_NAMES:
            raise FormatError(f"{path}:{lineno}: split must be train, val or test, got {line!r}")
        out.append(SPLIT_NAMES.index(line))
    return np.array(out, dtype=np.int64)


def load_dataset(path, seed=0, ratios=DEFAULT_RATIOS, n_classes=None):
    """Read and validate a dataset directory; missing splits are drawn with ``seed``."""
    files = {name: os.path.join(path, name) for name in ("graph.edges", "features.csv", "labels.txt", "splits.txt")}
    for name in ("graph.edges", "features.csv", "labels.txt"):
        if not os.path.exists(files[name]):
            raise FormatError(f"{path}: missing {name}")
    features = _read_features(files["features.csv"])
    labels = _read_labels(files["labels.txt"])
    n = len(features)
    if len(labels) != n:
        raise FormatError(f"features.csv has {n} rows but labels.txt has {len(labels)}")
    if n_classes is not None and len(labels) and labels.max() >= n_classes:
        raise FormatError(f"labels.txt: label {labels.max()} out of range for {n_classes} classes")
    pairs = _read_edges(files["graph.edges"])
    for k, (u, v) in enumerate(pairs):
        if not (0 <= u < n and 0 <= v < n):
            raise FormatError(f"graph.edges: pair ({u}, {v}) references a node outside [0, {n})")
    graph = build_graph(pairs, n)
    has_splits = os.path.exists(files["splits.txt"])
    if has_splits:
        splits = _read_splits(files["splits.txt"])
        if len(splits) != n:
            raise FormatError(f"features.csv has {n} rows but splits.txt has {len(splits)}")
    else:
        splits = make_splits(n, labels, ratios, seed)
    return Dataset(graph, features, labels, splits, n_classes or 0, meta={"edge_lines": len(pairs), "has_splits": has_splits})


def write_dataset(ds, path):
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "graph.edges"), "w") as f:
        for u, v in ds.graph.edges():
            f.write(f"{u} {v}\n")
    np.savetxt(os.path.join(path, "features.csv"), ds.features, fmt="%.17g", delimiter=",")
    with open(os.path.join(path, "labels.txt"), "w") as f:
        f.writelines(f"{y}\n" for y in ds.labels)
    with open(os.path.join(path, "splits.txt"), "w") as f:
        f.writelines(f"{SPLIT_NAMES[s]}\n" for s in ds.splits)


# -- synthetic graphs -------------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    n_nodes: int = 1000
    n_classes: int = 4
    homophily: float = 0.5
    mean_degree: float = 10.0
    feature_dim: int = 16
    separation: float = 1.0
    noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.n_nodes >= self.n_classes >= 2:
            raise GnfbcError("need n_nodes >= n_classes >= 2")
        if self.mean_degree < 1:
            raise GnfbcError("mean degree must be at least 1")
        if not 0.0 <= self.homophily <= 1.0:
            raise GnfbcError("homophily must lie in [0, 1]")
        if self.feature_dim < self.n_classes:
            raise GnfbcError("feature_dim must be at least n_classes (one mean axis per class)")


def _sample_pairs(rng, labels, count, same, capacity, taken):
    """``count`` new undirected pairs, uniform over pairs whose label agreement equals ``same``."""
    n = len(labels)
    chosen = []
    if count == 0:
        return chosen
    if 2 * count > capacity:
        # dense request: enumerate the admissible pairs and draw without replacement
        u, v = np.triu_indices(n, k=1)
        ok = (labels[u] == labels[v]) == same
        keys = u[ok] * n + v[ok]
        keys = keys[~np.isin(keys, np.fromiter(taken, dtype=np.int64, count=len(taken)))]
        picks = rng.choice(keys, size=count, replace=False)
        chosen = [(int(k // n), int(k % n)) for k in np.sort(picks)]
        taken.update(int(k) for k in picks)
        return chosen
    while len(chosen) < count:
        batch = rng.integers(0, n, size=(4 * (count - len(chosen)) + 16, 2))
        for a, b in batch:
            if a == b or (labels[a] == labels[b]) != same:
                continue
            u, v = (a, b) if a < b else (b, a)
            key = int(u) * n + int(v)
            if key in taken:
                continue
            taken.add(key)
            chosen.append((int(u), int(v)))
            if len(chosen) == count:
                break
    return chosen


def generate_synthetic(cfg, ratios=DEFAULT_RATIOS):
    """Planted-partition graph with Gaussian class-mean features.

    Each of ceil(N * mean_degree / 2) edges joins same-class endpoints with
    probability ``homophily``; pairs are uniform among admissible ones. Class
    ``c`` has mean ``separation * e_c``.
    """
    rng = np.random.default_rng(cfg.seed)
    n, c = cfg.n_nodes, cfg.n_classes
    labels = rng.integers(0, c, size=n)
    m = int(math.ceil(n * cfg.mean_degree / 2.0))
    sizes = np.bincount(labels, minlength=c)
    same_cap = int(np.sum(sizes * (sizes - 1) // 2))
    cross_cap = n * (n - 1) // 2 - same_cap
    n_same = int(rng.binomial(m, cfg.homophily))
    n_cross = m - n_same
    if n_same > same_cap or n_cross > cross_cap:
        raise GnfbcError(
            f"cannot place {n_same} same-class and {n_cross} cross-class edges "
            f"(capacity {same_cap} and {cross_cap})"
        )
    taken = set()
    pairs = _sample_pairs(rng, labels, n_same, True, same_cap, taken)
    pairs += _sample_pairs(rng, labels, n_cross, False, cross_cap, taken)
    features = cfg.noise * rng.standard_normal((n, cfg.feature_dim))
    features[np.arange(n), labels] += cfg.separation
    graph = build_graph(pairs, n)
    splits = make_splits(n, labels, ratios, cfg.seed)
    return Dataset(graph, features, labels, splits, c, meta={"synth": cfg})
