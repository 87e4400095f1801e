"""Negative-feedback loss and evaluation metrics."""

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import cross_entropy, mse_loss
from .errors import GnfbcError

FIT_TERMS = ("cross-entropy", "mse")
PENALTY_DOMAINS = ("probabilities", "logits")
PENALTY_NODE_SETS = ("all-nodes", "train-only")
PENALTY_REDUCTIONS = ("mean", "sum")


@dataclass(frozen=True)
class LossConfig:
    """Loss knobs.

    ``penalty_reduction="sum"`` adds the raw neighbor penalty to the mean fit
    term; ``"mean"`` divides it by the size of the penalized node set so both
    terms are per-node averages.
    """

    fit_term: str = "cross-entropy"
    penalty_scale: float = 1.0
    penalty_domain: str = "probabilities"
    penalty_nodes: str = "all-nodes"
    penalty_reduction: str = "mean"

    def __post_init__(self):
        if self.fit_term not in FIT_TERMS:
            raise GnfbcError(f"fit term must be one of {FIT_TERMS}")
        if self.penalty_domain not in PENALTY_DOMAINS:
            raise GnfbcError(f"penalty domain must be one of {PENALTY_DOMAINS}")
        if self.penalty_nodes not in PENALTY_NODE_SETS:
            raise GnfbcError(f"penalty node set must be one of {PENALTY_NODE_SETS}")
        if self.penalty_reduction not in PENALTY_REDUCTIONS:
            raise GnfbcError(f"penalty reduction must be one of {PENALTY_REDUCTIONS}")
        if not np.isfinite(self.penalty_scale):
            raise GnfbcError("penalty scale must be finite")


def one_hot(labels, n_classes):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def _node_weights(beta, n, node_set):
    if node_set is None:
        return np.asarray(beta, dtype=np.float64)
    node_set = np.asarray(node_set)
    if node_set.dtype == bool:
        keep = node_set
    else:
        keep = np.zeros(n, dtype=bool)
        keep[node_set] = True
    return np.where(keep, np.asarray(beta, dtype=np.float64), 0.0)


def neighbor_penalty(pred, g, beta, node_set=None):
    """sum over i in node_set of beta_i * sum_{j in N(i)} ||pred_i - pred_j||^2.

    Each node sums over its own neighborhood, so an edge between two penalized
    nodes is counted from both ends.
    """
    return ad.neighbor_penalty(pred, g.adjacency, _node_weights(beta, pred.shape[0], node_set))


def fit_term(pred, labels, mask, kind="cross-entropy"):
    """``labels`` holds class ids, or for ``mse`` optionally a dense N x C target."""
    dense = np.ndim(labels) == 2
    if kind == "cross-entropy":
        if dense:
            raise GnfbcError("cross-entropy needs integer class labels, not a dense target")
        return cross_entropy(pred, labels, mask)
    target = np.asarray(labels, dtype=np.float64) if dense else one_hot(labels, pred.shape[1])
    return mse_loss(pred, target, mask)


def negative_feedback_loss(pred, labels, g, beta, cfg, mask, logits=None):
    """Fit term on ``mask`` plus the scaled beta-weighted neighbor penalty."""
    fit = fit_term(pred, labels, mask, cfg.fit_term)
    if cfg.penalty_scale == 0.0:
        return fit
    target = pred
    if cfg.penalty_domain == "logits":
        if logits is None:
            raise GnfbcError("logit-domain penalty needs the logits")
        target = logits
    nodes = mask if cfg.penalty_nodes == "train-only" else None
    penalty = neighbor_penalty(target, g, beta, nodes)
    factor = cfg.penalty_scale
    if cfg.penalty_reduction == "mean":
        count = pred.shape[0] if nodes is None else len(np.flatnonzero(mask) if np.asarray(mask).dtype == bool else mask)
        factor /= count
    return ad.add(fit, ad.scale(penalty, factor))


# -- metrics ---------------------------------------------------------------------


def _scores(pred):
    return pred.data if isinstance(pred, ad.Value) else np.asarray(pred, dtype=np.float64)


def _masked(mask, n):
    mask = np.asarray(mask)
    idx = np.flatnonzero(mask) if mask.dtype == bool else mask.astype(np.int64)
    if len(idx) == 0:
        raise GnfbcError("mask selects no nodes")
    return idx


def predict_labels(pred):
    # argmax returns the first maximum, i.e. the lowest class index on ties
    return np.argmax(_scores(pred), axis=1)


def accuracy(pred, labels, mask):
    p = _scores(pred)
    idx = _masked(mask, len(p))
    return float(np.mean(predict_labels(p)[idx] == np.asarray(labels)[idx]))


def _midranks(x):
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x))
    i = 0
    while i < len(xs):
        j = i
        while j + 1 < len(xs) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc_roc(scores, labels, mask=None):
    """Mann-Whitney AUC with midranks for ties."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if mask is not None:
        idx = _masked(mask, len(scores))
        scores, labels = scores[idx], labels[idx]
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise GnfbcError("AUC needs at least one positive and one negative")
    ranks = _midranks(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def f1_macro(pred, labels, mask, n_classes):
    """Unweighted mean of per-class F1; a class absent from both sides scores 0."""
    p = _scores(pred)
    idx = _masked(mask, len(p))
    yhat = predict_labels(p)[idx] if p.ndim == 2 else np.asarray(p, dtype=np.int64)[idx]
    y = np.asarray(labels)[idx]
    f1 = np.zeros(n_classes)
    for c in range(n_classes):
        tp = np.sum((yhat == c) & (y == c))
        fp = np.sum((yhat == c) & (y != c))
        fn = np.sum((yhat != c) & (y == c))
        if tp > 0:
            f1[c] = 2.0 * tp / (2.0 * tp + fp + fn)
    return float(f1.mean())


@dataclass
class MetricsReport:
    accuracy: float
    auc: float | None
    f1_macro: float
    split: str
    epoch: int

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


def evaluate_predictions(pred, labels, mask, split, epoch):
    p = _scores(pred)
    n_classes = p.shape[1]
    auc = None
    if n_classes == 2:
        idx = _masked(mask, len(p))
        y = np.asarray(labels)[idx]
        if 0 < y.sum() < len(y):
            auc = auc_roc(p[idx, 1], y)
    return MetricsReport(
        accuracy=accuracy(p, labels, mask),
        auc=auc,
        f1_macro=f1_macro(p, labels, mask, n_classes),
        split=split,
        epoch=epoch,
    )
