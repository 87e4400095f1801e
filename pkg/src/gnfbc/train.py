"""Training loop, evaluation, ablation sweep and run helpers."""

import csv
import io
import json
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .diagnostics import (
    estimate_rho_global,
    gat_rho_from_attention,
    load_rho_file,
    multiclass_bias,
    residual_variance,
)
from .errors import DimensionError, GnfbcError, NumericalError
from .graph import compute_beta, dirichlet_energies
from .losses import LossConfig, evaluate_predictions, negative_feedback_loss, one_hot
from .models import build_stack, forward_aware, gat_attention, load_weights, save_weights

MODES = ("gnfbc", "gnfbc-no-Lneg", "aware-only", "agnostic-only")
BACKBONES = ("gcn", "sgc", "sage", "gat")


@dataclass(frozen=True)
class TrainConfig:
    backbone: str = "gcn"
    hidden: tuple = (64,)
    epochs: int = 500
    lr: float = 0.01
    patience: int = 20
    lam: float = 1.0
    beta_min: float = 0.05
    beta_max: float = 0.95
    fit_term: str = "cross-entropy"
    penalty_domain: str = "probabilities"
    penalty_nodes: str = "all-nodes"
    penalty_reduction: str = "mean"
    hops: int = 2
    seed: int = 0
    mode: str = "gnfbc"

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise GnfbcError(f"backbone must be one of {BACKBONES}")
        if self.mode not in MODES:
            raise GnfbcError(f"mode must be one of {MODES}")
        if self.epochs < 1 or self.patience < 1:
            raise GnfbcError("epochs and patience must be at least 1")
        if not self.lr > 0:
            raise GnfbcError("learning rate must be positive")
        if self.backbone == "sgc" and self.hidden:
            object.__setattr__(self, "hidden", ())
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def loss_config(self):
        lam = self.lam if self.mode == "gnfbc" else 0.0
        return LossConfig(self.fit_term, lam, self.penalty_domain, self.penalty_nodes, self.penalty_reduction)


@dataclass
class RunRecord:
    config: dict
    train_loss: list = field(default_factory=list)
    val_metrics: list = field(default_factory=list)
    best_epoch: int = -1
    stop_epoch: int = -1
    stopped_by: str = ""
    test: object = None
    epoch_seconds: list = field(default_factory=list)

    def comparable(self):
        """Everything except wall-clock timings."""
        d = asdict(self)
        d.pop("epoch_seconds")
        return d


def training_path(mode):
    return {"aware-only": "aware", "agnostic-only": "agnostic"}.get(mode, "gnfbc")


def inference_path(mode):
    # the agnostic-only baseline has no graph-aware backbone to fall back to
    return "agnostic" if mode == "agnostic-only" else "aware"


def feedback_beta(dataset, cfg):
    """Per-node coefficients for the mode: energy-derived, or pinned to 0 / 1."""
    n = dataset.n_nodes
    if cfg.mode == "aware-only":
        return np.zeros(n)
    if cfg.mode == "agnostic-only":
        return np.ones(n)
    return compute_beta(dirichlet_energies(dataset.graph, dataset.features), cfg.beta_min, cfg.beta_max)


def _check_dims(dataset, stack):
    if dataset.n_features != stack.in_dim:
        raise DimensionError(f"model expects {stack.in_dim} features, dataset has {dataset.n_features}")
    if dataset.n_classes > stack.n_classes:
        raise DimensionError(f"model has {stack.n_classes} outputs, dataset has {dataset.n_classes} classes")


def train(dataset, cfg, log=None):
    """Full-batch training with early stopping on validation accuracy.

    Returns ``(record, stack)``; the stack holds the best-epoch parameters.
    ``log`` receives one dict per epoch.
    """
    rng = np.random.default_rng(cfg.seed)
    dims = [dataset.n_features, *cfg.hidden, dataset.n_classes]
    beta = feedback_beta(dataset, cfg)
    stack = build_stack(cfg.backbone, dims, rng, cfg.hops, beta)
    loss_cfg = cfg.loss_config()
    path = training_path(cfg.mode)
    infer = inference_path(cfg.mode)
    g, x, y = dataset.graph, dataset.features, dataset.labels
    train_mask, val_mask = dataset.mask("train"), dataset.mask("val")

    opt = ad.Adam(stack.parameters(), lr=cfg.lr)
    record = RunRecord(config=asdict(cfg))
    best_acc, best_state = -1.0, stack.state()
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        opt.zero_grad()
        with ad.Tape() as tape:
            logits = stack.logits(x, g, path)
            probs = ad.softmax_rows(logits)
            loss = negative_feedback_loss(probs, y, g, beta, loss_cfg, train_mask, logits)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericalError(f"non-finite loss {value} at epoch {epoch}")
        tape.backward(loss)
        opt.step()
        record.epoch_seconds.append(time.perf_counter() - start)

        val = evaluate_predictions(stack.forward(x, g, infer), y, val_mask, "val", epoch)
        record.train_loss.append(value)
        record.val_metrics.append(asdict(val))
        if log is not None:
            log({"epoch": epoch, "train_loss": value, "val_accuracy": val.accuracy, "val_f1_macro": val.f1_macro})
        record.stop_epoch = epoch
        if val.accuracy > best_acc:
            best_acc, record.best_epoch, best_state = val.accuracy, epoch, stack.state()
        elif epoch - record.best_epoch >= cfg.patience:
            record.stopped_by = "early-stop"
            break
    else:
        record.stopped_by = "max-epochs"

    stack.load_state(best_state)
    probs = stack.forward(x, g, infer)
    record.test = asdict(evaluate_predictions(probs, y, dataset.mask("test"), "test", record.best_epoch))
    return record, stack


def save_run(out_dir, record, stack, log_rows=None):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "metrics.json"), "w") as f:
        f.write(json.dumps(record.test, sort_keys=True) + "\n")
    save_weights(os.path.join(out_dir, "weights.gnfbc"), stack, inference_path(record.config["mode"]))
    if log_rows is not None:
        with open(os.path.join(out_dir, "train_log.jsonl"), "w") as f:
            for row in log_rows:
                f.write(json.dumps(row, sort_keys=True) + "\n")


def predict(dataset, stack, header=None):
    """Inference on the trained backbone; no twin and no blending."""
    _check_dims(dataset, stack)
    path = (header or {}).get("inference", "aware")
    return stack.forward(dataset.features, dataset.graph, path)


def evaluate(dataset, weights_path, split="test"):
    stack, header = load_weights(weights_path)
    probs = predict(dataset, stack, header)
    return evaluate_predictions(probs, dataset.labels, dataset.mask(split), split, -1)


# -- ablation ------------------------------------------------------------------------

ABLATION_FIELDS = ["mode", "seed", "best_epoch", "stop_epoch", "test_accuracy", "test_auc", "test_f1_macro"]


def ablate(dataset_for_seed, base_cfg, seeds, modes=MODES, workers=1):
    """Run each mode on each seed; returns one row dict per (mode, seed).

    ``dataset_for_seed`` maps a seed to the dataset (and split) used for every
    mode at that seed, so all modes see identical data.
    """
    jobs = [(mode, seed) for seed in seeds for mode in modes]

    def run(job):
        mode, seed = job
        rec, _ = train(dataset_for_seed(seed), replace(base_cfg, mode=mode, seed=seed))
        return {
            "mode": mode,
            "seed": seed,
            "best_epoch": rec.best_epoch,
            "stop_epoch": rec.stop_epoch,
            "test_accuracy": rec.test["accuracy"],
            "test_auc": rec.test["auc"],
            "test_f1_macro": rec.test["f1_macro"],
        }

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(run, jobs))
    return [run(job) for job in jobs]


def ablation_csv(rows):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=ABLATION_FIELDS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def mean_accuracy(rows, mode):
    vals = [r["test_accuracy"] for r in rows if r["mode"] == mode]
    return float(np.mean(vals))


# -- analytic cost model ------------------------------------------------------------------


@dataclass(frozen=True)
class ComplexityModel:
    batch_size: int
    fanouts: tuple
    in_dims: tuple
    hidden_dims: tuple

    def __post_init__(self):
        values = [self.batch_size, *self.fanouts, *self.in_dims, *self.hidden_dims]
        if any(v <= 0 for v in values):
            raise GnfbcError("complexity model fields must be positive")
        if not len(self.fanouts) == len(self.in_dims) == len(self.hidden_dims):
            raise GnfbcError("fanouts, in_dims and hidden_dims need one entry per layer")


def complexity_estimate(model, n_layers=None):
    """Sampled-aggregation cost B * sum_l (prod_{i<=l} S_i) d_l h_l and the twin's B * sum_l d_l h_l."""
    L = n_layers or len(model.fanouts)
    aware = 0
    agnostic = 0
    reach = 1
    for l in range(L):
        reach *= model.fanouts[l]
        aware += reach * model.in_dims[l] * model.hidden_dims[l]
        agnostic += model.in_dims[l] * model.hidden_dims[l]
    return {"aware": model.batch_size * aware, "agnostic": model.batch_size * agnostic}


# -- energy and bias runs -----------------------------------------------------------------


def run_energy(dataset, beta_min=0.05, beta_max=0.95):
    """Rows of (node, energy, beta) from the raw features."""
    energy = dirichlet_energies(dataset.graph, dataset.features)
    beta = compute_beta(energy, beta_min, beta_max)
    return [(i, float(e), float(b)) for i, (e, b) in enumerate(zip(energy, beta))]


def energy_csv(rows):
    buf = io.StringIO()
    buf.write("node,energy,beta\n")
    for i, e, b in rows:
        buf.write(f"{i},{e!r},{b!r}\n")
    return buf.getvalue()


def run_bias(dataset, weights_path, rho_source="global", rho_file=None, kappa=None, sigma2=None):
    """Bias report for a trained model's predictions on all nodes."""
    stack, header = load_weights(weights_path)
    probs = predict(dataset, stack, header).data
    g, y = dataset.graph, dataset.labels
    if sigma2 is None:
        sigma2 = 1.0
    elif sigma2 == "residual":
        sigma2 = residual_variance(probs.ravel(), one_hot(y, probs.shape[1]).ravel())
    if rho_source == "global":
        corr = estimate_rho_global(g, y, sigma2)
    elif rho_source == "file":
        if rho_file is None:
            raise GnfbcError("rho source 'file' needs a rho file")
        corr = load_rho_file(rho_file, g, sigma2)
    elif rho_source == "attention":
        if stack.backbone != "gat":
            raise GnfbcError(f"attention-derived rho needs a GAT backbone, model is {stack.backbone}")
        if kappa is None:
            raise GnfbcError("attention rho source needs kappa")
        alpha = _last_layer_attention(stack, dataset)
        corr = gat_rho_from_attention(g, alpha, kappa, sigma2)
    else:
        raise GnfbcError(f"unknown rho source {rho_source!r}")
    report = multiclass_bias(probs, y, corr, kappa)
    report.params.update({"rho_source": rho_source, "kappa": kappa})
    return report


def _last_layer_attention(stack, dataset):
    h = ad.constant(dataset.features)
    for spec, params in zip(stack.layers[:-1], stack.params[:-1]):
        h = forward_aware(spec, params, h, dataset.graph)
    spec, params = stack.layers[-1], stack.params[-1]
    z = ad.matmul(h, params["w"])
    return gat_attention(spec, params, z, dataset.graph).data[:, 0]

