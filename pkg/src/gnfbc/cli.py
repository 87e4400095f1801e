"""Command-line entry point: ``gnfbc <command> [options]``.

Every command accepts ``--config FILE`` with flat ``key = value`` lines;
explicit flags win over file values, which win over built-in defaults.
Without ``--data-dir`` the data is a synthetic graph built from the
``--n-nodes``/``--homophily``/... options.
"""

import argparse
import json
import os
import sys
from dataclasses import fields, replace

from .data import DEFAULT_RATIOS, SynthConfig, generate_synthetic, load_dataset, make_splits, write_dataset
from .errors import GnfbcError
from .train import (
    BACKBONES,
    MODES,
    ComplexityModel,
    TrainConfig,
    ablate,
    ablation_csv,
    complexity_estimate,
    energy_csv,
    evaluate,
    run_bias,
    run_energy,
    save_run,
    train,
)

SYNTH_KEYS = [f.name for f in fields(SynthConfig) if f.name != "seed"]


class _Parser(argparse.ArgumentParser):
    # usage errors are validation errors: exit 1, leaving 2 for numerical failure
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _int_list(text):
    text = str(text).strip()
    if not text:
        return ()
    try:
        return tuple(int(v) for v in text.replace(" ", "").split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text):
    try:
        return tuple(float(v) for v in str(text).replace(" ", "").split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _seed_list(text):
    """``5`` means seeds 0..4; ``3,7,9`` lists them."""
    values = _int_list(text)
    if len(values) == 1 and "," not in str(text):
        return tuple(range(values[0]))
    return values


def read_config(path):
    """Parse a flat ``key = value`` file; keys are normalized to underscores."""
    out = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise GnfbcError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _add(p, *names, **kw):
    # SUPPRESS keeps unset flags out of the namespace so config values can show through
    p.add_argument(*names, default=argparse.SUPPRESS, **kw)


def _data_options(p):
    _add(p, "--data-dir", help="dataset directory (default: synthetic graph)")
    _add(p, "--split-ratios", type=_float_list, help="train,val,test ratios (default 0.4,0.2,0.4)")
    _add(p, "--n-nodes", type=int)
    _add(p, "--n-classes", type=int)
    _add(p, "--homophily", type=float)
    _add(p, "--mean-degree", type=float)
    _add(p, "--feature-dim", type=int)
    _add(p, "--separation", type=float)
    _add(p, "--noise", type=float)
    _add(p, "--seed", type=int)


def _train_options(p):
    _add(p, "--backbone", choices=BACKBONES)
    _add(p, "--layers", "--hidden", dest="layers", type=_int_list, help="hidden widths, e.g. 64 or 64,32")
    _add(p, "--epochs", type=int)
    _add(p, "--lr", type=float)
    _add(p, "--patience", type=int)
    _add(p, "--lambda", dest="lam", type=float)
    _add(p, "--beta-min", type=float)
    _add(p, "--beta-max", type=float)
    _add(p, "--fit-term", choices=("cross-entropy", "mse"))
    _add(p, "--penalty-domain", choices=("probabilities", "logits"))
    _add(p, "--penalty-nodes", choices=("all-nodes", "train-only"))
    _add(p, "--penalty-reduction", choices=("mean", "sum"))
    _add(p, "--hops", type=int)
    _add(p, "--mode", choices=MODES)


def build_parser():
    parser = _Parser(prog="gnfbc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        _add(p, "--config", help="flat key = value file")
        return p

    p = command("train", "train one model")
    _data_options(p)
    _train_options(p)
    _add(p, "--out", help="output directory")

    p = command("eval", "evaluate a weights file")
    _data_options(p)
    _add(p, "--weights")
    _add(p, "--split", choices=("train", "val", "test"))
    _add(p, "--out", help="directory for metrics.json")

    p = command("ablate", "compare the four modes over several seeds")
    _data_options(p)
    _train_options(p)
    _add(p, "--seeds", type=_seed_list, help="count (5 -> 0..4) or a list 0,3,7")
    _add(p, "--modes", help="comma-separated subset of modes")
    _add(p, "--workers", type=int)
    _add(p, "--out", help="directory for ablation.csv")

    p = command("generate", "write a synthetic dataset directory")
    _data_options(p)
    _add(p, "--out", help="dataset directory to create")

    p = command("energy", "dump per-node Dirichlet energy and beta")
    _data_options(p)
    _add(p, "--beta-min", type=float)
    _add(p, "--beta-max", type=float)
    _add(p, "--out", help="directory for energy.csv")

    p = command("bias", "label-autocorrelation bias of a trained model")
    _data_options(p)
    _add(p, "--weights")
    _add(p, "--rho-source", choices=("global", "file", "attention"))
    _add(p, "--rho-file")
    _add(p, "--kappa", type=float)
    _add(p, "--sigma2", help="a number, or 'residual' to estimate it")
    _add(p, "--out", help="directory for bias.json")

    p = command("complexity", "analytic aggregation cost")
    _add(p, "--batch-size", type=int)
    _add(p, "--fanouts", type=_int_list)
    _add(p, "--in-dims", type=_int_list)
    _add(p, "--hidden-dims", type=_int_list)
    _add(p, "--num-layers", type=int)
    return parser


DEFAULTS = {
    "split_ratios": DEFAULT_RATIOS,
    "seed": 0,
    "split": "test",
    "seeds": tuple(range(5)),
    "workers": 1,
    "rho_source": "global",
    "beta_min": 0.05,
    "beta_max": 0.95,
}

# converters for values that arrive as strings from a config file
CONVERT = {
    "split_ratios": _float_list,
    "layers": _int_list,
    "hidden": _int_list,
    "seeds": _seed_list,
    "fanouts": _int_list,
    "in_dims": _int_list,
    "hidden_dims": _int_list,
    "lambda": float,
    "lam": float,
    "lr": float,
    "beta_min": float,
    "beta_max": float,
    "homophily": float,
    "mean_degree": float,
    "separation": float,
    "noise": float,
    "kappa": float,
    "epochs": int,
    "patience": int,
    "hops": int,
    "seed": int,
    "n_nodes": int,
    "n_classes": int,
    "feature_dim": int,
    "workers": int,
    "batch_size": int,
    "num_layers": int,
}

ALIASES = {"lambda": "lam", "hidden": "layers"}


def resolve_options(args):
    """Merge defaults, the config file and explicit flags (in rising priority)."""
    opts = dict(DEFAULTS)
    given = vars(args)
    if "config" in given:
        for key, value in read_config(given["config"]).items():
            try:
                value = CONVERT.get(key, str)(value)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise GnfbcError(f"{given['config']}: bad value for {key}: {exc}") from None
            opts[ALIASES.get(key, key)] = value
    opts.update({k: v for k, v in given.items() if k != "config"})
    return opts


def _dataset(opts, seed=None):
    seed = opts["seed"] if seed is None else seed
    if "data_dir" in opts:
        return load_dataset(opts["data_dir"], seed=seed, ratios=opts["split_ratios"])
    synth = {k: opts[k] for k in SYNTH_KEYS if k in opts}
    return generate_synthetic(SynthConfig(seed=seed, **synth), opts["split_ratios"])


def _train_config(opts):
    keys = {f.name for f in fields(TrainConfig)}
    kw = {k: v for k, v in opts.items() if k in keys}
    if "layers" in opts:
        kw["hidden"] = opts["layers"]
    return TrainConfig(**kw)


def _require(opts, *keys):
    missing = [k for k in keys if k not in opts]
    if missing:
        raise GnfbcError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _write(out_dir, name, text):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w") as f:
        f.write(text)
    return path


def cmd_train(opts):
    cfg = _train_config(opts)
    rows = []
    record, stack = train(_dataset(opts), cfg, log=rows.append)
    save_run(opts.get("out", "."), record, stack, rows)
    print(json.dumps(record.test, sort_keys=True))
    print(f"best epoch {record.best_epoch}, stopped at {record.stop_epoch} ({record.stopped_by})", file=sys.stderr)


def cmd_eval(opts):
    _require(opts, "weights")
    report = evaluate(_dataset(opts), opts["weights"], opts["split"])
    if "out" in opts:
        _write(opts["out"], "metrics.json", report.to_json() + "\n")
    print(report.to_json())


def cmd_ablate(opts):
    base = _train_config(opts)
    modes = tuple(m.strip() for m in opts["modes"].split(",")) if "modes" in opts else MODES
    unknown = [m for m in modes if m not in MODES]
    if unknown:
        raise GnfbcError(f"unknown mode(s) {unknown}; choose from {MODES}")
    if "data_dir" in opts:
        ds = load_dataset(opts["data_dir"], seed=0, ratios=opts["split_ratios"])

        def for_seed(seed):
            if ds.meta.get("has_splits"):
                return ds
            return replace(ds, splits=make_splits(ds.n_nodes, ds.labels, opts["split_ratios"], seed))

    else:
        def for_seed(seed):
            return _dataset(opts, seed)

    rows = ablate(for_seed, base, opts["seeds"], modes, opts["workers"])
    text = ablation_csv(rows)
    _write(opts.get("out", "."), "ablation.csv", text)
    print(text, end="")


def cmd_generate(opts):
    _require(opts, "out")
    ds = _dataset(opts)
    write_dataset(ds, opts["out"])
    print(f"wrote {ds.n_nodes} nodes, {ds.graph.num_edges} edges to {opts['out']}", file=sys.stderr)


def cmd_energy(opts):
    rows = run_energy(_dataset(opts), opts["beta_min"], opts["beta_max"])
    path = _write(opts.get("out", "."), "energy.csv", energy_csv(rows))
    print(path)


def cmd_bias(opts):
    _require(opts, "weights")
    sigma2 = opts.get("sigma2")
    if sigma2 is not None and sigma2 != "residual":
        try:
            sigma2 = float(sigma2)
        except ValueError:
            raise GnfbcError(f"sigma2 must be a number or 'residual', got {sigma2!r}") from None
    report = run_bias(_dataset(opts), opts["weights"], opts["rho_source"], opts.get("rho_file"), opts.get("kappa"), sigma2)
    path = _write(opts.get("out", "."), "bias.json", report.to_json() + "\n")
    print(json.dumps({"total": report.total, "path": path}))


def cmd_complexity(opts):
    _require(opts, "batch_size", "fanouts", "in_dims", "hidden_dims")
    model = ComplexityModel(opts["batch_size"], opts["fanouts"], opts["in_dims"], opts["hidden_dims"])
    print(json.dumps(complexity_estimate(model, opts.get("num_layers")), sort_keys=True))


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "generate": cmd_generate,
    "energy": cmd_energy,
    "bias": cmd_bias,
    "complexity": cmd_complexity,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        opts = resolve_options(args)
        COMMANDS[args.command](opts)
    except GnfbcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
