"""Command-line interface: gen-data, cluster, train, eval.

Every run resolves one nested configuration (defaults <- optional JSON
config file <- explicit flags), writes it back out as ``manifest.json``,
and derives all randomness from the single ``seed`` entry, so re-running
from a manifest reproduces results byte for byte.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import data as dat
from . import encoder as enc
from .evaluation import evaluate
from .infomap import cluster as infomap_cluster
from .infomap import save_partition_csv
from .losses import LossConfig
from .simgraph import GraphConfig, build_consolidated_graph
from .trainer import TrainConfig, TrainingDiverged, derive_rngs, run

__all__ = ["main"]

_PRESET_TAU_F = {"generic": 0.7, "fine-grained": 0.6}

_TRAIN_KEYS = (
    "max_epoch",
    "tau_i",
    "n_c",
    "n_i",
    "instance_batch",
    "lr_extractor",
    "lr_head",
    "sgd_momentum",
    "eta",
    "augment_strength",
    "renorm_memory",
    "use_instance_loss",
    "use_conception_loss",
    "use_dispersion_loss",
    "use_momentum_update",
    "use_consolidation",
)


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that exits with status 1 on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def default_config() -> dict:
    tc = TrainConfig()
    return {
        "seed": 0,
        "threads": None,
        "output": ".",
        "data": {"embeddings": None, "labels": None, "truth": None, "format": "binary"},
        "train": {key: getattr(tc, key) for key in _TRAIN_KEYS},
        "loss": dataclasses.asdict(tc.loss),
        "graph": dataclasses.asdict(tc.graph),
        "encoder": dataclasses.asdict(tc.encoder),
        "eval": {"k": None, "max_iter": 100},
    }


def _merge_config(base: dict, override: dict, path: str = "") -> None:
    for key, value in override.items():
        if key not in base:
            raise ValueError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            _merge_config(base[key], value, path=f"{path}{key}.")
        else:
            base[key] = value


# flag dest -> (section, key); section None means top level.
_TRAIN_FLAG_MAP = {
    "seed": (None, "seed"),
    "threads": (None, "threads"),
    "outdir": (None, "output"),
    "embeddings": ("data", "embeddings"),
    "labels": ("data", "labels"),
    "truth": ("data", "truth"),
    "format": ("data", "format"),
    "max_epoch": ("train", "max_epoch"),
    "tau_i": ("train", "tau_i"),
    "n_c": ("train", "n_c"),
    "n_i": ("train", "n_i"),
    "batch": ("train", "instance_batch"),
    "lr_extractor": ("train", "lr_extractor"),
    "lr_head": ("train", "lr_head"),
    "sgd_momentum": ("train", "sgd_momentum"),
    "eta": ("train", "eta"),
    "augment_strength": ("train", "augment_strength"),
    "renorm_memory": ("train", "renorm_memory"),
    "instance_loss": ("train", "use_instance_loss"),
    "conception_loss": ("train", "use_conception_loss"),
    "dispersion_loss": ("train", "use_dispersion_loss"),
    "momentum_update": ("train", "use_momentum_update"),
    "consolidation": ("train", "use_consolidation"),
    "lam": ("loss", "lam"),
    "tau_c": ("loss", "tau_c"),
    "tau_s": ("loss", "tau_s"),
    "tau_l": ("loss", "tau_l"),
    "tau_m": ("loss", "tau_m"),
    "alpha": ("loss", "alpha"),
    "beta": ("loss", "beta"),
    "include_positive_in_denominator": ("loss", "include_positive_in_denominator"),
    "dispersion_diagonal": ("loss", "dispersion_include_diagonal"),
    "tau_f": ("graph", "tau_f"),
    "knn_k": ("graph", "knn_k"),
    "hidden_dim": ("encoder", "hidden_dim"),
    "feature_dim": ("encoder", "feature_dim"),
    "head_hidden_dim": ("encoder", "head_hidden_dim"),
    "projection_dim": ("encoder", "projection_dim"),
    "k": ("eval", "k"),
    "eval_max_iter": ("eval", "max_iter"),
}


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    boolact = argparse.BooleanOptionalAction
    p.add_argument("--config", type=str, help="JSON config/manifest; flags override it")
    p.add_argument("--embeddings", type=str)
    p.add_argument("--labels", type=str)
    p.add_argument("--truth", type=str, help="ground-truth labels CSV (evaluation only)")
    p.add_argument("--format", choices=("binary", "csv"))
    p.add_argument("--outdir", type=str)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--max-epoch", type=int)
    p.add_argument("--tau-i", type=int)
    p.add_argument("--n-c", type=int)
    p.add_argument("--n-i", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr-extractor", type=float)
    p.add_argument("--lr-head", type=float)
    p.add_argument("--sgd-momentum", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--augment-strength", type=float)
    p.add_argument("--lam", type=float)
    p.add_argument("--tau-c", type=float)
    p.add_argument("--tau-s", type=float)
    p.add_argument("--tau-l", type=float)
    p.add_argument("--tau-m", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--tau-f", type=float)
    p.add_argument("--knn-k", type=int)
    p.add_argument("--preset", choices=sorted(_PRESET_TAU_F))
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--feature-dim", type=int)
    p.add_argument("--head-hidden-dim", type=int)
    p.add_argument("--projection-dim", type=int)
    p.add_argument("--k", type=int, help="evaluation cluster count (default: final K)")
    p.add_argument("--eval-max-iter", type=int)
    p.add_argument("--instance-loss", action=boolact, default=None)
    p.add_argument("--conception-loss", action=boolact, default=None)
    p.add_argument("--dispersion-loss", action=boolact, default=None)
    p.add_argument("--momentum-update", action=boolact, default=None)
    p.add_argument("--consolidation", action=boolact, default=None)
    p.add_argument("--renorm-memory", action=boolact, default=None)
    p.add_argument("--include-positive-in-denominator", action=boolact, default=None)
    p.add_argument("--dispersion-diagonal", action=boolact, default=None)


def resolve_train_config(args) -> dict:
    config = default_config()
    if args.config:
        with open(args.config) as fh:
            _merge_config(config, json.load(fh))
    if getattr(args, "preset", None):
        config["graph"]["tau_f"] = _PRESET_TAU_F[args.preset]
    for dest, (section, key) in _TRAIN_FLAG_MAP.items():
        value = getattr(args, dest, None)
        if value is not None:
            if section is None:
                config[key] = value
            else:
                config[section][key] = value
    return config


def _train_config_from(config: dict) -> TrainConfig:
    return TrainConfig(
        **config["train"],
        seed=config["seed"],
        loss=LossConfig(**config["loss"]),
        graph=GraphConfig(**config["graph"]),
        encoder=enc.EncoderConfig(**config["encoder"]),
    )


def _threads_context(threads):
    if threads is None:
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return contextlib.nullcontext()
    return threadpool_limits(limits=int(threads))


def _load_dataset(config: dict) -> dat.GcdDataset:
    paths = config["data"]
    if not paths["embeddings"] or not paths["labels"]:
        raise ValueError("train requires --embeddings and --labels (or a config providing them)")
    embeddings = dat.load_embeddings(paths["embeddings"], fmt=paths["format"])
    labels = dat.load_labels(paths["labels"], embeddings.count)
    truth = None
    if paths["truth"]:
        truth = dat.load_labels(paths["truth"], embeddings.count)
    return dat.GcdDataset(embeddings=embeddings, labels=labels, eval_labels=truth)


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_gen_data(args) -> int:
    embeddings, class_labels = dat.generate_synthetic(
        num_superclasses=args.num_superclasses,
        classes_per_super=args.classes_per_super,
        instances_per_class=args.instances_per_class,
        dim=args.dim,
        intra_class_sigma=args.sigma,
        superclass_spread=args.spread,
        seed=args.seed,
    )
    spec = dat.SplitSpec(
        labeled_class_fraction=args.labeled_class_fraction,
        labeled_instance_fraction=args.labeled_instance_fraction,
        seed=args.seed,
    )
    dataset = dat.make_gcd_split(embeddings, class_labels, spec)

    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    emb_path = outdir / "embeddings.bin"
    labels_path = outdir / "labels.csv"
    truth_path = outdir / "truth.csv"
    dat.save_embeddings(embeddings, emb_path, fmt="binary")
    dat.save_labels(dataset.labels, labels_path)
    dat.save_labels(dataset.eval_labels, truth_path)
    manifest = {
        "generator": {
            "num_superclasses": args.num_superclasses,
            "classes_per_super": args.classes_per_super,
            "instances_per_class": args.instances_per_class,
            "dim": args.dim,
            "sigma": args.sigma,
            "spread": args.spread,
            "seed": args.seed,
        },
        "split": {
            "labeled_class_fraction": args.labeled_class_fraction,
            "labeled_instance_fraction": args.labeled_instance_fraction,
            "labeled_classes": sorted(dataset.labeled_class_set),
            "num_classes": dataset.true_num_classes,
            "num_instances": dataset.count,
            "num_labeled_instances": int(dataset.labeled_mask.sum()),
        },
        "files": {
            "embeddings": emb_path.name,
            "labels": labels_path.name,
            "truth": truth_path.name,
        },
    }
    _write_json(outdir / "split.json", manifest)
    print(
        f"wrote {dataset.count} instances ({int(dataset.labeled_mask.sum())} labeled, "
        f"{dataset.true_num_classes} classes) to {outdir}"
    )
    return 0


def cmd_train(args) -> int:
    config = resolve_train_config(args)
    with _threads_context(config["threads"]):
        dataset = _load_dataset(config)
        if dataset.eval_labels is None:
            raise ValueError("train requires --truth for the final evaluation")
        cfg = _train_config_from(config)

        outdir = Path(config["output"])
        outdir.mkdir(parents=True, exist_ok=True)
        _write_json(outdir / "manifest.json", config)

        with open(outdir / "train_log.csv", "w", newline="\n") as log:
            log.write("epoch,iter,K,L_I,L_C,L_D,L_total,lr\n")
            result = run(dataset, cfg, log_stream=log)

        final_k = result.final_num_conceptions
        enc.save_checkpoint(
            outdir / "checkpoint.bin",
            result.params,
            meta={
                "final_k": final_k,
                "input_dim": result.params.input_dim,
                "seed": config["seed"],
            },
        )

        k = config["eval"]["k"] if config["eval"]["k"] is not None else final_k
        k = max(int(k), dataset.num_labeled_classes)
        feats = enc.forward(result.params, dataset.embeddings.data.astype(np.float64)).features
        metrics = evaluate(
            feats,
            dataset,
            k=k,
            seed=int(derive_rngs(config["seed"])["eval"].integers(2**63)),
            max_iter=config["eval"]["max_iter"],
        )
        record = metrics.to_record()
        _write_json(outdir / "metrics.json", record)
        print(json.dumps(record, sort_keys=True))
    return 0


def cmd_cluster(args) -> int:
    embeddings = dat.load_embeddings(args.embeddings, fmt=args.format)
    labels = None
    if args.labels:
        labels = dat.load_labels(args.labels, embeddings.count)
    cfg = GraphConfig(tau_f=args.tau_f, knn_k=args.knn_k)
    graph = build_consolidated_graph(
        embeddings.data.astype(np.float64), labels, cfg
    )
    assignment = infomap_cluster(graph, seed=args.seed)
    if args.out:
        save_partition_csv(assignment, args.out)
    print(json.dumps({"k": assignment.num_conceptions}))
    return 0


def cmd_eval(args) -> int:
    params, meta = enc.load_checkpoint(args.checkpoint)
    embeddings = dat.load_embeddings(args.embeddings, fmt=args.format)
    labels = dat.load_labels(args.labels, embeddings.count)
    truth = dat.load_labels(args.truth, embeddings.count)
    dataset = dat.GcdDataset(embeddings=embeddings, labels=labels, eval_labels=truth)
    if embeddings.dim != params.input_dim:
        raise ValueError(
            f"checkpoint expects input dim {params.input_dim}, embeddings have {embeddings.dim}"
        )
    k = args.k if args.k is not None else int(meta.get("final_k", 0))
    if k < 1:
        raise ValueError("no cluster count available; pass --k")
    k = max(k, dataset.num_labeled_classes)
    feats = enc.forward(params, embeddings.data.astype(np.float64)).features
    metrics = evaluate(
        feats,
        dataset,
        k=k,
        seed=int(derive_rngs(args.seed)["eval"].integers(2**63)),
        max_iter=args.max_iter,
    )
    record = metrics.to_record()
    if args.out:
        _write_json(Path(args.out), record)
    print(json.dumps(record, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dccl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic embedding dataset with a GCD split")
    g.add_argument("--num-superclasses", type=int, default=2)
    g.add_argument("--classes-per-super", type=int, default=5)
    g.add_argument("--instances-per-class", type=int, default=100)
    g.add_argument("--dim", type=int, default=32)
    g.add_argument("--sigma", type=float, default=0.15)
    g.add_argument("--spread", type=float, default=1.0)
    g.add_argument("--labeled-class-fraction", type=float, default=0.5)
    g.add_argument("--labeled-instance-fraction", type=float, default=0.5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--outdir", type=str, required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train the encoder and evaluate the result")
    _add_train_flags(t)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("cluster", help="one-shot conception generation on an embedding file")
    c.add_argument("--embeddings", type=str, required=True)
    c.add_argument("--labels", type=str, help="optional labels CSV enabling consolidation")
    c.add_argument("--format", choices=("binary", "csv"), default="binary")
    c.add_argument("--tau-f", type=float, default=GraphConfig().tau_f)
    c.add_argument("--knn-k", type=int, default=GraphConfig().knn_k)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", type=str, help="partition CSV output path")
    c.set_defaults(func=cmd_cluster)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--checkpoint", type=str, required=True)
    e.add_argument("--embeddings", type=str, required=True)
    e.add_argument("--labels", type=str, required=True)
    e.add_argument("--truth", type=str, required=True)
    e.add_argument("--format", choices=("binary", "csv"), default="binary")
    e.add_argument("--k", type=int)
    e.add_argument("--max-iter", type=int, default=100)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", type=str)
    e.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
