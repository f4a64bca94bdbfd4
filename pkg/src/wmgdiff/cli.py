"""Command-line pipeline: gen | dist | train | impute | bench.

Every subcommand takes --config pointing at a JSON file; unknown keys are
rejected and relative paths resolve against the config file's directory.
The fully resolved configuration (defaults filled in) is echoed to stdout
before any work, so a run is reproducible from the echo alone.

Exit codes: 0 success, 1 I/O failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .baselines import impute_chained, impute_constant
from .diffusion import (
    DenoiserConfig,
    TrainConfig,
    build_schedule,
    impute,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .evaluate import MethodSpec, format_report_text, run_benchmark, write_report_csv
from .geometry import (
    load_atlas,
    load_distance_matrix,
    pairwise_distances,
    save_atlas,
    save_distance_matrix,
)
from .masking import MaskPolicyConfig
from .synthetic import SynthConfig, gen_atlas, gen_features, inject_structured_missing, load_labels, save_labels
from .table import FeatureTable, load_feature_table, save_feature_table

log = logging.getLogger("wmgdiff.cli")


class ConfigError(ValueError):
    pass


DEFAULT_METHODS = [
    {"kind": "diffusion", "mask_mode": "geometry"},
    {"kind": "diffusion", "mask_mode": "random"},
    {"kind": "chained"},
    {"kind": "mean"},
    {"kind": "median"},
    {"kind": "zero"},
]

DEFAULT_CONFIG = {
    "seed": 0,
    "threads": 1,
    "paths": {
        "atlas": "atlas.json",
        "truth": "truth.csv",
        "corrupted": "corrupted.csv",
        "labels": "labels.csv",
        "distances": "distances.csv",
        "checkpoint": "checkpoint",
        "train_log": "train_loss.csv",
        "imputed": "imputed.csv",
        "report_csv": "report.csv",
        "report_text": "report.txt",
    },
    "synthetic": {
        "n_subjects": 500,
        "n_clusters": 60,
        "streamlines_per_cluster": 10,
        "points_per_streamline": 15,
        "spatial_scale": 100.0,
        "value_smoothness": 30.0,
        "noise_std": 0.03,
        "n_fragile_clusters": 6,
        "fragile_missing_rate": 0.7,
        "background_missing_rate": 0.01,
        "label_sparsity": 8,
        "field_scale": 1.5,
        "bump_amp": 0.12,
        "bump_width": 0.15,
        "label_gain": 2.0,
    },
    "geometry": {"resample_points": 15, "aggregate": "min"},
    "mask": {"mode": "geometry", "observable_ratio": 0.8, "polarity": "near"},
    "schedule": {"steps": 150, "beta_start": 0.0001, "beta_end": 0.5, "kind": "quadratic"},
    "denoiser": {"layers": 4, "channels": 64, "heads": 2, "embed_dim": 128},
    "train": {
        "epochs": 100,
        "batch_size": 16,
        "learning_rate": 0.0005,
        "dtype": "float32",
        "normalize": True,
    },
    "impute": {"method": "diffusion", "n_samples": 10},
    "evaluation": {
        "folds": 5,
        "missing_fraction": 0.2,
        "logistic_l2": 0.001,
        "logistic_iters": 2000,
        "logistic_lr": 0.1,
        "methods": DEFAULT_METHODS,
    },
}

_METHOD_KEYS = {"kind", "name", "mask_mode", "polarity", "sweeps", "ridge", "n_samples"}


def _merge(defaults, override, prefix=""):
    out = copy.deepcopy(defaults)
    for key, value in override.items():
        path = f"{prefix}{key}"
        if key not in defaults:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path!r} must be an object")
            out[key] = _merge(defaults[key], value, prefix=path + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def _validate_methods(methods):
    if not isinstance(methods, list) or not methods:
        raise ConfigError("'evaluation.methods' must be a non-empty list")
    for i, m in enumerate(methods):
        if not isinstance(m, dict):
            raise ConfigError(f"'evaluation.methods[{i}]' must be an object")
        for key in m:
            if key not in _METHOD_KEYS:
                raise ConfigError(f"unknown config key 'evaluation.methods[{i}].{key}'")
        if "kind" not in m:
            raise ConfigError(f"'evaluation.methods[{i}]' needs a 'kind'")


def load_config(path, overrides=None) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            user = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from None
    if not isinstance(user, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    cfg = _merge(DEFAULT_CONFIG, user)
    _validate_methods(cfg["evaluation"]["methods"])
    for key, value in (overrides or {}).items():
        section = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            section = section[p]
        section[parts[-1]] = value
    base = os.path.dirname(os.path.abspath(path))
    cfg["paths"] = {k: os.path.join(base, v) if not os.path.isabs(v) else v for k, v in cfg["paths"].items()}
    return cfg


def _echo(cfg):
    print(json.dumps(cfg, indent=2, sort_keys=True))
    sys.stdout.flush()


def _synth_config(cfg) -> SynthConfig:
    return SynthConfig(seed=cfg["seed"], **cfg["synthetic"])


def _mask_policy(cfg) -> MaskPolicyConfig:
    return MaskPolicyConfig(seed=cfg["seed"], **cfg["mask"])


def _schedule(cfg):
    s = cfg["schedule"]
    return build_schedule(s["steps"], s["beta_start"], s["beta_end"], s["kind"])


def cmd_gen(cfg, args) -> int:
    synth = _synth_config(cfg)
    atlas = gen_atlas(synth)
    truth, labels = gen_features(atlas, synth)
    corrupted = inject_structured_missing(truth, synth)
    paths = dict(cfg["paths"])
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        for key in ("atlas", "truth", "corrupted", "labels"):
            paths[key] = os.path.join(args.out, os.path.basename(paths[key]))
    save_atlas(atlas, paths["atlas"])
    save_feature_table(truth, paths["truth"])
    save_feature_table(corrupted, paths["corrupted"])
    save_labels(labels, truth.subject_ids, paths["labels"])
    missing_frac = 1.0 - corrupted.observed_count / (synth.n_subjects * synth.n_clusters)
    print(
        f"generated {synth.n_subjects} subjects x {synth.n_clusters} clusters; "
        f"{missing_frac:.1%} missing after structured injection; "
        f"label balance {labels.mean():.1%}"
    )
    return 0


def cmd_dist(cfg, args) -> int:
    atlas = load_atlas(cfg["paths"]["atlas"])
    dm = pairwise_distances(
        atlas,
        cfg["geometry"]["resample_points"],
        cfg["geometry"]["aggregate"],
        threads=cfg["threads"],
    )
    out = args.out or cfg["paths"]["distances"]
    save_distance_matrix(dm, out)
    print(f"wrote {len(atlas)}x{len(atlas)} distance matrix to {out}")
    return 0


def cmd_train(cfg, args) -> int:
    table = load_feature_table(cfg["paths"]["corrupted"])
    policy = _mask_policy(cfg)
    dm = None
    if policy.mode == "geometry":
        if not os.path.exists(cfg["paths"]["distances"]):
            raise ConfigError(
                f"mask.mode=geometry requires a distance matrix at {cfg['paths']['distances']}"
                " (run the dist subcommand first)"
            )
        dm = load_distance_matrix(cfg["paths"]["distances"])
    dcfg = DenoiserConfig(cluster_count=table.n_clusters, **cfg["denoiser"])
    tcfg = TrainConfig(seed=cfg["seed"], policy=policy, **cfg["train"])
    ckpt = train(table, policy, dm, dcfg, tcfg, _schedule(cfg))
    out = args.out or cfg["paths"]["checkpoint"]
    save_checkpoint(ckpt, out)
    with open(cfg["paths"]["train_log"], "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for i, loss in enumerate(ckpt.meta.get("epoch_losses", []), start=1):
            fh.write(f"{i},{loss!r}\n")
    print(f"trained {tcfg.epochs} epochs (final loss {ckpt.meta['final_loss']:.6f}); checkpoint at {out}")
    return 0


def cmd_impute(cfg, args) -> int:
    method = args.method or cfg["impute"]["method"]
    table = load_feature_table(cfg["paths"]["corrupted"])
    if method == "diffusion":
        ckpt = load_checkpoint(cfg["paths"]["checkpoint"])
        imputed = impute(ckpt, table, cfg["impute"]["n_samples"], seed=cfg["seed"])
    elif method in ("mean", "median", "zero"):
        imputed = impute_constant(table, method)
    elif method == "chained":
        imputed = impute_chained(table, seed=cfg["seed"])
    else:
        raise ConfigError(f"unknown imputation method {method!r}")
    out = args.out or cfg["paths"]["imputed"]
    save_feature_table(imputed, out)
    print(f"imputed {int((~table.present).sum())} entries with {method}; wrote {out}")
    return 0


def cmd_bench(cfg, args) -> int:
    truth = load_feature_table(cfg["paths"]["truth"])
    labels = load_labels(cfg["paths"]["labels"], truth.subject_ids)
    methods = [MethodSpec(**m) for m in cfg["evaluation"]["methods"]]

    dm = None
    atlas = None
    if any(m.kind == "diffusion" and m.mask_mode == "geometry" for m in methods):
        if os.path.exists(cfg["paths"]["distances"]):
            dm = load_distance_matrix(cfg["paths"]["distances"])
        else:
            atlas = load_atlas(cfg["paths"]["atlas"])

    ev = cfg["evaluation"]
    report = run_benchmark(
        truth,
        labels,
        atlas,
        methods,
        folds=ev["folds"],
        missing_fraction=ev["missing_fraction"],
        seed=cfg["seed"],
        dm=dm,
        resample_points=cfg["geometry"]["resample_points"],
        aggregate=cfg["geometry"]["aggregate"],
        dcfg=DenoiserConfig(cluster_count=truth.n_clusters, **cfg["denoiser"]),
        tcfg=TrainConfig(seed=cfg["seed"], policy=_mask_policy(cfg), **cfg["train"]),
        schedule=_schedule(cfg),
        logistic_l2=ev["logistic_l2"],
        logistic_iters=ev["logistic_iters"],
        logistic_lr=ev["logistic_lr"],
        threads=cfg["threads"],
    )
    csv_path = cfg["paths"]["report_csv"]
    txt_path = cfg["paths"]["report_text"]
    if args.out:
        csv_path, txt_path = args.out + ".csv", args.out + ".txt"
    write_report_csv(report, csv_path)
    text = format_report_text(report)
    with open(txt_path, "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text, end="")
    log.info("benchmark wall clock %.1fs", report.wall_clock)
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "dist": cmd_dist,
    "train": cmd_train,
    "impute": cmd_impute,
    "bench": cmd_bench,
}


def _setup_logging():
    level = {"quiet": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("WMG_LOG", "info").lower(), logging.INFO
    )
    logging.basicConfig(level=level, format="%(name)s: %(message)s", stream=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wmgdiff",
        description="Geometry-guided diffusion imputation pipeline",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("gen", "generate a synthetic atlas, feature tables and labels"),
        ("dist", "compute the cluster pairwise distance matrix"),
        ("train", "train the diffusion imputer on the corrupted table"),
        ("impute", "fill missing entries with the configured method"),
        ("bench", "run the k-fold imputation + downstream benchmark"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--threads", type=int, default=None, help="worker cap (1 = bit-exact mode)")
        p.add_argument("--method", default=None, help="imputation method override")
        p.add_argument("--out", default=None, help="output path override")
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.threads is not None:
            overrides["threads"] = args.threads
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"config error: cannot read {exc.filename}", file=sys.stderr)
        return 2

    _echo(cfg)
    try:
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FloatingPointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
