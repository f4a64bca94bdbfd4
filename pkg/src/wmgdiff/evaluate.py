"""Imputation scoring, the downstream binary-prediction testbed, and the
k-fold benchmark harness.

Per fold the harness corrupts the input table with synthetic missingness,
lets every configured method impute it (models fit on training rows only),
scores RMSE at the dropped test-row entries, then feeds the imputed
features to a logistic-regression classifier for the downstream accuracy
metric.  A reference accuracy row is computed on the uncorrupted table.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import impute_chained, impute_constant
from .diffusion import DenoiserConfig, TrainConfig, build_schedule, impute, train
from .geometry import Atlas, DistanceMatrix, pairwise_distances
from .masking import MaskPolicyConfig
from .rng import derive_seed
from .table import EntryMask, FeatureTable, inject_synthetic_missing, split_folds

log = logging.getLogger("wmgdiff.evaluate")


def rmse(imputed: FeatureTable, truth: FeatureTable, at: EntryMask) -> float:
    """Root mean squared error over the masked entries."""
    if imputed.values.shape != truth.values.shape or at.bits.shape != truth.values.shape:
        raise ValueError("imputed/truth/mask shapes differ")
    if at.count == 0:
        raise ValueError("empty evaluation mask")
    if not truth.present[at.bits].all():
        raise ValueError("truth is missing at some evaluation positions")
    if not imputed.present[at.bits].all():
        raise ValueError("imputed table is missing at some evaluation positions")
    diff = imputed.values[at.bits] - truth.values[at.bits]
    return float(np.sqrt(np.mean(diff * diff)))


@dataclass(frozen=True)
class LogisticModel:
    weights: np.ndarray  # (C,)
    bias: float
    feat_mean: np.ndarray
    feat_std: np.ndarray

    def predict_proba(self, features: FeatureTable) -> np.ndarray:
        if (~features.present).any():
            raise ValueError("features must be fully observed")
        xs = (features.values - self.feat_mean) / self.feat_std
        z = xs @ self.weights + self.bias
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out


def fit_logistic(
    features: FeatureTable,
    labels,
    l2: float = 1e-3,
    iters: int = 2000,
    lr: float = 0.1,
) -> LogisticModel:
    """Full-batch gradient descent on mean logistic loss + l2 ||w||^2 / 2."""
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if (~features.present).any():
        raise ValueError("features must be fully observed")
    if len(labels) != features.n_subjects:
        raise ValueError("label count does not match row count")
    classes = np.unique(labels)
    if not np.array_equal(classes, [0.0, 1.0]):
        raise ValueError(f"need both classes present with labels in {{0,1}}, got {classes}")

    mean = features.values.mean(axis=0)
    std = features.values.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    xs = (features.values - mean) / std
    n = len(labels)
    w = np.zeros(features.n_clusters)
    b = 0.0
    # proximal handling of the l2 term keeps the update stable for any l2,
    # with the same stationary point as plain gradient descent
    shrink = 1.0 / (1.0 + lr * l2)
    for _ in range(iters):
        z = xs @ w + b
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        err = p - labels
        w = (w - lr * (xs.T @ err / n)) * shrink
        b -= lr * float(err.mean())
    return LogisticModel(w, b, mean, std)


def accuracy(model: LogisticModel, features: FeatureTable, labels) -> float:
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    pred = model.predict_proba(features) >= 0.5
    return float(np.mean(pred == (labels == 1.0)))


@dataclass(frozen=True)
class MethodSpec:
    """One benchmark row: a named imputation method configuration."""

    kind: str  # mean | median | zero | chained | diffusion
    name: str = ""
    mask_mode: str = "geometry"  # diffusion only
    polarity: str = "near"
    sweeps: int = 10
    ridge: float = 1e-3
    n_samples: int = 10

    def __post_init__(self):
        if self.kind not in ("mean", "median", "zero", "chained", "diffusion"):
            raise ValueError(f"unknown method kind {self.kind!r}")
        if not self.name:
            default = self.kind if self.kind != "diffusion" else f"diffusion-{self.mask_mode}"
            object.__setattr__(self, "name", default)


@dataclass
class MethodResult:
    name: str
    rmse_per_fold: list
    acc_per_fold: list


@dataclass
class BenchmarkReport:
    methods: list
    full_acc_per_fold: list
    folds: int
    seed: int
    missing_fraction: float
    config_echo: dict = field(default_factory=dict)
    wall_clock: float = 0.0


def _mean_std(cells):
    vals = [v for v in cells if v is not None]
    if len(vals) != len(cells) or len(vals) < 2:
        return float("nan"), float("nan")
    return float(np.mean(vals)), float(np.std(vals, ddof=1))


def run_benchmark(
    truth: FeatureTable,
    labels,
    atlas: Atlas | None,
    methods,
    folds: int = 5,
    missing_fraction: float = 0.2,
    seed: int = 0,
    *,
    dm: DistanceMatrix | None = None,
    resample_points: int = 15,
    aggregate: str = "min",
    dcfg: DenoiserConfig | None = None,
    tcfg: TrainConfig | None = None,
    schedule=None,
    logistic_l2: float = 1e-3,
    logistic_iters: int = 2000,
    logistic_lr: float = 0.1,
    threads: int = 1,
) -> BenchmarkReport:
    start = time.monotonic()
    labels = np.asarray(labels, dtype=int).reshape(-1)
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if not methods:
        raise ValueError("at least one method required")
    names = [m.name for m in methods]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate method names: {names}")
    if (~truth.present).any():
        raise ValueError("benchmark input table must be fully observed")

    need_diffusion = any(m.kind == "diffusion" for m in methods)
    need_geometry = any(m.kind == "diffusion" and m.mask_mode == "geometry" for m in methods)
    if need_geometry and dm is None:
        if atlas is None:
            raise ValueError("geometry-masked diffusion needs an atlas or distance matrix")
        log.info("computing %d-cluster distance matrix", len(atlas))
        dm = pairwise_distances(atlas, resample_points, aggregate, threads)
    if need_diffusion:
        dcfg = dcfg or DenoiserConfig(cluster_count=truth.n_clusters)
        tcfg = tcfg or TrainConfig()
        schedule = schedule or build_schedule()

    fold_splits = split_folds(truth, folds, seed)
    results = {m.name: MethodResult(m.name, [], []) for m in methods}
    full_acc = []

    for fold in fold_splits:
        f = fold.fold_index
        corrupted, dropped = inject_synthetic_missing(
            truth, missing_fraction, derive_seed(seed, "bench.drop", f)
        )
        test_bits = np.zeros_like(dropped.bits)
        test_bits[fold.test_rows] = True
        eval_mask = EntryMask(dropped.bits & test_bits)

        ref_model = fit_logistic(
            truth.rows(fold.train_rows), labels[fold.train_rows],
            l2=logistic_l2, iters=logistic_iters, lr=logistic_lr,
        )
        full_acc.append(accuracy(ref_model, truth.rows(fold.test_rows), labels[fold.test_rows]))

        for m in methods:
            t0 = time.monotonic()
            try:
                imputed = _run_method(
                    m, corrupted, fold, dm, dcfg, tcfg, schedule, seed, f
                )
                score = rmse(imputed, truth, eval_mask)
                clf = fit_logistic(
                    imputed.rows(fold.train_rows), labels[fold.train_rows],
                    l2=logistic_l2, iters=logistic_iters, lr=logistic_lr,
                )
                acc = accuracy(clf, imputed.rows(fold.test_rows), labels[fold.test_rows])
            except Exception:
                log.exception("method %s failed on fold %d", m.name, f)
                results[m.name].rmse_per_fold.append(None)
                results[m.name].acc_per_fold.append(None)
                continue
            results[m.name].rmse_per_fold.append(score)
            results[m.name].acc_per_fold.append(acc)
            log.info(
                "fold %d %s: rmse %.4f acc %.4f (%.1fs)",
                f, m.name, score, acc, time.monotonic() - t0,
            )

    return BenchmarkReport(
        methods=[results[n] for n in names],
        full_acc_per_fold=full_acc,
        folds=folds,
        seed=seed,
        missing_fraction=missing_fraction,
        wall_clock=time.monotonic() - start,
    )


def _run_method(m, corrupted, fold, dm, dcfg, tcfg, schedule, seed, f):
    if m.kind in ("mean", "median", "zero"):
        return impute_constant(corrupted, m.kind, train_rows=fold.train_rows)
    if m.kind == "chained":
        return impute_chained(
            corrupted, sweeps=m.sweeps, ridge=m.ridge,
            seed=derive_seed(seed, "bench.chained", f), train_rows=fold.train_rows,
        )
    policy = MaskPolicyConfig(mode=m.mask_mode, polarity=m.polarity)
    fold_tcfg = replace(tcfg, policy=policy, seed=derive_seed(seed, "bench.train", f, m.name))
    ckpt = train(corrupted.rows(fold.train_rows), policy, dm, dcfg, fold_tcfg, schedule)
    return impute(ckpt, corrupted, m.n_samples, seed=derive_seed(seed, "bench.impute", f, m.name))


# --- report emission ---------------------------------------------------------


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def write_report_csv(report: BenchmarkReport, path) -> None:
    import csv

    k = report.folds
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["method"]
            + [f"rmse_fold{f}" for f in range(k)] + ["rmse_mean", "rmse_std"]
            + [f"acc_fold{f}" for f in range(k)] + ["acc_mean", "acc_std"]
        )
        for mres in report.methods:
            rm, rs = _mean_std(mres.rmse_per_fold)
            am, as_ = _mean_std(mres.acc_per_fold)
            writer.writerow(
                [mres.name]
                + [_fmt(v) for v in mres.rmse_per_fold] + [_fmt(rm), _fmt(rs)]
                + [_fmt(v) for v in mres.acc_per_fold] + [_fmt(am), _fmt(as_)]
            )
        fm, fs = _mean_std(report.full_acc_per_fold)
        writer.writerow(
            ["full_input"]
            + [""] * (k + 2)
            + [_fmt(v) for v in report.full_acc_per_fold] + [_fmt(fm), _fmt(fs)]
        )


def format_report_text(report: BenchmarkReport) -> str:
    lines = [
        f"benchmark: {report.folds} folds, {report.missing_fraction:.0%} synthetic missing, "
        f"seed {report.seed}",
        "",
        f"{'Imputation method':<24}  {'RMSE':>17}",
    ]
    for mres in report.methods:
        rm, rs = _mean_std(mres.rmse_per_fold)
        cell = "failed" if np.isnan(rm) else f"{rm:.4f} ± {rs:.4f}"
        lines.append(f"{mres.name:<24}  {cell:>17}")
    lines += ["", f"{'Imputation method':<24}  {'ACC':>17}"]
    fm, fs = _mean_std(report.full_acc_per_fold)
    lines.append(f"{'full input':<24}  {fm:.4f} ± {fs:.4f}".rstrip())
    for mres in report.methods:
        am, as_ = _mean_std(mres.acc_per_fold)
        cell = "failed" if np.isnan(am) else f"{am:.4f} ± {as_:.4f}"
        lines.append(f"{mres.name:<24}  {cell:>17}")
    return "\n".join(lines) + "\n"
