"""Classical imputers: column constants and chained-equations regression.

The chained imputer is a transparent single-imputation variant of MICE:
initialize missing cells with column means, then sweep over columns in a
seeded random order, regressing each column on all others with ridge
least squares and overwriting that column's missing cells with the fit.
"""

from __future__ import annotations

import logging

import numpy as np

from .rng import derive_rng
from .table import FeatureTable

log = logging.getLogger("wmgdiff.baselines")

CONSTANT_KINDS = ("mean", "median", "zero")


def _column_stats(values, present, kind):
    """Per-column statistic over observed entries; NaN where none observed."""
    C = values.shape[1]
    out = np.full(C, np.nan)
    for j in range(C):
        obs = values[present[:, j], j]
        if len(obs) == 0:
            continue
        out[j] = np.mean(obs) if kind == "mean" else np.median(obs)
    return out


def impute_constant(table: FeatureTable, kind: str, train_rows=None) -> FeatureTable:
    """Replace missing entries with a per-column constant.

    With ``train_rows`` the statistic uses only those rows (leakage-free
    fold protocol); all-missing columns fall back to the global statistic
    with a warning.
    """
    if kind not in CONSTANT_KINDS:
        raise ValueError(f"unknown constant imputer {kind!r}")
    if not (~table.present).any():
        return table
    values = table.filled(0.0)
    if kind == "zero":
        fill = np.zeros(table.n_clusters)
    else:
        rows = np.arange(table.n_subjects) if train_rows is None else np.asarray(train_rows, dtype=int)
        fill = _column_stats(table.values[rows], table.present[rows], kind)
        bad = ~np.isfinite(fill)
        if bad.any():
            all_obs = table.values[table.present]
            global_stat = float(np.mean(all_obs) if kind == "mean" else np.median(all_obs))
            log.warning(
                "%d column(s) with no observed training value; using global %s %.6g",
                int(bad.sum()), kind, global_stat,
            )
            fill = np.where(bad, global_stat, fill)
    out = np.where(table.present, values, fill)
    return table.with_values(out, np.ones_like(table.present))


def impute_chained(
    table: FeatureTable,
    sweeps: int = 10,
    ridge: float = 1e-3,
    seed: int = 0,
    train_rows=None,
) -> FeatureTable:
    """Iterative per-column ridge regression imputation."""
    if table.n_clusters < 2:
        raise ValueError("chained imputation needs >= 2 columns")
    if sweeps < 1:
        raise ValueError(f"sweeps must be >= 1, got {sweeps}")
    if ridge < 0:
        raise ValueError(f"ridge must be >= 0, got {ridge}")
    missing = ~table.present
    if not missing.any():
        return table

    n, c = table.n_subjects, table.n_clusters
    fit_rows = np.arange(n) if train_rows is None else np.asarray(train_rows, dtype=int)
    col_means = _column_stats(table.values[fit_rows], table.present[fit_rows], "mean")
    bad = ~np.isfinite(col_means)
    if bad.any():
        col_means = np.where(bad, np.nanmean(np.where(table.present, table.values, np.nan)), col_means)
    x = np.where(table.present, table.filled(0.0), col_means)

    rng = derive_rng(seed, "baselines.chained")
    in_fit = np.zeros(n, dtype=bool)
    in_fit[fit_rows] = True
    for sweep in range(sweeps):
        for j in rng.permutation(c):
            col_missing = missing[:, j]
            if not col_missing.any():
                continue
            train = table.present[:, j] & in_fit
            if train.sum() < 2:  # too few anchored rows; keep current fill
                continue
            others = np.delete(np.arange(c), j)
            design = np.column_stack([np.ones(train.sum()), x[np.ix_(train, others)]])
            target = x[train, j]
            gram = design.T @ design
            reg = np.full(design.shape[1], ridge * train.sum())
            reg[0] = 0.0  # intercept unpenalized
            gram[np.diag_indices_from(gram)] += reg
            try:
                coef = np.linalg.solve(gram, design.T @ target)
            except np.linalg.LinAlgError:
                raise FloatingPointError(
                    f"singular normal equations for column {j}; use ridge > 0"
                ) from None
            pred_design = np.column_stack([np.ones(col_missing.sum()), x[np.ix_(col_missing, others)]])
            x[col_missing, j] = pred_design @ coef

    out = np.where(table.present, table.filled(0.0), x)
    return table.with_values(out, np.ones_like(table.present))
