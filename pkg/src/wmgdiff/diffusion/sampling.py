"""Reverse (ancestral) sampling and table imputation.

The reverse recursion from step t to t-1 is

    x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t)
              + sigma_t z,   sigma_t^2 = (1 - abar_{t-1}) / (1 - abar_t) * beta_t

with z ~ N(0, I) for t > 1 and z = 0 at the final step.  Observed entries
are never touched; per-entry imputations are the median over n_samples
independent reverse trajectories.
"""

from __future__ import annotations

import logging
import warnings

import numpy as np

from ..rng import derive_rng
from ..table import FeatureTable
from . import model
from .checkpoint import Checkpoint
from .schedule import NoiseSchedule, build_schedule

log = logging.getLogger("wmgdiff.sample")


def reverse_step(x_t: np.ndarray, eps_hat: np.ndarray, t: int, s: NoiseSchedule, z=None) -> np.ndarray:
    """One ancestral step; pass z=None (or at t=1) for the deterministic mean."""
    if not 1 <= t <= s.T:
        raise ValueError(f"t={t} outside [1, {s.T}]")
    i = t - 1
    mean = (x_t - (s.beta[i] / np.sqrt(1.0 - s.alpha_bar[i])) * eps_hat) / np.sqrt(s.alpha[i])
    if z is None or t == 1:
        return mean
    sigma = np.sqrt((1.0 - s.alpha_bar_prev[i]) / (1.0 - s.alpha_bar[i]) * s.beta[i])
    return mean + sigma * z


def reverse_sample(eps_fn, x_T: np.ndarray, s: NoiseSchedule, rng=None) -> np.ndarray:
    """Run the full reverse recursion from x_T.

    ``eps_fn(x_t, t)`` supplies the noise estimate; ``rng=None`` disables the
    stochastic term entirely (deterministic trajectory).
    """
    x = np.asarray(x_T, dtype=np.float64).copy()
    for t in range(s.T, 0, -1):
        z = rng.standard_normal(x.shape) if (rng is not None and t > 1) else None
        x = reverse_step(x, eps_fn(x, t), t, s, z)
    return x


def impute(ckpt: Checkpoint, table: FeatureTable, n_samples: int = 10, seed: int = 0) -> FeatureTable:
    """Fill every missing entry of the table; observed entries pass through."""
    if table.n_clusters != ckpt.denoiser.cluster_count:
        raise ValueError(
            f"table has {table.n_clusters} clusters, checkpoint expects {ckpt.denoiser.cluster_count}"
        )
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    missing = ~table.present
    if not missing.any():
        return table

    fully_missing = int((missing.all(axis=1)).sum())
    if fully_missing:
        warnings.warn(
            f"{fully_missing} row(s) have no observed entries; imputing unconditionally",
            stacklevel=2,
        )

    schedule = build_schedule(ckpt.schedule_T, ckpt.beta_start, ckpt.beta_end, ckpt.schedule_kind)
    dtype = ckpt.params.dtype
    rows = np.flatnonzero(missing.any(axis=1))
    n_rows, C = len(rows), table.n_clusters

    mean, std = ckpt.norm_mean, ckpt.norm_std
    values_std = np.where(table.present, (table.filled(0.0) - mean) / std, 0.0)
    cond_mask = table.present[rows].astype(dtype)
    target_mask = missing[rows].astype(dtype)
    cond_vals = (values_std[rows] * cond_mask).astype(dtype)

    samples = np.empty((n_samples, n_rows, C))
    scratch = {}
    for si in range(n_samples):
        rng = derive_rng(seed, "impute.sample", si)
        x = rng.standard_normal((n_rows, C)).astype(dtype) * target_mask
        for t in range(schedule.T, 0, -1):
            t_vec = np.full(n_rows, t, dtype=np.int64)
            eps_hat = model.forward(
                ckpt.params, ckpt.denoiser, cond_vals, cond_mask, x, target_mask, t_vec,
                scratch=scratch,
            )
            z = rng.standard_normal((n_rows, C)).astype(dtype) if t > 1 else None
            x = reverse_step(x, eps_hat, t, schedule, z).astype(dtype) * target_mask
        samples[si] = x
    estimate = np.median(samples, axis=0)

    out_values = table.filled(0.0)
    fill = estimate * std + mean
    out_values[rows] = np.where(missing[rows], fill, out_values[rows])
    present = np.ones_like(table.present)
    log.info("imputed %d entries across %d rows (%d samples)", int(missing.sum()), n_rows, n_samples)
    return table.with_values(out_values, present)
