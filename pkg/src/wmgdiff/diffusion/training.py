"""Self-supervised training of the conditional denoiser.

Each visit to a row builds a fresh conditioning/target split (policy
dependent), draws a step t and a noise vector, noises the target values
with the closed-form forward process and regresses the predicted noise
onto the true noise at target positions.  Optimization is Adam.

Per-row randomness comes from streams derived as (seed, epoch, row), so
results do not depend on batch composition or processing order.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..masking import MaskPolicyConfig, build_mask
from ..rng import derive_rng
from ..table import FeatureTable
from . import model
from .checkpoint import Checkpoint
from .model import DenoiserConfig, DenoiserParams
from .schedule import NoiseSchedule, build_schedule

log = logging.getLogger("wmgdiff.train")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 0.0005
    seed: int = 0
    policy: MaskPolicyConfig = field(default_factory=MaskPolicyConfig)
    dtype: str = "float32"
    normalize: bool = True

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0 or self.learning_rate <= 0:
            raise ValueError("epochs must be >= 0, batch_size and learning_rate positive")


class Adam:
    """Adaptive-moment SGD (decay 0.9/0.999, epsilon 1e-8)."""

    def __init__(self, params: DenoiserParams, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}

    def update(self, params: DenoiserParams, grads: dict):
        self.step_count += 1
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        for name in params.names:
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params.tensors[name] = params.tensors[name] - self.lr * (m / b1c) / (
                np.sqrt(v / b2c) + self.eps
            )


def normalization_stats(table: FeatureTable):
    """Per-cluster mean/std over observed entries; zero-variance columns pass through."""
    vals = table.filled(0.0)
    pres = table.present
    counts = pres.sum(axis=0)
    safe = np.maximum(counts, 1)
    mean = (vals * pres).sum(axis=0) / safe
    var = ((vals - mean) ** 2 * pres).sum(axis=0) / safe
    std = np.sqrt(var)
    identity = (std == 0.0) | (counts == 0)
    mean = np.where(identity, 0.0, mean)
    std = np.where(identity, 1.0, std)
    return mean, std


def standardize(table: FeatureTable, mean, std) -> np.ndarray:
    """(values - mean) / std at observed entries, 0 elsewhere."""
    return np.where(table.present, (table.filled(0.0) - mean) / std, 0.0)


def _masked_mse_loss(eps_hat, eps, target_mask, n_target):
    diff = (eps_hat - eps) * target_mask
    loss = float((diff * diff).sum() / n_target)
    d_out = (2.0 / n_target) * diff
    return loss, d_out


def training_step(
    params: DenoiserParams,
    cfg: DenoiserConfig,
    schedule: NoiseSchedule,
    values_std: np.ndarray,  # (B, C) standardized, 0 at missing
    present: np.ndarray,  # (B, C) bool
    policy: MaskPolicyConfig,
    dm,
    row_rngs,
    table_rows: FeatureTable,
):
    """Loss and parameter gradients for one batch of rows."""
    B, C = values_std.shape
    dtype = params.dtype
    cond_mask = np.zeros((B, C), dtype=dtype)
    target_mask = np.zeros((B, C), dtype=dtype)
    for i in range(B):
        pair = build_mask(table_rows, i, policy, row_rngs[i], dm)
        cond_mask[i] = pair.cond
        target_mask[i] = pair.target

    t = np.empty(B, dtype=np.int64)
    eps = np.zeros((B, C), dtype=dtype)
    for i in range(B):
        t[i] = int(row_rngs[i].integers(1, schedule.T + 1))
        eps[i] = row_rngs[i].standard_normal(C)

    ab = schedule.alpha_bar[t - 1][:, None].astype(dtype)
    x0 = values_std.astype(dtype)
    noisy = (np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps) * target_mask

    eps_hat, cache = model.forward(
        params, cfg, x0 * cond_mask, cond_mask, noisy, target_mask, t, want_cache=True
    )
    n_target = target_mask.sum()
    loss, d_out = _masked_mse_loss(eps_hat, eps * target_mask, target_mask, n_target)
    if not math.isfinite(loss):
        raise FloatingPointError(
            f"non-finite training loss (t range {t.min()}..{t.max()}, "
            f"|eps_hat| max {np.abs(eps_hat).max():.3g})"
        )
    grads = model.backward(params, cfg, cache, d_out)
    return loss, grads


def train(
    table: FeatureTable,
    policy: MaskPolicyConfig,
    dm,
    dcfg: DenoiserConfig,
    tcfg: TrainConfig,
    schedule: NoiseSchedule | None = None,
) -> Checkpoint:
    """Full training run; deterministic given tcfg.seed."""
    if table.n_subjects < tcfg.batch_size:
        raise ValueError(
            f"table has {table.n_subjects} rows, need at least batch_size={tcfg.batch_size}"
        )
    if policy.mode == "geometry" and dm is None:
        raise ValueError("geometry mask policy requires a distance matrix")
    schedule = schedule or build_schedule()
    dtype = np.dtype(tcfg.dtype).type
    params = model.init_params(dcfg, derive_rng(tcfg.seed, "train.init"), dtype=dtype)

    if tcfg.normalize:
        mean, std = normalization_stats(table)
    else:
        mean, std = np.zeros(table.n_clusters), np.ones(table.n_clusters)
    values_std = standardize(table, mean, std)

    n = table.n_subjects
    steps_per_epoch = math.ceil(n / tcfg.batch_size)
    opt = Adam(params, tcfg.learning_rate)
    epoch_losses = []
    final_loss = float("nan")
    for epoch in range(tcfg.epochs):
        order = derive_rng(tcfg.seed, "train.shuffle", epoch).permutation(n)
        losses = []
        for step in range(steps_per_epoch):
            rows = order[step * tcfg.batch_size : (step + 1) * tcfg.batch_size]
            row_rngs = [derive_rng(tcfg.seed, "train.row", epoch, int(r)) for r in rows]
            loss, grads = training_step(
                params,
                dcfg,
                schedule,
                values_std[rows],
                table.present[rows],
                policy,
                dm,
                row_rngs,
                table.rows(rows),
            )
            opt.update(params, grads)
            losses.append(loss)
        epoch_mean = float(np.mean(losses))
        epoch_losses.append(epoch_mean)
        final_loss = epoch_mean
        log.info("epoch %d/%d loss %.6f", epoch + 1, tcfg.epochs, epoch_mean)

    return Checkpoint(
        denoiser=dcfg,
        schedule_T=schedule.T,
        beta_start=schedule.beta_start,
        beta_end=schedule.beta_end,
        schedule_kind=schedule.kind,
        params=params,
        norm_mean=np.asarray(mean, dtype=np.float64),
        norm_std=np.asarray(std, dtype=np.float64),
        normalize=tcfg.normalize,
        meta={
            "epochs": tcfg.epochs,
            "final_loss": final_loss,
            "seed": tcfg.seed,
            "epoch_losses": epoch_losses,
        },
    )
