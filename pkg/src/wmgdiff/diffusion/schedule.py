"""Noise schedule and the closed-form forward (noising) process.

Steps are 1-based: beta[t-1] is the variance added at step t.  The
quadratic schedule is linear in sqrt(beta); endpoints are pinned to the
configured values exactly (the formula gives them mathematically, pinning
removes the sqrt/square round-trip ulp).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta: np.ndarray  # (T,)
    alpha: np.ndarray  # 1 - beta
    alpha_bar: np.ndarray  # cumprod(alpha)
    kind: str
    beta_start: float
    beta_end: float
    alpha_bar_prev: np.ndarray = field(init=False)  # alpha_bar shifted, ab[0] = 1

    def __post_init__(self):
        for name in ("beta", "alpha", "alpha_bar"):
            arr = getattr(self, name)
            if arr.shape != (self.T,):
                raise ValueError(f"{name} must have length T={self.T}")
        if not ((self.beta > 0) & (self.beta < 1)).all():
            raise ValueError("beta values must lie strictly in (0, 1)")
        if not (np.diff(self.beta) > 0).all():
            raise ValueError("beta must be strictly increasing")
        prev = np.concatenate([[1.0], self.alpha_bar[:-1]])
        object.__setattr__(self, "alpha_bar_prev", prev)


def build_schedule(
    T: int = 150,
    beta_start: float = 0.0001,
    beta_end: float = 0.5,
    kind: str = "quadratic",
) -> NoiseSchedule:
    if not 0.0 < beta_start < beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start < beta_end < 1, got {beta_start}, {beta_end}")
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    if kind == "quadratic":
        beta = np.linspace(np.sqrt(beta_start), np.sqrt(beta_end), T) ** 2
    elif kind == "linear":
        beta = np.linspace(beta_start, beta_end, T)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    beta[0] = beta_start
    beta[-1] = beta_end
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(T, beta, alpha, alpha_bar, kind, beta_start, beta_end)


def forward_noise(x0: np.ndarray, t: int, eps: np.ndarray, s: NoiseSchedule) -> np.ndarray:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, elementwise."""
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if not 1 <= t <= s.T:
        raise ValueError(f"t={t} outside [1, {s.T}]")
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape}, eps {eps.shape}")
    ab = s.alpha_bar[t - 1]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
