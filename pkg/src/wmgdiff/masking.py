"""Conditioning/target splits over a row's observed entries.

The self-supervised training signal hides part of the observed entries
(imputation targets) and conditions on the rest.  Two policies:

* ``random`` — uniform partition, resampled from the provided rng.
* ``geometry`` — observed clusters are claimed round-robin by the row's
  actually-missing clusters in order of atlas distance; the claimed quota
  forms the conditioning set (``near`` polarity) or, with claim order
  inverted, the farthest quota does (``far``).  Rows with nothing missing
  fall back to the random policy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import DistanceMatrix
from .table import FeatureTable, round_half_away


class PolicyError(ValueError):
    """Row cannot support a conditioning/target split."""


@dataclass(frozen=True)
class MaskPolicyConfig:
    mode: str = "geometry"  # "random" | "geometry"
    observable_ratio: float = 0.8
    polarity: str = "near"  # "near" | "far"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("random", "geometry"):
            raise ValueError(f"unknown mask mode {self.mode!r}")
        if not 0.0 < self.observable_ratio < 1.0:
            raise ValueError(f"observable_ratio must be in (0, 1), got {self.observable_ratio}")
        if self.polarity not in ("near", "far"):
            raise ValueError(f"unknown polarity {self.polarity!r}")


@dataclass(frozen=True)
class MaskPair:
    """Disjoint conditioning and target masks over one row (length C)."""

    cond: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        cond = np.asarray(self.cond, dtype=bool)
        target = np.asarray(self.target, dtype=bool)
        if cond.shape != target.shape:
            raise ValueError("cond/target shape mismatch")
        if (cond & target).any():
            raise ValueError("cond and target overlap")
        object.__setattr__(self, "cond", cond)
        object.__setattr__(self, "target", target)


def _cond_quota(n_observed: int, ratio: float) -> int:
    # both sets must stay non-empty, so clamp to [1, n-1]
    return min(max(round_half_away(ratio * n_observed), 1), n_observed - 1)


def random_split(table: FeatureTable, row: int, cfg: MaskPolicyConfig, rng: np.random.Generator) -> MaskPair:
    """Uniform random partition of the row's observed entries."""
    obs = np.flatnonzero(table.present[row])
    if len(obs) < 2:
        raise PolicyError(f"row {row} has {len(obs)} observed entries; need >= 2")
    n_cond = _cond_quota(len(obs), cfg.observable_ratio)
    perm = rng.permutation(obs)
    cond = np.zeros(table.n_clusters, dtype=bool)
    target = np.zeros(table.n_clusters, dtype=bool)
    cond[perm[:n_cond]] = True
    target[perm[n_cond:]] = True
    return MaskPair(cond, target)


def geometry_split(
    table: FeatureTable,
    row: int,
    dm: DistanceMatrix,
    cfg: MaskPolicyConfig,
    rng: np.random.Generator,
) -> MaskPair:
    """Distance-guided partition anchored on the row's missing clusters."""
    present = table.present[row]
    obs = np.flatnonzero(present)
    missing = np.flatnonzero(~present)
    if len(obs) < 2:
        raise PolicyError(f"row {row} has {len(obs)} observed entries; need >= 2")
    if len(missing) == 0:
        return random_split(table, row, cfg, rng)

    quota = _cond_quota(len(obs), cfg.observable_ratio)
    sign = 1.0 if cfg.polarity == "near" else -1.0
    # per missing cluster: observed candidates by (near|far) distance; stable
    # sort keeps ties in ascending cluster-index order (obs is ascending)
    scores = sign * dm.d[np.ix_(missing, obs)]
    rankings = obs[np.argsort(scores, axis=1, kind="stable")]

    claimed = np.zeros(table.n_clusters, dtype=bool)
    n_claimed = 0
    cursors = [0] * len(missing)
    n_obs = len(obs)
    while n_claimed < quota:
        for mi in range(len(missing)):
            if n_claimed >= quota:
                break
            ranking = rankings[mi]
            cur = cursors[mi]
            while cur < n_obs and claimed[ranking[cur]]:
                cur += 1
            cursors[mi] = cur
            if cur < n_obs:
                claimed[ranking[cur]] = True
                cursors[mi] = cur + 1
                n_claimed += 1

    cond = claimed
    target = np.zeros(table.n_clusters, dtype=bool)
    target[obs] = True
    target &= ~cond
    return MaskPair(cond, target)


def build_mask(
    table: FeatureTable,
    row: int,
    cfg: MaskPolicyConfig,
    rng: np.random.Generator,
    dm: DistanceMatrix | None = None,
) -> MaskPair:
    """Dispatch on the configured mode."""
    if cfg.mode == "random":
        return random_split(table, row, cfg, rng)
    if dm is None:
        raise ValueError("geometry mask policy requires a distance matrix")
    return geometry_split(table, row, dm, cfg, rng)
