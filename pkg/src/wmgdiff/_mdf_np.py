"""NumPy fallback for the streamline-distance kernels.

Mirrors the compiled extension's interface; used when the extension is not
built or when explicitly selected.  All accumulation is float64.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"


def mdf(a: np.ndarray, b: np.ndarray) -> float:
    """Minimum average direct-flip distance of two (m, 3) streamlines."""
    direct = np.sqrt(((a - b) ** 2).sum(axis=1)).mean()
    flipped = np.sqrt(((a - b[::-1]) ** 2).sum(axis=1)).mean()
    return float(min(direct, flipped))


def cluster_pair(a: np.ndarray, b: np.ndarray, aggregate: str = "min") -> float:
    """Aggregate MDF over all streamline pairs of two (S, m, 3) stacks."""
    diff = a[:, None, :, :] - b[None, :, :, :]
    direct = np.sqrt((diff**2).sum(axis=-1)).mean(axis=-1)
    diff_f = a[:, None, :, :] - b[None, :, ::-1, :]
    flipped = np.sqrt((diff_f**2).sum(axis=-1)).mean(axis=-1)
    pairwise = np.minimum(direct, flipped)
    if aggregate == "min":
        return float(pairwise.min())
    if aggregate == "mean":
        return float(pairwise.mean())
    raise ValueError(f"unknown aggregate {aggregate!r}")
