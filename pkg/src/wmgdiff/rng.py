"""Labeled random-stream derivation.

Every stochastic routine in the package draws from a generator derived
from one root seed plus a stable label path (module name, loop indices,
...).  Streams are independent of iteration order and of how work is
distributed across workers, so adding parallelism cannot reorder draws.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root_seed: int, *labels) -> int:
    """Hash ``(root_seed, labels...)`` into a 128-bit stream seed."""
    h = hashlib.sha256()
    h.update(str(int(root_seed)).encode("ascii"))
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode("utf-8"))
    return int.from_bytes(h.digest()[:16], "little")


def derive_rng(root_seed: int, *labels) -> np.random.Generator:
    """Generator for the stream named by ``labels`` under ``root_seed``."""
    return np.random.default_rng(np.random.SeedSequence(derive_seed(root_seed, *labels)))
