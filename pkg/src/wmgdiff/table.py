"""Subjects-by-clusters feature table with explicit missingness.

Missing entries are tracked by a boolean ``present`` matrix rather than a
sentinel value because 0.0 is a legal feature value.  Internally the value
matrix carries NaN wherever ``present`` is false, so accidental reads of
undefined entries poison downstream arithmetic instead of passing silently.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .rng import derive_rng


class ParseError(ValueError):
    """Malformed table file (bad row length, unparseable cell, ...)."""


class ValidationError(ValueError):
    """Structurally invalid table (duplicate ids, shape mismatch, ...)."""


def _locked(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class FeatureTable:
    """N subjects x C clusters of scalar features plus a presence matrix."""

    subject_ids: tuple
    cluster_ids: tuple
    values: np.ndarray  # (N, C) float64, NaN where present is False
    present: np.ndarray  # (N, C) bool

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        present = np.asarray(self.present, dtype=bool)
        n, c = len(self.subject_ids), len(self.cluster_ids)
        if values.shape != (n, c) or present.shape != (n, c):
            raise ValidationError(
                f"shape mismatch: values {values.shape}, present {present.shape}, "
                f"expected ({n}, {c})"
            )
        if len(set(self.subject_ids)) != n:
            raise ValidationError("duplicate subject id")
        if len(set(self.cluster_ids)) != c:
            raise ValidationError("duplicate cluster id")
        values = np.where(present, values, np.nan)
        object.__setattr__(self, "subject_ids", tuple(self.subject_ids))
        object.__setattr__(self, "cluster_ids", tuple(self.cluster_ids))
        object.__setattr__(self, "values", _locked(values))
        object.__setattr__(self, "present", _locked(present.copy()))

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_ids)

    @property
    def observed_count(self) -> int:
        return int(self.present.sum())

    def filled(self, fill: float = 0.0) -> np.ndarray:
        """Values with missing entries replaced by ``fill`` (a copy)."""
        return np.where(self.present, self.values, fill)

    def rows(self, idx) -> "FeatureTable":
        """Sub-table containing the given row indices, in the given order."""
        idx = np.asarray(idx, dtype=int)
        return FeatureTable(
            tuple(self.subject_ids[i] for i in idx),
            self.cluster_ids,
            self.values[idx],
            self.present[idx],
        )

    def with_values(self, values: np.ndarray, present: np.ndarray) -> "FeatureTable":
        """Same ids, new data."""
        return FeatureTable(self.subject_ids, self.cluster_ids, values, present)


@dataclass(frozen=True)
class EntryMask:
    """Boolean matrix addressing entries of a table of the same shape."""

    bits: np.ndarray  # (N, C) bool

    def __post_init__(self):
        object.__setattr__(self, "bits", _locked(np.asarray(self.bits, dtype=bool).copy()))

    @property
    def count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class FoldSplit:
    fold_index: int
    train_rows: np.ndarray  # sorted int indices
    test_rows: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "train_rows", _locked(np.sort(np.asarray(self.train_rows, dtype=int))))
        object.__setattr__(self, "test_rows", _locked(np.sort(np.asarray(self.test_rows, dtype=int))))


def observed_mask(table: FeatureTable) -> EntryMask:
    return EntryMask(table.present)


def load_feature_table(path) -> FeatureTable:
    """Read the feature-table CSV dialect (empty cell = missing)."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if not header or header[0] != "subject_id":
            raise ParseError(f"{path}: first header cell must be 'subject_id'")
        cluster_ids = tuple(header[1:])
        subject_ids = []
        values = []
        present = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(cluster_ids) + 1:
                raise ParseError(
                    f"{path}: line {lineno}: expected {len(cluster_ids) + 1} cells, got {len(row)}"
                )
            subject_ids.append(row[0])
            vals = np.empty(len(cluster_ids))
            pres = np.empty(len(cluster_ids), dtype=bool)
            for j, cell in enumerate(row[1:]):
                if cell == "":
                    vals[j], pres[j] = np.nan, False
                else:
                    try:
                        vals[j] = float(cell)
                    except ValueError:
                        raise ParseError(f"{path}: line {lineno}: bad number {cell!r}") from None
                    pres[j] = True
            values.append(vals)
            present.append(pres)
    n, c = len(subject_ids), len(cluster_ids)
    values = np.asarray(values).reshape(n, c)
    present = np.asarray(present).reshape(n, c)
    return FeatureTable(tuple(subject_ids), cluster_ids, values, present)


def save_feature_table(table: FeatureTable, path) -> None:
    """Write the CSV dialect; values use shortest round-trip decimal form."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", *table.cluster_ids])
        for i, sid in enumerate(table.subject_ids):
            row = [sid]
            for j in range(table.n_clusters):
                row.append(repr(float(table.values[i, j])) if table.present[i, j] else "")
            writer.writerow(row)


def split_folds(table: FeatureTable, k: int, seed: int):
    """Partition rows into k near-equal test sets (deterministic per seed)."""
    n = table.n_subjects
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds row count {n}")
    perm = derive_rng(seed, "table.split_folds").permutation(n)
    base, extra = divmod(n, k)
    folds = []
    start = 0
    for f in range(k):
        size = base + (1 if f < extra else 0)
        test = perm[start : start + size]
        train = np.setdiff1d(np.arange(n), test)
        folds.append(FoldSplit(f, train, test))
        start += size
    return folds


def round_half_away(x: float) -> int:
    """Round half away from zero (so 20% of a multiple of 5 is exact)."""
    return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))


def inject_synthetic_missing(table: FeatureTable, fraction: float, seed: int):
    """Drop a uniform random subset of observed entries.

    Returns the corrupted copy and the mask of dropped entries; the dropped
    count is round(fraction * observed_count), half away from zero.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    obs = np.argwhere(table.present)
    if len(obs) == 0:
        raise ValueError("table has no observed entries")
    n_drop = round_half_away(fraction * len(obs))
    dropped = np.zeros_like(table.present)
    if n_drop == 0:
        return table, EntryMask(dropped)
    pick = derive_rng(seed, "table.inject_missing").choice(len(obs), size=n_drop, replace=False)
    rows, cols = obs[pick, 0], obs[pick, 1]
    dropped[rows, cols] = True
    new_present = table.present & ~dropped
    return table.with_values(table.values, new_present), EntryMask(dropped)
