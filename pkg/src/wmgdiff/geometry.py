"""Streamline and fiber-cluster geometry.

Distances follow the minimum average direct-flip (MDF) convention: two
streamlines resampled to the same point count are compared pointwise in
both orientations and the smaller mean distance wins.  Cluster-to-cluster
distance aggregates MDF over all streamline pairs (minimum by default,
mean behind a switch).

The pairwise kernel has a compiled core (Cython) with a NumPy fallback;
selection happens at import and can be forced with the ``WMG_BACKEND``
environment variable (``compiled`` | ``numpy``).
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _mdf_np

try:
    from . import _mdf as _mdf_ext
except ImportError:  # extension not built; fall back silently
    _mdf_ext = None

_FORCED = os.environ.get("WMG_BACKEND", "").strip().lower()
if _FORCED == "numpy":
    _backend = _mdf_np
elif _FORCED == "compiled":
    if _mdf_ext is None:
        raise ImportError("WMG_BACKEND=compiled but the extension is not built")
    _backend = _mdf_ext
else:
    _backend = _mdf_ext if _mdf_ext is not None else _mdf_np


def backend_name() -> str:
    return _backend.BACKEND_NAME


def set_backend(name: str):
    """Switch the distance kernel at runtime (mainly for benchmarks/tests)."""
    global _backend
    if name == "numpy":
        _backend = _mdf_np
    elif name == "compiled":
        if _mdf_ext is None:
            raise ValueError("compiled backend unavailable (extension not built)")
        _backend = _mdf_ext
    else:
        raise ValueError(f"unknown backend {name!r}")


def _locked(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Streamline:
    """Ordered polyline of 3D points (mm)."""

    points: np.ndarray  # (n, 3) float64

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 2:
            raise ValueError(f"streamline needs >= 2 points of dim 3, got shape {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("streamline has non-finite coordinates")
        object.__setattr__(self, "points", _locked(pts.copy()))

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class FiberCluster:
    id: str
    streamlines: tuple

    def __post_init__(self):
        if len(self.streamlines) < 1:
            raise ValueError(f"cluster {self.id!r} has no streamlines")
        object.__setattr__(self, "streamlines", tuple(self.streamlines))


@dataclass(frozen=True)
class Atlas:
    """Ordered clusters; the order fixes every table/matrix column order."""

    clusters: tuple

    def __post_init__(self):
        ids = [c.id for c in self.clusters]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate cluster id in atlas")
        object.__setattr__(self, "clusters", tuple(self.clusters))

    @property
    def cluster_ids(self) -> tuple:
        return tuple(c.id for c in self.clusters)

    def __len__(self):
        return len(self.clusters)


@dataclass(frozen=True)
class DistanceMatrix:
    cluster_ids: tuple
    d: np.ndarray  # (C, C) float64, symmetric, zero diagonal

    def __post_init__(self):
        d = np.asarray(self.d, dtype=np.float64)
        c = len(self.cluster_ids)
        if d.shape != (c, c):
            raise ValueError(f"distance matrix shape {d.shape} != ({c}, {c})")
        if not np.isfinite(d).all() or (d < 0).any():
            raise ValueError("distances must be finite and non-negative")
        if not np.array_equal(d, d.T) or np.any(np.diag(d) != 0.0):
            raise ValueError("distance matrix must be symmetric with zero diagonal")
        object.__setattr__(self, "cluster_ids", tuple(self.cluster_ids))
        object.__setattr__(self, "d", _locked(d.copy()))


def resample_streamline(s: Streamline, m: int) -> Streamline:
    """Resample to m points uniformly spaced by arc length along the polyline."""
    if m < 2:
        raise ValueError(f"m must be >= 2, got {m}")
    return Streamline(resample_points(s.points, m))


def resample_points(pts: np.ndarray, m: int) -> np.ndarray:
    """Arc-length uniform resampling of an (n, 3) polyline to (m, 3)."""
    pts = np.asarray(pts, dtype=np.float64)
    seg = np.sqrt(((pts[1:] - pts[:-1]) ** 2).sum(axis=1))
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total == 0.0:  # degenerate: all points identical
        return np.repeat(pts[:1], m, axis=0)
    targets = np.linspace(0.0, total, m)
    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(seg) - 1)
    frac = np.where(seg[idx] > 0, (targets - cum[idx]) / np.where(seg[idx] > 0, seg[idx], 1.0), 0.0)
    out = pts[idx] + frac[:, None] * (pts[idx + 1] - pts[idx])
    out[0] = pts[0]  # endpoints exact
    out[-1] = pts[-1]
    return out


def mdf_distance(a: Streamline, b: Streamline) -> float:
    """Minimum average direct-flip distance; inputs must share a point count."""
    if len(a) != len(b):
        raise ValueError(f"point counts differ: {len(a)} vs {len(b)}")
    return _backend.mdf(a.points, b.points)


def _resampled_stack(cluster: FiberCluster, m: int) -> np.ndarray:
    return np.ascontiguousarray(
        np.stack([resample_points(s.points, m) for s in cluster.streamlines])
    )


def cluster_distance(a: FiberCluster, b: FiberCluster, m: int, aggregate: str = "min") -> float:
    """Aggregate MDF over all streamline pairs after resampling to m points."""
    if m < 2:
        raise ValueError(f"m must be >= 2, got {m}")
    if len(a.streamlines) == 0 or len(b.streamlines) == 0:
        raise ValueError("empty cluster")
    return _backend.cluster_pair(_resampled_stack(a, m), _resampled_stack(b, m), aggregate)


def pairwise_distances(atlas: Atlas, m: int, aggregate: str = "min", threads: int = 1) -> DistanceMatrix:
    """Full cluster-by-cluster distance matrix.

    The upper triangle is computed canonically and mirrored, so the result
    is exactly symmetric and bit-identical for any worker count.
    """
    c = len(atlas)
    stacks = [_resampled_stack(cl, m) for cl in atlas.clusters]
    pairs = [(i, j) for i in range(c) for j in range(i + 1, c)]
    d = np.zeros((c, c))

    def entry(pair):
        i, j = pair
        return _backend.cluster_pair(stacks[i], stacks[j], aggregate)

    if threads > 1 and pairs:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            vals = list(pool.map(entry, pairs, chunksize=64))
    else:
        vals = [entry(p) for p in pairs]
    for (i, j), v in zip(pairs, vals):
        d[i, j] = v
        d[j, i] = v
    return DistanceMatrix(atlas.cluster_ids, d)


def rank_by_distance(dm: DistanceMatrix, targets, candidates):
    """Candidates sorted by min distance to any target; ties by index."""
    targets = sorted(set(int(t) for t in targets))
    candidates = sorted(set(int(c) for c in candidates))
    if not targets or not candidates:
        raise ValueError("targets and candidates must be non-empty")
    if set(targets) & set(candidates):
        raise ValueError("targets and candidates overlap")
    scores = dm.d[np.ix_(candidates, targets)].min(axis=1)
    order = sorted(range(len(candidates)), key=lambda k: (scores[k], candidates[k]))
    return [candidates[k] for k in order]


# --- file formats -----------------------------------------------------------


def save_atlas(atlas: Atlas, path) -> None:
    """JSON array of {id, streamlines: [[[x, y, z], ...], ...]}."""
    payload = [
        {"id": c.id, "streamlines": [s.points.tolist() for s in c.streamlines]}
        for c in atlas.clusters
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_atlas(path) -> Atlas:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if not isinstance(payload, list):
        raise ValueError(f"{path}: atlas file must be a JSON array of clusters")
    clusters = []
    for entry in payload:
        clusters.append(
            FiberCluster(
                str(entry["id"]),
                tuple(Streamline(np.asarray(pts, dtype=np.float64)) for pts in entry["streamlines"]),
            )
        )
    return Atlas(tuple(clusters))


def save_distance_matrix(dm: DistanceMatrix, path) -> None:
    """CSV with cluster-id header row and column, full symmetric matrix."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster_id", *dm.cluster_ids])
        for i, cid in enumerate(dm.cluster_ids):
            writer.writerow([cid, *[repr(float(v)) for v in dm.d[i]]])


def load_distance_matrix(path) -> DistanceMatrix:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        ids = tuple(header[1:])
        rows = []
        for row in reader:
            rows.append([float(v) for v in row[1:]])
    return DistanceMatrix(ids, np.asarray(rows))
