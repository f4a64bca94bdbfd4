"""Synthetic stand-in dataset: atlas geometry, feature tables, labels.

Clusters are gentle arc bundles scattered in a cube, so inter-cluster
distances track centroid layout.  Feature values combine a subject-scaled
smooth spatial field (linear, long-range structure) with a per-subject
traveling-bump response over a second smooth field (nonlinear, local
structure) plus i.i.d. noise, then clamp to [0, 1].  Nearby clusters
therefore carry correlated values, and the informative signal for any
cluster concentrates in its geometric neighbourhood.

Structured missingness marks a few "fragile" clusters that drop out at a
high rate, with a low background rate elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Atlas, FiberCluster, Streamline
from .rng import derive_rng
from .table import FeatureTable


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 500
    n_clusters: int = 60
    streamlines_per_cluster: int = 10
    points_per_streamline: int = 15
    spatial_scale: float = 100.0  # mm cube side
    value_smoothness: float = 30.0  # mm correlation length of the value fields
    noise_std: float = 0.03
    n_fragile_clusters: int = 6
    fragile_missing_rate: float = 0.7
    background_missing_rate: float = 0.01
    label_sparsity: int = 8  # clusters driving the label
    seed: int = 0
    field_scale: float = 1.5  # amplitude of the subject-scaled field
    bump_amp: float = 0.12  # amplitude of the traveling-bump response
    bump_width: float = 0.15  # bump width in field-phase units
    n_regions: int = 0  # overlapping regional-effect kernels (0 = off)
    region_smoothness: float = 15.0  # mm spatial extent of a regional effect
    region_rate: float = 0.3  # per-subject probability a region is active
    region_amp: float = 0.1  # regional effect amplitude
    label_gain: float = 2.0  # logit scale of the label draw

    def __post_init__(self):
        for name in ("fragile_missing_rate", "background_missing_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        for name in (
            "n_subjects", "n_clusters", "streamlines_per_cluster",
            "points_per_streamline", "label_sparsity",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.label_sparsity > self.n_clusters:
            raise ValueError("label_sparsity exceeds n_clusters")
        if self.n_fragile_clusters > self.n_clusters:
            raise ValueError("n_fragile_clusters exceeds n_clusters")


def _unit(v):
    n = np.linalg.norm(v)
    return v / n if n > 0 else np.array([1.0, 0.0, 0.0])


def gen_atlas(cfg: SynthConfig) -> Atlas:
    """Clusters of jittered quadratic arcs around uniform centroids."""
    rng = derive_rng(cfg.seed, "synth.atlas")
    scale = cfg.spatial_scale
    clusters = []
    s_param = np.linspace(0.0, 1.0, cfg.points_per_streamline)[:, None]
    for ci in range(cfg.n_clusters):
        centroid = rng.uniform(0.0, scale, 3)
        direction = _unit(rng.standard_normal(3))
        length = scale * (0.08 + 0.04 * rng.random())
        bend = _unit(np.cross(direction, rng.standard_normal(3))) * 0.15 * length
        streamlines = []
        for _ in range(cfg.streamlines_per_cluster):
            jitter = rng.normal(0.0, 0.015 * scale, (3, 3))
            p0 = centroid - 0.5 * length * direction + jitter[0]
            p1 = centroid + bend + jitter[1]
            p2 = centroid + 0.5 * length * direction + jitter[2]
            pts = (1 - s_param) ** 2 * p0 + 2 * (1 - s_param) * s_param * p1 + s_param**2 * p2
            streamlines.append(Streamline(pts))
        clusters.append(FiberCluster(f"c{ci:03d}", tuple(streamlines)))
    return Atlas(tuple(clusters))


def cluster_centroids(atlas: Atlas) -> np.ndarray:
    return np.stack(
        [np.concatenate([s.points for s in c.streamlines]).mean(axis=0) for c in atlas.clusters]
    )


def _kernel_field(centroids, rng, length_scale, n_kernels):
    centers = rng.uniform(centroids.min(), centroids.max(), (n_kernels, 3))
    weights = rng.standard_normal(n_kernels)
    d2 = ((centroids[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
    raw = (np.exp(-d2 / (2.0 * length_scale**2)) * weights).sum(axis=1)
    return raw


def _standardize(x):
    std = x.std()
    return (x - x.mean()) / std if std > 0 else np.zeros_like(x)


def _average_rank(x):
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j)
        i = j + 1
    return ranks


def gen_features(atlas: Atlas, cfg: SynthConfig):
    """Fully observed feature table plus binary labels.

    v[s, c] = clamp01(0.5 + a_s * f(centroid_c)
                          + bump_amp * (K(u_s, phi_c) - E_u K)
                          + eta),  eta ~ N(0, noise_std^2)

    with a_s ~ N(0.15, 0.05^2) scaling a shared smooth field f, and a
    per-subject phase u_s ~ U(0,1) activating a Gaussian bump over a
    second smooth field phi (rank-normalized to [0, 1]).
    """
    rng = derive_rng(cfg.seed, "synth.features")
    centroids = cluster_centroids(atlas)
    c = cfg.n_clusters
    n_kernels = max(6, c // 5)

    f_field = cfg.field_scale * _standardize(
        _kernel_field(centroids, rng, cfg.value_smoothness, n_kernels)
    )
    phi_raw = _kernel_field(centroids, rng, cfg.value_smoothness, n_kernels)
    phi = _average_rank(phi_raw) / max(c - 1, 1)

    a = rng.normal(0.15, 0.05, cfg.n_subjects)
    u = rng.random(cfg.n_subjects)
    bump = np.exp(-((u[:, None] - phi[None, :]) ** 2) / (2.0 * cfg.bump_width**2))
    # column expectation of the bump over u ~ U(0,1), dense trapezoid
    ugrid = np.linspace(0.0, 1.0, 2001)
    bump_mean = np.trapezoid(
        np.exp(-((ugrid[:, None] - phi[None, :]) ** 2) / (2.0 * cfg.bump_width**2)),
        ugrid, axis=0,
    )
    regional = 0.0
    if cfg.n_regions > 0:
        # overlapping regional effects, each on or off per subject; a cluster
        # sums the active regions covering it, so unmixing them from observed
        # neighbours is a combinatorial (nonlinear) inference
        centers = rng.uniform(centroids.min(), centroids.max(), (cfg.n_regions, 3))
        d2 = ((centroids[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        coverage = np.exp(-d2 / (2.0 * cfg.region_smoothness**2))  # (C, K)
        signs = rng.choice([-1.0, 1.0], cfg.n_regions)
        active = rng.random((cfg.n_subjects, cfg.n_regions)) < cfg.region_rate
        regional = cfg.region_amp * (active * signs) @ coverage.T

    eta = rng.normal(0.0, cfg.noise_std, (cfg.n_subjects, c)) if cfg.noise_std > 0 else 0.0
    raw = (
        0.5
        + a[:, None] * f_field[None, :]
        + cfg.bump_amp * (bump - bump_mean[None, :])
        + regional
        + eta
    )
    values = np.clip(raw, 0.0, 1.0)

    drivers = np.sort(rng.choice(c, cfg.label_sparsity, replace=False))
    beta = rng.standard_normal(cfg.label_sparsity)
    cols = values[:, drivers]
    col_std = cols.std(axis=0)
    zs = (cols - cols.mean(axis=0)) / np.where(col_std == 0, 1.0, col_std)
    logits = cfg.label_gain * (zs @ beta) / np.linalg.norm(beta)
    probs = 1.0 / (1.0 + np.exp(-logits))
    labels = (rng.random(cfg.n_subjects) < probs).astype(int)

    subject_ids = tuple(f"s{i:04d}" for i in range(cfg.n_subjects))
    table = FeatureTable(
        subject_ids, atlas.cluster_ids, values, np.ones_like(values, dtype=bool)
    )
    return table, labels


def inject_structured_missing(truth: FeatureTable, cfg: SynthConfig) -> FeatureTable:
    """Fragile clusters drop at a high rate, the rest at the background rate."""
    rng = derive_rng(cfg.seed, "synth.missing")
    c = truth.n_clusters
    fragile = rng.choice(c, cfg.n_fragile_clusters, replace=False)
    rates = np.full(c, cfg.background_missing_rate)
    rates[fragile] = cfg.fragile_missing_rate
    drop = rng.random((truth.n_subjects, c)) < rates[None, :]
    present = truth.present & ~drop
    return truth.with_values(truth.values, present)


def save_labels(labels, subject_ids, path) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "label"])
        for sid, lab in zip(subject_ids, labels):
            writer.writerow([sid, int(lab)])


def load_labels(path, subject_ids) -> np.ndarray:
    import csv

    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["subject_id", "label"]:
            raise ValueError(f"{path}: expected header subject_id,label")
        by_id = {}
        for row in reader:
            by_id[row[0]] = int(row[1])
    missing = [s for s in subject_ids if s not in by_id]
    if missing:
        raise ValueError(f"{path}: no label for subject {missing[0]!r}")
    return np.array([by_id[s] for s in subject_ids], dtype=int)
