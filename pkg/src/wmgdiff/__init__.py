"""Geometry-guided conditional diffusion imputation for fiber-cluster
microstructure tables, with classical baselines and a fold benchmark."""

__version__ = "0.1.0"

from .table import (
    EntryMask,
    FeatureTable,
    FoldSplit,
    inject_synthetic_missing,
    load_feature_table,
    observed_mask,
    save_feature_table,
    split_folds,
)
from .geometry import (
    Atlas,
    DistanceMatrix,
    FiberCluster,
    Streamline,
    cluster_distance,
    mdf_distance,
    pairwise_distances,
    rank_by_distance,
    resample_streamline,
)
from .masking import MaskPair, MaskPolicyConfig, geometry_split, random_split
from .diffusion import (
    Checkpoint,
    DenoiserConfig,
    NoiseSchedule,
    TrainConfig,
    build_schedule,
    denoise_eps,
    forward_noise,
    impute,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .baselines import impute_chained, impute_constant
from .evaluate import (
    BenchmarkReport,
    LogisticModel,
    MethodSpec,
    accuracy,
    fit_logistic,
    rmse,
    run_benchmark,
)
from .synthetic import SynthConfig, gen_atlas, gen_features, inject_structured_missing
