from .schedule import NoiseSchedule, build_schedule, forward_noise
from .model import DenoiserConfig, DenoiserParams, init_params, denoise_eps
from .training import TrainConfig, train, training_step
from .sampling import impute, reverse_step
from .checkpoint import Checkpoint, CheckpointError, save_checkpoint, load_checkpoint

__all__ = [
    "NoiseSchedule",
    "build_schedule",
    "forward_noise",
    "DenoiserConfig",
    "DenoiserParams",
    "init_params",
    "denoise_eps",
    "TrainConfig",
    "train",
    "training_step",
    "impute",
    "reverse_step",
    "Checkpoint",
    "CheckpointError",
    "save_checkpoint",
    "load_checkpoint",
]
