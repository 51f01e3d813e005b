from .gae import compute_gae
from .loop import TrainResult, load_checkpoint, save_checkpoint, train
from .ppo import UpdateStats, adaptive_kl_lr, chunk_segments, ppo_update
from .rollout import EnvPool, EpisodeStats, RolloutBatch, TrajectoryPiece, build_training_maps

__all__ = [
    "EnvPool", "EpisodeStats", "RolloutBatch", "TrainResult", "TrajectoryPiece",
    "UpdateStats", "adaptive_kl_lr", "build_training_maps", "chunk_segments",
    "compute_gae", "load_checkpoint", "ppo_update", "save_checkpoint", "train",
]
