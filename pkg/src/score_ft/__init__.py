"""Self-supervised correspondence fine-tuning at desk scale.

Soft-DTW loss and divergence, speed/pitch perturbations, a frozen and a
learnable twin encoder trained to agree across perturbations, and
DTW-based query-by-example scoring.
"""

__version__ = "0.1.0"

from .core import AlignmentPath, FeatureSequence, Waveform, read_feature_file, write_feature_file
from .frontend import MelConfig, load_wav, log_mel, save_wav
from .perturb import PerturbConfig, make_perturbed, pitch_shift, speed_perturb
from .softdtw import (
    SoftDtwConfig,
    brute_force_soft_dtw,
    hard_dtw,
    normalized_divergence,
    soft_dtw,
    soft_min,
    subsequence_dtw,
)
from .qbe import rank_queries, score_pair
from .trainer import TrainConfig, lr_at, run_training, train_step

__all__ = [
    "AlignmentPath",
    "FeatureSequence",
    "Waveform",
    "read_feature_file",
    "write_feature_file",
    "MelConfig",
    "load_wav",
    "log_mel",
    "save_wav",
    "PerturbConfig",
    "make_perturbed",
    "pitch_shift",
    "speed_perturb",
    "SoftDtwConfig",
    "brute_force_soft_dtw",
    "hard_dtw",
    "normalized_divergence",
    "soft_dtw",
    "soft_min",
    "subsequence_dtw",
    "rank_queries",
    "score_pair",
    "TrainConfig",
    "lr_at",
    "run_training",
    "train_step",
]
