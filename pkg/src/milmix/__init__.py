"""Feature-level MixUp augmentation for multiple-instance learning on patch-descriptor bags."""

from .augment import AugmentConfig
from .core import Dataset, FeatureBag, RngStream, SoftLabel, SplitPlan, make_splits, one_hot, shuffle_bag
from .harness import ExperimentSpec, run_experiment
from .io import SyntheticSpec, generate_synthetic, load_dataset
from .model import ModelConfig
from .train import TrainConfig, train_one

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig",
    "Dataset",
    "ExperimentSpec",
    "FeatureBag",
    "ModelConfig",
    "RngStream",
    "SoftLabel",
    "SplitPlan",
    "SyntheticSpec",
    "TrainConfig",
    "generate_synthetic",
    "load_dataset",
    "make_splits",
    "one_hot",
    "run_experiment",
    "shuffle_bag",
    "train_one",
]
