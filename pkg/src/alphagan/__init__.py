"""alpha-GAN and baseline generative models on a small reverse-mode autodiff core."""

from .config import TrainingConfig
from .data import Dataset, make_dataset, procedural_shapes, ring_of_gaussians
from .trainers import TrainedModel, make_trainer, train

__all__ = [
    "Dataset",
    "TrainedModel",
    "TrainingConfig",
    "make_dataset",
    "make_trainer",
    "procedural_shapes",
    "ring_of_gaussians",
    "train",
]
__version__ = "0.1.0"
