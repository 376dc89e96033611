"""Exemplar-driven attention for visual question answering and question generation."""

from .data import Dataset, SyntheticSpec, generate_synthetic, load_dataset, save_dataset
from .models import Model, ModelConfig, init_model
from .optim import OptimConfig
from .train import build_exemplars, evaluate, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "Dataset", "SyntheticSpec", "generate_synthetic", "load_dataset", "save_dataset",
    "Model", "ModelConfig", "init_model", "OptimConfig",
    "build_exemplars", "evaluate", "load_checkpoint", "save_checkpoint", "train",
]
