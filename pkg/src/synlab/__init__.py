"""Margin-based quality metrics and quality-guided training for synthetic data."""

from ._kernels import USE_NUMBA
from .errors import ConfigError, ContractError, ShapeError, TrainingDivergence
from .nn import ForwardOutput, LossSpec, ModelConfig, ModelState, backward, forward, init_model, sgd_step
from .testbed import (Dataset, GeneratorSpec, RealSpec, augment_strong, augment_weak,
                      make_real_dataset, sample_synthetic)
from .training import TrainConfig

__version__ = "0.1.0"

__all__ = [
    "USE_NUMBA", "ConfigError", "ContractError", "ShapeError", "TrainingDivergence",
    "ForwardOutput", "LossSpec", "ModelConfig", "ModelState", "backward", "forward",
    "init_model", "sgd_step", "Dataset", "GeneratorSpec", "RealSpec", "augment_strong",
    "augment_weak", "make_real_dataset", "sample_synthetic", "TrainConfig",
]
