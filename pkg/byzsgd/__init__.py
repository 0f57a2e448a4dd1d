# byzsgd/__init__.py
__version__ = "0.1.0"

"""
byzsgd - Byzantine-resilient distributed SGD on heterogeneous data

A simulator and library for spectral outlier filtering of worker gradients,
resilient SGD / GD training loops, rand-k compressed training, and the
attack and data-generation harness that checks their guarantees.
"""

# Robust gradient estimation
from .rge import (
    FilterReport,
    SaddleSolution,
    column_fit,
    default_sigma0_sq,
    default_sigma0_sq_compressed,
    estimate,
    filter_round,
    max_eig_deviation,
    solve_saddle,
)

# Training
from .trainer import (
    LRRule,
    TrainConfig,
    TrainMode,
    TrainResult,
    gamma_bound,
    learning_rate,
    run_training,
)

# Objectives and data
from .model import DomainSpec, LocalDataset, ObjectiveKind, ObjectiveSpec
from .datagen import HeteroModelSpec, generate, planted_gradients

# Adversaries and compression
from .attacks import AttackKind, AttackSpec, apply_attack, choose_corrupt_set
from .compression import CoordinateSet, draw_coords, select_scale

# Errors
from .errors import (
    ByzSGDError,
    ConfigError,
    FilterCollapsedError,
    FilterError,
    InfeasibleFilterError,
    TrainingAborted,
)

__all__ = [
    "__version__",
    "FilterReport",
    "SaddleSolution",
    "column_fit",
    "default_sigma0_sq",
    "default_sigma0_sq_compressed",
    "estimate",
    "filter_round",
    "max_eig_deviation",
    "solve_saddle",
    "LRRule",
    "TrainConfig",
    "TrainMode",
    "TrainResult",
    "gamma_bound",
    "learning_rate",
    "run_training",
    "DomainSpec",
    "LocalDataset",
    "ObjectiveKind",
    "ObjectiveSpec",
    "HeteroModelSpec",
    "generate",
    "planted_gradients",
    "AttackKind",
    "AttackSpec",
    "apply_attack",
    "choose_corrupt_set",
    "CoordinateSet",
    "draw_coords",
    "select_scale",
    "ByzSGDError",
    "ConfigError",
    "FilterCollapsedError",
    "FilterError",
    "InfeasibleFilterError",
    "TrainingAborted",
]
