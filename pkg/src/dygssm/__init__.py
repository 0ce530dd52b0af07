"""Dynamic-graph link prediction with local/global encoders and state-space gradient updates."""

from .config import RunConfig
from .errors import (ConfigError, ConsistencyError, ContractError, DyGSSMError, InputError, NumericError,
                     ShapeError)
from .evaluation import evaluate
from .graph import DynamicGraph, Snapshot, load_dataset, partition_snapshots
from .model import ModelConfig, ModelParams
from .synthetic import SyntheticSpec, generate_synthetic
from .trainer import TrainedModel, train
from .walk import WalkCache, WalkConfig, build_cache

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "ConfigError", "ConsistencyError", "ContractError", "DyGSSMError", "InputError",
    "NumericError", "ShapeError", "evaluate", "DynamicGraph", "Snapshot", "load_dataset",
    "partition_snapshots", "ModelConfig", "ModelParams", "SyntheticSpec", "generate_synthetic",
    "TrainedModel", "train", "WalkCache", "WalkConfig", "build_cache",
]
