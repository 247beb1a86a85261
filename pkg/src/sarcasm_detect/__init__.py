"""Multi-level cross-modal incongruity model for multimodal sarcasm detection."""

from .autograd import Tensor, backward
from .data_io import compute_metrics, parse_manifest, synth_dataset
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    GradCheckError,
    NonFiniteError,
    SarcasmDetectError,
    TrainingError,
)
from .gradcheck import finite_diff_check
from .model import ModelConfig, build_variant, forward
from .training import TrainConfig, load_checkpoint, lr_schedule, save_checkpoint, train_loop

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "DataError",
    "DimensionError",
    "GradCheckError",
    "ModelConfig",
    "NonFiniteError",
    "SarcasmDetectError",
    "Tensor",
    "TrainConfig",
    "TrainingError",
    "backward",
    "build_variant",
    "compute_metrics",
    "finite_diff_check",
    "forward",
    "load_checkpoint",
    "lr_schedule",
    "parse_manifest",
    "save_checkpoint",
    "synth_dataset",
    "train_loop",
]
