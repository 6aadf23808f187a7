"""Body-weight estimation from bed pressure images."""

from .data import (Dataset, FormatId, JointSet, Posture, PressureFrame, Sample, SplitSpec, load_dataset,
                   save_dataset, split_loso, split_random_kfold, split_weight_binned)
from .errors import (AggregationError, CheckpointError, ConfigError, FormatError, GenerationError, LoadError,
                     MassNetError, NumericError, ShapeError, SplitError, TrainingDiverged)
from .losses import ContrastiveBatch, masscon_loss, mae_loss, overall_loss, penalty_factor
from .network import MassNet, ModelConfig, build_model, count_parameters, load_checkpoint, save_checkpoint
from .preprocess import PreprocessConfig, preprocess_pipeline
from .training import MassNetRegressor, TrainConfig, train_model

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "FormatId",
    "JointSet",
    "Posture",
    "PressureFrame",
    "Sample",
    "SplitSpec",
    "load_dataset",
    "save_dataset",
    "split_loso",
    "split_random_kfold",
    "split_weight_binned",
    "AggregationError",
    "CheckpointError",
    "ConfigError",
    "FormatError",
    "GenerationError",
    "LoadError",
    "MassNetError",
    "NumericError",
    "ShapeError",
    "SplitError",
    "TrainingDiverged",
    "ContrastiveBatch",
    "masscon_loss",
    "mae_loss",
    "overall_loss",
    "penalty_factor",
    "MassNet",
    "ModelConfig",
    "build_model",
    "count_parameters",
    "load_checkpoint",
    "save_checkpoint",
    "PreprocessConfig",
    "preprocess_pipeline",
    "MassNetRegressor",
    "TrainConfig",
    "train_model",
]
