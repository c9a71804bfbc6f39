"""Multi-task handwritten fidel recognition toolkit."""

from fidel_mtl.alphabet.grid import AlphabetGrid, grid_to_label, label_to_grid, load_default_grid, load_grid
from fidel_mtl.config import load_experiment_config, load_settings
from fidel_mtl.network.model import build_model, forward, predict
from fidel_mtl.training.loop import evaluate, fit, train_epoch
from fidel_mtl.training.loss import multitask_loss
from fidel_mtl.types import (
    AugmentationSpec,
    DatasetManifest,
    GlyphImage,
    MetricsRecord,
    ModelConfig,
    MultiHeadOutput,
    Prediction,
    SplitMetrics,
    TrainConfig,
)

__all__ = [
    "AlphabetGrid",
    "AugmentationSpec",
    "DatasetManifest",
    "GlyphImage",
    "MetricsRecord",
    "ModelConfig",
    "MultiHeadOutput",
    "Prediction",
    "SplitMetrics",
    "TrainConfig",
    "build_model",
    "evaluate",
    "fit",
    "forward",
    "grid_to_label",
    "label_to_grid",
    "load_default_grid",
    "load_experiment_config",
    "load_grid",
    "load_settings",
    "multitask_loss",
    "predict",
    "train_epoch",
]
