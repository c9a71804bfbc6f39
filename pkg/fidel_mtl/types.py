"""Core data models shared by the dataset, network and training layers."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from fidel_mtl.errors import ValidationError


Tensor = np.ndarray


@dataclass
class Settings:
    data_dir: str
    log_level: str
    deterministic: bool
    workers: int


@dataclass
class LabelTriple:
    label: int
    row: int
    col: int


@dataclass
class GlyphImage:
    """`pixels` is float in [0, 1] with 0 as ink, or u8 levels once quantized for storage."""

    pixels: Tensor
    source_writer: str
    label: int

    @property
    def canvas_size(self) -> int:
        return int(self.pixels.shape[0])


@dataclass
class TargetBatch:
    """1-based integer targets for a minibatch; one-hot is built on demand."""

    labels: np.ndarray
    rows: np.ndarray
    cols: np.ndarray

    def __len__(self) -> int:
        return int(self.labels.shape[0])


@dataclass
class AugmentationSpec:
    rotation_range: tuple[float, float] = (-15.0, 15.0)
    noise_density: float = 0.02
    shrink_range: tuple[float, float] = (0.70, 0.87)
    per_class_counts: tuple[int, int, int] = (4500, 800, 400)
    seed: int = 0

    def validate(self) -> None:
        low, high = self.rotation_range
        if not -15.0 <= low <= high <= 15.0:
            raise ValidationError(f"rotation range {self.rotation_range} must lie within [-15, 15]")
        low, high = self.shrink_range
        if not 0.0 < low <= high <= 1.0:
            raise ValidationError(f"shrink range {self.shrink_range} must lie within (0, 1]")
        if not 0.0 <= self.noise_density <= 1.0:
            raise ValidationError(f"noise density {self.noise_density} must lie within [0, 1]")
        if len(self.per_class_counts) != 3 or any(count < 1 for count in self.per_class_counts):
            raise ValidationError(f"per-class counts {self.per_class_counts} must be three positive integers")

    def to_dict(self) -> dict[str, Any]:
        return {
            "rotation_range": list(self.rotation_range),
            "noise_density": self.noise_density,
            "shrink_range": list(self.shrink_range),
            "per_class_counts": list(self.per_class_counts),
            "seed": self.seed,
        }


@dataclass
class TransformLog:
    label: int
    source_writer: str
    transforms: list[str]
    params: dict[str, float]


@dataclass
class DatasetManifest:
    canvas_size: int
    num_labels: int
    split_counts: dict[str, int]
    seed: int
    created_at: str
    grid_digest: str
    augmentation: dict[str, Any] | None = None
    augmentation_digest: str = ""

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "DatasetManifest":
        return cls(
            canvas_size=int(payload["canvas_size"]),
            num_labels=int(payload["num_labels"]),
            split_counts={str(k): int(v) for k, v in payload["split_counts"].items()},
            seed=int(payload["seed"]),
            created_at=str(payload["created_at"]),
            grid_digest=str(payload["grid_digest"]),
            augmentation=payload.get("augmentation"),
            augmentation_digest=str(payload.get("augmentation_digest", "")),
        )


@dataclass
class IngestReport:
    files_seen: int = 0
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


@dataclass
class ModelConfig:
    canvas_size: int = 32
    conv_stages: tuple[tuple[int, int], ...] = ((5, 80), (5, 64))
    hidden_units: int = 512
    num_labels: int = 265
    num_rows: int = 34
    num_cols: int = 9
    keep_prob: float = 0.3

    @property
    def head_sizes(self) -> tuple[int, int, int]:
        return (self.num_labels, self.num_rows, self.num_cols)


@dataclass
class TrainConfig:
    batch_size: int = 100
    learning_rate: float = 0.0001
    l2_lambda: float = 0.01
    keep_prob: float = 0.3
    alphas: tuple[float, float, float] = (1.0, 0.35, 0.65)
    max_epochs: int = 300
    early_stop_patience: int = 20
    early_stop_min_delta: float = 1e-4
    seed: int = 0
    optimizer: str = "adam"


@dataclass
class MultiHeadOutput:
    """Logits of the three heads; arrays carry a leading batch axis."""

    label_logits: Tensor
    row_logits: Tensor
    col_logits: Tensor

    def __len__(self) -> int:
        return int(self.label_logits.shape[0])

    def heads(self) -> tuple[Tensor, Tensor, Tensor]:
        return (self.label_logits, self.row_logits, self.col_logits)


@dataclass
class Prediction:
    label: int
    row: int
    col: int
    confidences: tuple[float, float, float]
    consistent: bool


@dataclass
class SplitMetrics:
    total_loss: float
    label_loss: float
    row_loss: float
    col_loss: float
    label_acc: float
    row_acc: float
    col_acc: float
    l2_loss: float = 0.0
    consistency: float = 0.0
    samples: int = 0

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


@dataclass
class MetricsRecord:
    epoch: int
    train: SplitMetrics | None = None
    val: SplitMetrics | None = None
    test: SplitMetrics | None = None
    seconds: float = 0.0

    def splits(self) -> list[tuple[str, SplitMetrics]]:
        return [
            (name, metrics)
            for name, metrics in (("train", self.train), ("val", self.val), ("test", self.test))
            if metrics is not None
        ]

    def to_dict(self) -> dict[str, Any]:
        return {
            "epoch": self.epoch,
            "seconds": self.seconds,
            **{name: metrics.to_dict() for name, metrics in self.splits()},
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "MetricsRecord":
        def _split(name: str) -> SplitMetrics | None:
            raw = payload.get(name)
            return SplitMetrics(**raw) if raw else None

        return cls(
            epoch=int(payload["epoch"]),
            train=_split("train"),
            val=_split("val"),
            test=_split("test"),
            seconds=float(payload.get("seconds", 0.0)),
        )
