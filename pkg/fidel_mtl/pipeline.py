"""End-to-end steps behind the CLI subcommands."""

from __future__ import annotations

from dataclasses import replace
from datetime import datetime, timezone
import hashlib
import json
import logging
import os
from pathlib import Path

import numpy as np

from fidel_mtl.alphabet.grid import AlphabetGrid, load_default_grid, load_grid, write_grid
from fidel_mtl.augment.expand import augment_split, write_transform_log
from fidel_mtl.augment.synth import synth_glyphs
from fidel_mtl.config import dump_json
from fidel_mtl.core.gradcheck import DEFAULT_EPSILON, GradCheckReport, gradient_check
from fidel_mtl.core.rng import STREAM_DROPOUT, STREAM_GRADCHECK, STREAM_INIT, RngStream
from fidel_mtl.core.tensor import CHECK_DTYPE
from fidel_mtl.dataset.container import DatasetSplit, find_split_file, read_container, write_container
from fidel_mtl.dataset.ingest import SPLIT_NAMES, ingest_directory, load_glyph_pixels, split_by_writer
from fidel_mtl.errors import ConfigurationError
from fidel_mtl.network.model import backward, build_model, forward, load_model, predict
from fidel_mtl.training.loop import FitResult, evaluate, fit
from fidel_mtl.training.loss import multitask_loss
from fidel_mtl.training.sweep import SweepRow, run_sweep
from fidel_mtl.types import (
    AugmentationSpec,
    DatasetManifest,
    GlyphImage,
    IngestReport,
    ModelConfig,
    Prediction,
    SplitMetrics,
    TargetBatch,
    TrainConfig,
)


LOGGER = logging.getLogger(__name__)

GRID_FILE = "grid.csv"
MANIFEST_FILE = "manifest.json"
DETERMINISTIC_EPOCH = 0


def manifest_timestamp(deterministic: bool) -> str:
    if deterministic:
        raw = os.getenv("SOURCE_DATE_EPOCH", "").strip()
        seconds = int(raw) if raw.isdigit() else DETERMINISTIC_EPOCH
        moment = datetime.fromtimestamp(seconds, tz=timezone.utc)
    else:
        moment = datetime.now(tz=timezone.utc)
    return moment.strftime("%Y-%m-%dT%H:%M:%SZ")


def augmentation_digest(spec: AugmentationSpec) -> str:
    canonical = json.dumps(spec.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_data_grid(data_dir: Path) -> AlphabetGrid:
    """The grid stored beside the containers, else the default alphabet."""
    path = data_dir / GRID_FILE
    if path.exists():
        return load_grid(path)
    LOGGER.warning("No %s in %s, using the default alphabet grid", GRID_FILE, data_dir)
    return load_default_grid()


def write_dataset(
    splits: dict[str, list[GlyphImage]],
    grid: AlphabetGrid,
    out_dir: Path,
    canvas_size: int,
    seed: int,
    deterministic: bool,
    augmentation: AugmentationSpec | None = None,
) -> DatasetManifest:
    manifest = DatasetManifest(
        canvas_size=canvas_size,
        num_labels=grid.num_labels,
        split_counts={name: len(samples) for name, samples in splits.items()},
        seed=seed,
        created_at=manifest_timestamp(deterministic),
        grid_digest=grid.digest(),
        augmentation=augmentation.to_dict() if augmentation else None,
        augmentation_digest=augmentation_digest(augmentation) if augmentation else "",
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    write_grid(grid, out_dir / GRID_FILE)
    for name, samples in splits.items():
        split = DatasetSplit.from_samples(name, samples, grid, canvas_size, manifest)
        write_container(split, find_split_file(out_dir, name))
    (out_dir / MANIFEST_FILE).write_text(dump_json(manifest.to_dict()), encoding="utf-8")
    return manifest


def run_ingest(
    src: Path,
    grid_path: Path,
    out_dir: Path,
    seed: int = 0,
    ratio: tuple[int, int, int] = (9, 2, 1),
    canvas_size: int = 32,
    workers: int = 1,
    deterministic: bool = False,
) -> tuple[DatasetManifest, IngestReport]:
    grid = load_grid(grid_path)
    samples, report = ingest_directory(src, grid, canvas_size=canvas_size, workers=workers)
    if not samples:
        raise ConfigurationError(f"no readable images under {src}")
    train, val, test = split_by_writer(samples, ratio=ratio, seed=seed)
    manifest = write_dataset(
        {"train": train, "val": val, "test": test}, grid, out_dir, canvas_size, seed, deterministic
    )
    return manifest, report


def run_synth(
    num_rows: int,
    num_cols: int,
    per_class: int,
    out_dir: Path,
    seed: int = 0,
    ratio: tuple[int, int, int] = (9, 2, 1),
    canvas_size: int = 32,
    deterministic: bool = False,
) -> DatasetManifest:
    """Synthesize, split by synthetic writer, and store like an ingested dataset."""
    samples, grid = synth_glyphs(num_rows, num_cols, per_class, seed=seed, canvas_size=canvas_size)
    train, val, test = split_by_writer(samples, ratio=ratio, seed=seed)
    return write_dataset({"train": train, "val": val, "test": test}, grid, out_dir, canvas_size, seed, deterministic)


def load_splits(data_dir: Path, grid: AlphabetGrid, names: tuple[str, ...] = SPLIT_NAMES) -> dict[str, DatasetSplit]:
    splits: dict[str, DatasetSplit] = {}
    for name in names:
        path = find_split_file(data_dir, name)
        if path.exists():
            splits[name] = read_container(path, grid)
    return splits


def run_augment(
    in_dir: Path,
    out_dir: Path,
    counts: tuple[int, int, int] = (4500, 800, 400),
    seed: int = 0,
    log_transforms: bool = False,
    workers: int = 1,
    deterministic: bool = False,
) -> DatasetManifest:
    spec = AugmentationSpec(per_class_counts=counts, seed=seed)
    spec.validate()
    grid = load_data_grid(in_dir)
    splits = load_splits(in_dir, grid)
    if not splits:
        raise FileNotFoundError(f"no split containers found in {in_dir}")
    canvas_size = next(iter(splits.values())).canvas_size
    labels = sorted({int(label) for split in splits.values() for label in np.unique(split.labels)})

    augmented: dict[str, list[GlyphImage]] = {}
    for stream, name in enumerate(SPLIT_NAMES):
        if name not in splits:
            continue
        images, logs = augment_split(
            splits[name].to_samples(),
            spec,
            counts[stream],
            stream=stream,
            labels=labels,
            workers=workers,
            quantize=True,
        )
        augmented[name] = images
        if log_transforms:
            write_transform_log(logs, out_dir / f"{name}.transforms.csv")
    return write_dataset(augmented, grid, out_dir, canvas_size, seed, deterministic, augmentation=spec)


def bind_model_config(config: ModelConfig, grid: AlphabetGrid, canvas_size: int) -> ModelConfig:
    """Head sizes follow the grid, canvas follows the data."""
    return replace(
        config,
        canvas_size=canvas_size,
        num_labels=grid.num_labels,
        num_rows=grid.num_rows,
        num_cols=grid.num_cols,
    )


def _training_splits(data_dir: Path) -> tuple[AlphabetGrid, dict[str, DatasetSplit]]:
    grid = load_data_grid(data_dir)
    splits = load_splits(data_dir, grid)
    for name in ("train", "val"):
        if name not in splits:
            raise FileNotFoundError(f"missing {find_split_file(data_dir, name)}")
    return grid, splits


def run_train(
    data_dir: Path,
    model_config: ModelConfig,
    train_config: TrainConfig,
    out_dir: Path,
    resume: bool = False,
    deterministic: bool = False,
) -> FitResult:
    grid, splits = _training_splits(data_dir)
    model_config = bind_model_config(model_config, grid, splits["train"].canvas_size)
    params = build_model(model_config, grid, RngStream(train_config.seed, STREAM_INIT))
    return fit(
        params,
        splits["train"],
        splits["val"],
        model_config,
        train_config,
        grid=grid,
        out_dir=out_dir,
        test=splits.get("test"),
        resume=resume,
        deterministic=deterministic,
    )


def run_sweep_experiment(
    data_dir: Path,
    alpha_triples: list[tuple[float, float, float]],
    seeds: list[int],
    model_config: ModelConfig,
    train_config: TrainConfig,
    out_dir: Path,
    deterministic: bool = False,
) -> list[SweepRow]:
    grid, splits = _training_splits(data_dir)
    model_config = bind_model_config(model_config, grid, splits["train"].canvas_size)
    return run_sweep(
        splits["train"],
        splits["val"],
        alpha_triples,
        seeds,
        model_config,
        train_config,
        out_dir,
        grid=grid,
        test=splits.get("test"),
        deterministic=deterministic,
    )


def run_eval(checkpoint: Path, data_file: Path) -> SplitMetrics:
    params, _, meta = load_model(checkpoint)
    train_config = meta.get("train_config", {})
    alphas = tuple(train_config.get("alphas", TrainConfig().alphas))
    l2_lambda = float(train_config.get("l2_lambda", TrainConfig().l2_lambda))
    grid = load_data_grid(data_file.parent)
    split = read_container(data_file, grid)
    return evaluate(params, split, alphas, l2_lambda, grid=grid)  # type: ignore[arg-type]


def run_predict(checkpoint: Path, image_path: Path, grid_path: Path) -> Prediction:
    params, config, _ = load_model(checkpoint)
    grid = load_grid(grid_path)
    pixels = load_glyph_pixels(image_path, config.canvas_size)
    return predict(params, pixels, grid)


def run_gradcheck(
    model_config: ModelConfig,
    train_config: TrainConfig,
    seed: int = 0,
    fault: str | None = None,
    batch_size: int = 4,
    epsilon: float = DEFAULT_EPSILON,
) -> GradCheckReport:
    """Full objective (three heads plus L2, dropout mask fixed) in float64."""
    params = build_model(model_config, None, RngStream(seed, STREAM_INIT), dtype=CHECK_DTYPE)
    if fault is not None and fault not in params.names():
        raise ConfigurationError(f"unknown parameter '{fault}'; choose from {', '.join(params.names())}")

    data_rng = RngStream(seed, STREAM_GRADCHECK, (1,))
    size = model_config.canvas_size
    images = data_rng.random((batch_size, size, size, 1)).astype(CHECK_DTYPE)
    targets = TargetBatch(
        labels=data_rng.integers(1, model_config.num_labels + 1, batch_size),
        rows=data_rng.integers(1, model_config.num_rows + 1, batch_size),
        cols=data_rng.integers(1, model_config.num_cols + 1, batch_size),
    )

    def _loss() -> float:
        params.zero_grad()
        outputs, cache = forward(
            params,
            images,
            mode="train",
            rng=RngStream(seed, STREAM_DROPOUT, (0,)),
            keep_prob=train_config.keep_prob,
        )
        loss = multitask_loss(outputs, targets, train_config.alphas, params, train_config.l2_lambda)
        backward(params, cache, loss.head_grads, fault=fault)
        return loss.total

    report = gradient_check(_loss, params, epsilon=epsilon, seed=seed)
    LOGGER.info("Gradient check: max relative error %.3e at %s", report.max_error, report.worst_param)
    return report
