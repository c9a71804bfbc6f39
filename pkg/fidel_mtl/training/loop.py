"""Epoch loop, evaluation, early stopping and the checkpointed fit driver."""

from __future__ import annotations

from dataclasses import dataclass, replace
import json
import logging
import math
from pathlib import Path
import time
from typing import Any

import numpy as np

from fidel_mtl.alphabet.grid import AlphabetGrid
from fidel_mtl.config import dump_json, model_config_to_dict, train_config_to_dict, validate_train_config
from fidel_mtl.core.checkpoint import load_checkpoint, save_checkpoint
from fidel_mtl.core.rng import STREAM_DROPOUT, STREAM_SHUFFLE, RngStream
from fidel_mtl.core.tensor import Parameters
from fidel_mtl.dataset.container import DatasetSplit
from fidel_mtl.errors import ConfigurationError, ValidationError
from fidel_mtl.network.model import (
    argmax_predictions,
    backward,
    consistent_mask,
    copy_values,
    forward,
    load_values,
    params_from_values,
    save_model,
)
from fidel_mtl.training.loss import LossBreakdown, active_params, multitask_loss
from fidel_mtl.training.optim import Optimizer, build_optimizer
from fidel_mtl.types import MetricsRecord, ModelConfig, MultiHeadOutput, SplitMetrics, TargetBatch, TrainConfig


LOGGER = logging.getLogger(__name__)

METRICS_HEADER = (
    "epoch",
    "split",
    "total_loss",
    "label_loss",
    "row_loss",
    "col_loss",
    "label_acc",
    "row_acc",
    "col_acc",
    "seconds",
)
METRICS_FILE = "metrics.csv"
BEST_CHECKPOINT = "best.amcp"
LAST_CHECKPOINT = "last.amcp"
RUN_CONFIG_FILE = "run_config.json"
EVAL_BATCH_SIZE = 256


def minibatches(count: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Shuffled index batches for one epoch; the last one may be partial."""
    order = RngStream(seed, STREAM_SHUFFLE).substream(epoch).permutation(count)
    return [order[start : start + batch_size] for start in range(0, count, batch_size)]


class _MetricsAccumulator:
    """Sample-weighted running means over minibatches."""

    def __init__(self, grid: AlphabetGrid | None) -> None:
        self.grid = grid
        self.samples = 0
        self.sums = np.zeros(5, dtype=np.float64)
        self.correct = np.zeros(3, dtype=np.int64)
        self.consistent = 0

    def add(self, loss: LossBreakdown, outputs: MultiHeadOutput, targets: TargetBatch) -> None:
        size = len(targets)
        self.samples += size
        self.sums += size * np.array([loss.total, loss.label, loss.row, loss.col, loss.l2], dtype=np.float64)
        labels, rows, cols = argmax_predictions(outputs)
        self.correct += [
            int(np.sum(labels == targets.labels)),
            int(np.sum(rows == targets.rows)),
            int(np.sum(cols == targets.cols)),
        ]
        if self.grid is not None:
            self.consistent += int(np.sum(consistent_mask(labels, rows, cols, self.grid)))

    def result(self) -> SplitMetrics:
        means = self.sums / self.samples
        accuracy = self.correct / self.samples
        return SplitMetrics(
            total_loss=float(means[0]),
            label_loss=float(means[1]),
            row_loss=float(means[2]),
            col_loss=float(means[3]),
            label_acc=float(accuracy[0]),
            row_acc=float(accuracy[1]),
            col_acc=float(accuracy[2]),
            l2_loss=float(means[4]),
            consistency=self.consistent / self.samples if self.grid is not None else 0.0,
            samples=self.samples,
        )


def train_epoch(
    params: Parameters,
    split: DatasetSplit,
    config: TrainConfig,
    optimizer: Optimizer,
    epoch: int = 1,
    grid: AlphabetGrid | None = None,
) -> MetricsRecord:
    """One pass: forward, loss, backward and an update per minibatch, training mode."""
    if len(split) == 0:
        raise ConfigurationError(f"training container '{split.name}' is empty")
    trainable = active_params(params, config.alphas)
    dropout_stream = RngStream(config.seed, STREAM_DROPOUT)
    accumulator = _MetricsAccumulator(grid)

    for batch_index, indices in enumerate(minibatches(len(split), config.batch_size, config.seed, epoch)):
        targets = split.targets(indices)
        params.zero_grad()
        outputs, cache = forward(
            params,
            split.images(indices),
            mode="train",
            rng=dropout_stream.substream(epoch, batch_index),
            keep_prob=config.keep_prob,
        )
        loss = multitask_loss(outputs, targets, config.alphas, params, config.l2_lambda)
        backward(params, cache, loss.head_grads)
        optimizer.step(trainable)
        accumulator.add(loss, outputs, targets)

    return MetricsRecord(epoch=epoch, train=accumulator.result())


def evaluate(
    params: Parameters,
    split: DatasetSplit,
    alphas: tuple[float, float, float],
    l2_lambda: float = 0.0,
    grid: AlphabetGrid | None = None,
    batch_size: int = EVAL_BATCH_SIZE,
) -> SplitMetrics:
    """Evaluation-mode losses, accuracies and grid consistency; parameters are not touched."""
    if len(split) == 0:
        raise ConfigurationError(f"container '{split.name}' is empty")
    accumulator = _MetricsAccumulator(grid)
    for start in range(0, len(split), batch_size):
        indices = np.arange(start, min(start + batch_size, len(split)))
        targets = split.targets(indices)
        outputs, _ = forward(params, split.images(indices), mode="eval")
        accumulator.add(multitask_loss(outputs, targets, alphas, params, l2_lambda, accumulate_l2=False), outputs, targets)
    return accumulator.result()


class EarlyStopping:
    """Stop after ``patience`` epochs without an improvement larger than ``min_delta``."""

    def __init__(self, patience: int, min_delta: float) -> None:
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.best_epoch = 0
        self.wait = 0

    def update(self, epoch: int, value: float) -> bool:
        if value < self.best - self.min_delta:
            self.best = value
            self.best_epoch = epoch
            self.wait = 0
            return True
        self.wait += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.wait >= self.patience

    def state_dict(self) -> dict[str, Any]:
        return {"best": self.best, "best_epoch": self.best_epoch, "wait": self.wait}

    def load_state_dict(self, state: dict[str, Any]) -> None:
        self.best = float(state["best"])
        self.best_epoch = int(state["best_epoch"])
        self.wait = int(state["wait"])


def early_stop(history: list[float], patience: int, min_delta: float) -> bool:
    if not history:
        raise ValidationError("early_stop needs at least one validation loss")
    stopper = EarlyStopping(patience, min_delta)
    for epoch, value in enumerate(history, start=1):
        stopper.update(epoch, value)
    return stopper.should_stop


def _format(value: float) -> str:
    return format(value, ".9g")


def metrics_rows(history: list[MetricsRecord]) -> list[list[str]]:
    rows: list[list[str]] = []
    for record in history:
        for name, metrics in record.splits():
            rows.append(
                [
                    str(record.epoch),
                    name,
                    *(
                        _format(value)
                        for value in (
                            metrics.total_loss,
                            metrics.label_loss,
                            metrics.row_loss,
                            metrics.col_loss,
                            metrics.label_acc,
                            metrics.row_acc,
                            metrics.col_acc,
                        )
                    ),
                    format(record.seconds, ".3f"),
                ]
            )
    return rows


def write_metrics_csv(history: list[MetricsRecord], path: Path) -> None:
    lines = [",".join(METRICS_HEADER)] + [",".join(row) for row in metrics_rows(history)]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class FitResult:
    best_params: Parameters
    history: list[MetricsRecord]
    best_epoch: int
    epochs_run: int
    stopped_early: bool
    test: SplitMetrics | None = None

    @property
    def best_record(self) -> MetricsRecord | None:
        for record in self.history:
            if record.epoch == self.best_epoch:
                return record
        return None


def _resume_compatible(saved: dict[str, Any], current: dict[str, Any]) -> bool:
    # max_epochs may grow between sessions
    return {k: v for k, v in saved.items() if k != "max_epochs"} == {
        k: v for k, v in current.items() if k != "max_epochs"
    }


def fit(
    params: Parameters,
    train: DatasetSplit,
    val: DatasetSplit,
    model_config: ModelConfig,
    config: TrainConfig,
    grid: AlphabetGrid | None = None,
    out_dir: Path | None = None,
    test: DatasetSplit | None = None,
    resume: bool = False,
    deterministic: bool = False,
) -> FitResult:
    """Train until ``max_epochs`` or early stop; checkpoint best and last epochs.

    With ``out_dir`` the run directory receives metrics.csv, best.amcp,
    last.amcp and run_config.json after every epoch.
    """
    validate_train_config(config)
    # checkpoints record the dropout rate training applies
    model_config = replace(model_config, keep_prob=config.keep_prob)
    optimizer = build_optimizer(config.optimizer, config.learning_rate)
    stopper = EarlyStopping(config.early_stop_patience, config.early_stop_min_delta)
    history: list[MetricsRecord] = []
    best_values = copy_values(params)
    start_epoch = 1
    train_meta = train_config_to_dict(config)

    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / RUN_CONFIG_FILE).write_text(
            dump_json({"model": model_config_to_dict(model_config), "train": train_meta, "alphas": list(config.alphas)}),
            encoding="utf-8",
        )
        last_path = out_dir / LAST_CHECKPOINT
        if resume and last_path.exists():
            tensors, meta = load_checkpoint(last_path)
            if not _resume_compatible(meta.get("train_config", {}), train_meta):
                raise ValidationError(f"{last_path} was written with a different training configuration")
            load_values(params, tensors)
            optimizer.load_state_dict(tensors, meta["optimizer"])
            stopper.load_state_dict(meta["early_stop"])
            history = [MetricsRecord.from_dict(item) for item in meta["history"]]
            start_epoch = int(meta["epoch"]) + 1
            best_path = out_dir / BEST_CHECKPOINT
            best_values = load_checkpoint(best_path)[0] if best_path.exists() else copy_values(params)
            LOGGER.info("Resuming %s from epoch %d", out_dir, start_epoch)
        elif resume:
            LOGGER.warning("No %s in %s, starting a fresh run", LAST_CHECKPOINT, out_dir)

    stopped_early = stopper.should_stop and bool(history)
    epoch = start_epoch
    while epoch <= config.max_epochs and not stopped_early:
        started = time.perf_counter()
        record = train_epoch(params, train, config, optimizer, epoch=epoch, grid=grid)
        record.val = evaluate(params, val, config.alphas, config.l2_lambda, grid=grid)
        record.seconds = 0.0 if deterministic else time.perf_counter() - started
        history.append(record)

        improved = stopper.update(epoch, record.val.total_loss)
        if improved:
            best_values = copy_values(params)
        stopped_early = stopper.should_stop
        LOGGER.info(
            "Epoch %d/%d train_loss=%.4f val_loss=%.4f val_acc=(%.3f, %.3f, %.3f)%s",
            epoch,
            config.max_epochs,
            record.train.total_loss if record.train else float("nan"),
            record.val.total_loss,
            record.val.label_acc,
            record.val.row_acc,
            record.val.col_acc,
            " *" if improved else "",
        )

        if out_dir is not None:
            write_metrics_csv(history, out_dir / METRICS_FILE)
            base_meta = {"train_config": train_meta, "epoch": epoch}
            if improved:
                save_model(out_dir / BEST_CHECKPOINT, params, model_config, {**base_meta, "val_total_loss": record.val.total_loss})
            optim_tensors, optim_meta = optimizer.state_dict()
            _save_last(out_dir / LAST_CHECKPOINT, params, model_config, optim_tensors, {
                **base_meta,
                "optimizer": optim_meta,
                "early_stop": stopper.state_dict(),
                "history": [_history_entry(item) for item in history],
            })
        epoch += 1

    if stopped_early:
        LOGGER.info("Early stop after epoch %d; best epoch %d", history[-1].epoch, stopper.best_epoch)

    best_params = params_from_values(model_config, best_values)
    test_metrics = None
    if test is not None:
        test_metrics = evaluate(best_params, test, config.alphas, config.l2_lambda, grid=grid)
        LOGGER.info(
            "Test accuracies at best epoch %d: label=%.4f row=%.4f col=%.4f",
            stopper.best_epoch,
            test_metrics.label_acc,
            test_metrics.row_acc,
            test_metrics.col_acc,
        )
        if out_dir is not None:
            rows = history + [MetricsRecord(epoch=stopper.best_epoch, test=test_metrics)]
            write_metrics_csv(rows, out_dir / METRICS_FILE)

    return FitResult(
        best_params=best_params,
        history=history,
        best_epoch=stopper.best_epoch,
        epochs_run=len(history),
        stopped_early=stopped_early,
        test=test_metrics,
    )


def _history_entry(record: MetricsRecord) -> dict[str, Any]:
    # wall-clock time stays in metrics.csv; checkpoint bytes depend on the run alone
    payload = record.to_dict()
    payload.pop("seconds")
    return payload


def _save_last(
    path: Path,
    params: Parameters,
    model_config: ModelConfig,
    optim_tensors: dict[str, np.ndarray],
    meta: dict[str, Any],
) -> None:
    tensors = {**copy_values(params), **optim_tensors}
    save_checkpoint(path, tensors, {**meta, "model_config": model_config_to_dict(model_config)})


def read_run_config(run_dir: Path) -> dict[str, Any]:
    path = run_dir / RUN_CONFIG_FILE
    if not path.exists():
        return {}
    return json.loads(path.read_text(encoding="utf-8"))
