"""Alpha-weighting comparison: one fit per (alpha triple, seed)."""

from __future__ import annotations

from dataclasses import dataclass, replace
import csv
import logging
from pathlib import Path

from fidel_mtl.alphabet.grid import AlphabetGrid
from fidel_mtl.config import parse_alphas, validate_alphas
from fidel_mtl.core.rng import STREAM_INIT, RngStream
from fidel_mtl.dataset.container import DatasetSplit
from fidel_mtl.network.model import build_model
from fidel_mtl.training.loop import fit
from fidel_mtl.types import ModelConfig, TrainConfig


LOGGER = logging.getLogger(__name__)

SUMMARY_FILE = "summary.csv"
SUMMARY_HEADER = (
    "alphas",
    "seed",
    "best_epoch",
    "epochs_run",
    "best_val_total_loss",
    "val_label_loss",
    "val_label_acc",
    "val_row_acc",
    "val_col_acc",
    "test_label_acc",
    "test_row_acc",
    "test_col_acc",
)


@dataclass
class SweepRow:
    alphas: tuple[float, float, float]
    seed: int
    best_epoch: int
    epochs_run: int
    best_val_total_loss: float
    val_label_loss: float
    val_label_acc: float
    val_row_acc: float
    val_col_acc: float
    test_label_acc: float | None = None
    test_row_acc: float | None = None
    test_col_acc: float | None = None

    def to_row(self) -> list[str]:
        def _cell(value: float | None) -> str:
            return "" if value is None else format(value, ".9g")

        return [
            alpha_tag(self.alphas),
            str(self.seed),
            str(self.best_epoch),
            str(self.epochs_run),
            *(
                _cell(value)
                for value in (
                    self.best_val_total_loss,
                    self.val_label_loss,
                    self.val_label_acc,
                    self.val_row_acc,
                    self.val_col_acc,
                    self.test_label_acc,
                    self.test_row_acc,
                    self.test_col_acc,
                )
            ),
        ]


def alpha_tag(alphas: tuple[float, float, float]) -> str:
    return "-".join(format(alpha, "g") for alpha in alphas)


def parse_alpha_list(text: str) -> list[tuple[float, float, float]]:
    """``"1,0,0;1,0.35,0.65"`` -> list of triples."""
    return [parse_alphas(item) for item in text.split(";") if item.strip()]


def run_sweep(
    train: DatasetSplit,
    val: DatasetSplit,
    alpha_triples: list[tuple[float, float, float]],
    seeds: list[int],
    model_config: ModelConfig,
    base_config: TrainConfig,
    out_dir: Path,
    grid: AlphabetGrid | None = None,
    test: DatasetSplit | None = None,
    deterministic: bool = False,
) -> list[SweepRow]:
    """Runs land in ``out_dir/<alpha-tag>/seed_<n>/``; the summary in ``out_dir/summary.csv``."""
    for alphas in alpha_triples:
        validate_alphas(alphas)

    rows: list[SweepRow] = []
    for alphas in alpha_triples:
        for seed in seeds:
            run_dir = out_dir / alpha_tag(alphas) / f"seed_{seed}"
            config = replace(base_config, alphas=tuple(alphas), seed=seed)
            LOGGER.info("Sweep run alphas=%s seed=%d -> %s", alpha_tag(alphas), seed, run_dir)
            params = build_model(model_config, grid, RngStream(seed, STREAM_INIT))
            result = fit(
                params,
                train,
                val,
                model_config,
                config,
                grid=grid,
                out_dir=run_dir,
                test=test,
                deterministic=deterministic,
            )
            best = result.best_record
            best_val = best.val if best is not None and best.val is not None else result.history[-1].val
            rows.append(
                SweepRow(
                    alphas=tuple(alphas),
                    seed=seed,
                    best_epoch=result.best_epoch,
                    epochs_run=result.epochs_run,
                    best_val_total_loss=best_val.total_loss,
                    val_label_loss=best_val.label_loss,
                    val_label_acc=best_val.label_acc,
                    val_row_acc=best_val.row_acc,
                    val_col_acc=best_val.col_acc,
                    test_label_acc=result.test.label_acc if result.test else None,
                    test_row_acc=result.test.row_acc if result.test else None,
                    test_col_acc=result.test.col_acc if result.test else None,
                )
            )

    write_summary(rows, out_dir / SUMMARY_FILE)
    return rows


def write_summary(rows: list[SweepRow], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(SUMMARY_HEADER)
        for row in rows:
            writer.writerow(row.to_row())
    LOGGER.info("Sweep summary written: %s (%d runs)", path, len(rows))
