"""Loss and accuracy curves from metrics CSVs, rendered as SVG."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
import logging
from pathlib import Path

from fidel_mtl.errors import ConfigurationError, ValidationError
from fidel_mtl.training.loop import METRICS_HEADER, read_run_config


LOGGER = logging.getLogger(__name__)

SVG_HASH_SALT = "fidel-mtl"
TASKS = ("label", "row", "col")


@dataclass
class RunCurves:
    """Per-split series of one metrics CSV, keyed by column name."""

    name: str
    splits: dict[str, dict[str, list[float]]] = field(default_factory=dict)

    def series(self, split: str, column: str) -> tuple[list[float], list[float]]:
        data = self.splits.get(split, {})
        return data.get("epoch", []), data.get(column, [])


def read_metrics_csv(path: Path) -> RunCurves:
    with path.open("r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or tuple(reader.fieldnames) != METRICS_HEADER:
            raise ValidationError(f"{path}: not a metrics CSV (header {reader.fieldnames})")
        curves = RunCurves(name=legend_label(path))
        for row in reader:
            if row["split"] == "test":
                continue
            data = curves.splits.setdefault(row["split"], {})
            for column in METRICS_HEADER:
                if column == "split":
                    continue
                try:
                    data.setdefault(column, []).append(float(row[column]))
                except (TypeError, ValueError) as exc:
                    raise ValidationError(f"{path}: bad value in column '{column}'") from exc
    if not curves.splits:
        raise ValidationError(f"{path}: metrics CSV has no epoch rows")
    return curves


def legend_label(path: Path) -> str:
    """Alpha triple from the sibling run_config.json, else the run directory name."""
    alphas = read_run_config(path.parent).get("alphas")
    if alphas:
        return "alphas=(" + ", ".join(format(float(alpha), "g") for alpha in alphas) + ")"
    return path.parent.name or path.stem


def _pyplot():
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise ConfigurationError("matplotlib is required for plotting") from exc
    return plt


def plot_metrics(
    csv_paths: list[Path],
    out_path: Path,
    per_task: bool = False,
    deterministic: bool = False,
) -> None:
    """Left panel losses, right panel accuracies; one line style per split, one color per run.

    Every CSV is read before anything is written, so a bad input leaves no file.
    """
    if not csv_paths:
        raise ValidationError("plot needs at least one metrics CSV")
    runs = [read_metrics_csv(path) for path in csv_paths]
    plt = _pyplot()
    if deterministic:
        plt.rcParams["svg.hashsalt"] = SVG_HASH_SALT

    if per_task:
        figure, axes = plt.subplots(2, len(TASKS), figsize=(15, 8))
        for column, task in enumerate(TASKS):
            for run in runs:
                epochs, losses = run.series("val", f"{task}_loss")
                axes[0][column].plot(epochs, losses, label=run.name)
                epochs, accuracies = run.series("val", f"{task}_acc")
                axes[1][column].plot(epochs, accuracies, label=run.name)
            axes[0][column].set_title(f"{task} validation loss")
            axes[1][column].set_title(f"{task} validation accuracy")
            axes[1][column].set_xlabel("epoch")
        axes[0][0].legend(loc="upper right", fontsize="small")
    else:
        figure, (loss_axis, acc_axis) = plt.subplots(1, 2, figsize=(12, 4.5))
        for index, run in enumerate(runs):
            color = f"C{index % 10}"
            for split, style in (("train", "-"), ("val", "--")):
                epochs, losses = run.series(split, "total_loss")
                loss_axis.plot(epochs, losses, style, color=color, label=f"{run.name} {split}")
                epochs, accuracies = run.series(split, "label_acc")
                acc_axis.plot(epochs, accuracies, style, color=color, label=f"{run.name} {split}")
        loss_axis.set_title("loss")
        acc_axis.set_title("label accuracy")
        for axis in (loss_axis, acc_axis):
            axis.set_xlabel("epoch")
        loss_axis.legend(loc="upper right", fontsize="small")

    figure.tight_layout()
    out_path.parent.mkdir(parents=True, exist_ok=True)
    figure.savefig(out_path, format="svg", metadata={"Date": None} if deterministic else None)
    plt.close(figure)
    LOGGER.info("Plot written: %s (%d runs)", out_path, len(runs))
