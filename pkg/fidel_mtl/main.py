"""CLI entrypoint for the fidel_mtl toolkit.

Exit codes: 0 success, 1 validation or usage error, 2 I/O or format error.
"""

from __future__ import annotations

import argparse
from dataclasses import replace
import logging
from pathlib import Path
import sys

from fidel_mtl.alphabet.grid import parse_grid, validate_grid
from fidel_mtl.config import (
    load_experiment_config,
    load_settings,
    parse_alphas,
    validate_train_config,
)
from fidel_mtl.core.gradcheck import DEFAULT_EPSILON, DEFAULT_TOLERANCE
from fidel_mtl.errors import FormatError, ValidationError
from fidel_mtl.pipeline import (
    run_augment,
    run_eval,
    run_gradcheck,
    run_ingest,
    run_predict,
    run_sweep_experiment,
    run_synth,
    run_train,
)
from fidel_mtl.reporting.plot import plot_metrics
from fidel_mtl.training.sweep import parse_alpha_list
from fidel_mtl.types import Settings, SplitMetrics


LOGGER = logging.getLogger(__name__)

DEFAULT_FAULT = "head_label.bias"


class _UsageError(Exception):
    pass


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def _int_triple(text: str) -> tuple[int, int, int]:
    parts = [item.strip() for item in text.split(",")]
    if len(parts) != 3:
        raise ValidationError(f"expected three comma-separated integers, got '{text}'")
    try:
        values = tuple(int(item) for item in parts)
    except ValueError as exc:
        raise ValidationError(f"expected three comma-separated integers, got '{text}'") from exc
    if any(value < 0 for value in values):
        raise ValidationError(f"values must be non-negative, got '{text}'")
    return values  # type: ignore[return-value]


def _counts(text: str) -> tuple[int, int, int]:
    values = _int_triple(text)
    if any(value < 1 for value in values):
        raise ValidationError(f"per-class counts must be positive, got '{text}'")
    return values


def _seed_list(text: str) -> list[int]:
    try:
        return [int(item) for item in text.split(",") if item.strip()]
    except ValueError as exc:
        raise ValidationError(f"seeds must be comma-separated integers, got '{text}'") from exc


def _build_parser(settings: Settings) -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="fidel_mtl", description="Multi-task handwritten fidel recognition toolkit")
    parser.add_argument(
        "--log-level",
        default=settings.log_level if settings.log_level in {"DEBUG", "INFO", "WARNING", "ERROR"} else "INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging verbosity for progress output.",
    )
    parser.add_argument(
        "--deterministic",
        action="store_true",
        default=settings.deterministic,
        help="Zero wall-clock fields and timestamps so repeated runs are byte-identical.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    ingest = sub.add_parser("ingest", help="Read <writer>/<label>.<ext> images into writer-disjoint containers")
    ingest.add_argument("--src", type=Path, required=True, help="Source directory of writer folders")
    ingest.add_argument("--grid", type=Path, required=True, help="Alphabet grid file (label,row,col[,glyph])")
    ingest.add_argument("--out", type=Path, required=True, help="Output data directory")
    ingest.add_argument("--seed", type=int, default=0, help="Writer split seed")
    ingest.add_argument("--ratio", type=_int_triple, default=(9, 2, 1), help="Writer ratio train,val,test")
    ingest.add_argument("--canvas", type=int, default=32, help="Canvas side length in pixels")
    ingest.add_argument("--workers", type=int, default=settings.workers, help="Decoding threads")

    synth = sub.add_parser("synth", help="Generate a synthetic grid-structured glyph dataset")
    synth.add_argument("--rows", type=int, required=True, help="Grid rows (base patterns)")
    synth.add_argument("--cols", type=int, required=True, help="Grid columns (modifier marks)")
    synth.add_argument("--per-class", type=int, required=True, help="Images per class")
    synth.add_argument("--seed", type=int, default=0, help="Generator and split seed")
    synth.add_argument("--out", type=Path, required=True, help="Output data directory")
    synth.add_argument("--ratio", type=_int_triple, default=(9, 2, 1), help="Writer ratio train,val,test")
    synth.add_argument("--canvas", type=int, default=32, help="Canvas side length in pixels")

    augment = sub.add_parser("augment", help="Expand every class to exact per-split counts")
    augment.add_argument("--in", dest="in_dir", type=Path, default=Path(settings.data_dir), help="Input data directory")
    augment.add_argument("--counts", type=_counts, default=(4500, 800, 400), help="Per-class counts train,val,test")
    augment.add_argument("--seed", type=int, default=0, help="Augmentation seed")
    augment.add_argument("--out", type=Path, required=True, help="Output data directory")
    augment.add_argument("--log-transforms", action="store_true", help="Write <split>.transforms.csv")
    augment.add_argument("--workers", type=int, default=settings.workers, help="Per-class worker threads")

    train = sub.add_parser("train", help="Train the three-head network")
    train.add_argument("--data", type=Path, default=Path(settings.data_dir), help="Data directory")
    train.add_argument("--config", type=Path, default=None, help="Experiment JSON with model/train sections")
    train.add_argument("--alphas", type=parse_alphas, default=None, help="Task weights a1,a2,a3")
    train.add_argument("--seed", type=int, default=None, help="Override the training seed")
    train.add_argument("--epochs", type=int, default=None, help="Override max epochs")
    train.add_argument("--out", type=Path, required=True, help="Run directory")
    train.add_argument("--resume", action="store_true", help="Continue from <out>/last.amcp")

    evaluate = sub.add_parser("eval", help="Evaluate a checkpoint on one container")
    evaluate.add_argument("--checkpoint", type=Path, required=True, help="Checkpoint file")
    evaluate.add_argument("--data", type=Path, required=True, help="Container file")

    predict = sub.add_parser("predict", help="Predict label, row and column for one image")
    predict.add_argument("--checkpoint", type=Path, required=True, help="Checkpoint file")
    predict.add_argument("--image", type=Path, required=True, help="Image file")
    predict.add_argument("--grid", type=Path, required=True, help="Alphabet grid file")

    gradcheck = sub.add_parser("gradcheck", help="Finite-difference check of the full objective")
    gradcheck.add_argument("--config", type=Path, default=None, help="Experiment JSON with model/train sections")
    gradcheck.add_argument("--seed", type=int, default=0, help="Initialization and sampling seed")
    gradcheck.add_argument(
        "--inject-fault",
        nargs="?",
        const=DEFAULT_FAULT,
        default=None,
        metavar="PARAM",
        help=f"Flip the gradient sign of PARAM (default {DEFAULT_FAULT})",
    )
    gradcheck.add_argument("--batch", type=int, default=4, help="Batch size")
    gradcheck.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON, help="Finite-difference step")
    gradcheck.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE, help="Maximum relative error")

    sweep = sub.add_parser("sweep", help="Train one run per alpha triple and seed")
    sweep.add_argument("--data", type=Path, default=Path(settings.data_dir), help="Data directory")
    sweep.add_argument("--config", type=Path, default=None, help="Experiment JSON with model/train sections")
    sweep.add_argument("--alphas", type=parse_alpha_list, default="1,0,0;1,0.35,0.65", help="Triples a,b,c;a,b,c")
    sweep.add_argument("--seeds", type=_seed_list, default="1,2,3", help="Comma-separated seeds")
    sweep.add_argument("--epochs", type=int, default=None, help="Override max epochs")
    sweep.add_argument("--out", type=Path, required=True, help="Sweep directory")

    plot = sub.add_parser("plot", help="Render loss/accuracy curves to SVG")
    plot.add_argument("--metrics", type=Path, nargs="+", required=True, help="metrics.csv files")
    plot.add_argument("--out", type=Path, required=True, help="Output .svg file")
    plot.add_argument("--per-task", action="store_true", help="Per-task validation curves")

    grid = sub.add_parser("grid", help="Validate an alphabet grid file")
    grid.add_argument("--file", type=Path, required=True, help="Grid file")
    return parser


def _configure_logging(level: str) -> None:
    numeric_level = getattr(logging, level.upper(), logging.INFO)
    logging.basicConfig(
        level=numeric_level,
        format="[%(levelname)s] %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _format_metrics(name: str, metrics: SplitMetrics) -> str:
    return (
        f"split={name} total_loss={metrics.total_loss:.6f} label_loss={metrics.label_loss:.6f} "
        f"row_loss={metrics.row_loss:.6f} col_loss={metrics.col_loss:.6f} label_acc={metrics.label_acc:.6f} "
        f"row_acc={metrics.row_acc:.6f} col_acc={metrics.col_acc:.6f} consistency={metrics.consistency:.6f} "
        f"samples={metrics.samples}"
    )


def _experiment(args: argparse.Namespace):
    model_config, train_config = load_experiment_config(args.config)
    if getattr(args, "alphas", None) is not None and args.command == "train":
        train_config = replace(train_config, alphas=args.alphas)
    if getattr(args, "seed", None) is not None and args.command == "train":
        train_config = replace(train_config, seed=args.seed)
    if getattr(args, "epochs", None) is not None:
        train_config = replace(train_config, max_epochs=args.epochs)
    validate_train_config(train_config)
    return model_config, train_config


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "ingest":
        manifest, report = run_ingest(
            args.src,
            args.grid,
            args.out,
            seed=args.seed,
            ratio=args.ratio,
            canvas_size=args.canvas,
            workers=args.workers,
            deterministic=args.deterministic,
        )
        for warning in report.warnings:
            LOGGER.warning("%s", warning)
        counts = manifest.split_counts
        print(
            f"Ingested {sum(counts.values())} images ({len(report.errors)} unreadable): "
            f"train={counts['train']} val={counts['val']} test={counts['test']} -> {args.out}"
        )
        return 0

    if args.command == "synth":
        manifest = run_synth(
            args.rows,
            args.cols,
            args.per_class,
            args.out,
            seed=args.seed,
            ratio=args.ratio,
            canvas_size=args.canvas,
            deterministic=args.deterministic,
        )
        counts = manifest.split_counts
        print(
            f"Synthesized {manifest.num_labels} classes, {sum(counts.values())} images: "
            f"train={counts['train']} val={counts['val']} test={counts['test']} -> {args.out}"
        )
        return 0

    if args.command == "augment":
        manifest = run_augment(
            args.in_dir,
            args.out,
            counts=args.counts,
            seed=args.seed,
            log_transforms=args.log_transforms,
            workers=args.workers,
            deterministic=args.deterministic,
        )
        counts = manifest.split_counts
        print("Augmented: " + " ".join(f"{name}={count}" for name, count in counts.items()) + f" -> {args.out}")
        return 0

    if args.command == "train":
        model_config, train_config = _experiment(args)
        result = run_train(
            args.data, model_config, train_config, args.out, resume=args.resume, deterministic=args.deterministic
        )
        print(
            f"Trained {result.epochs_run} epochs (best epoch {result.best_epoch}"
            f"{', early stop' if result.stopped_early else ''}) -> {args.out}"
        )
        best = result.best_record
        if best is not None and best.val is not None:
            print(_format_metrics("val", best.val))
        if result.test is not None:
            print(_format_metrics("test", result.test))
        return 0

    if args.command == "eval":
        metrics = run_eval(args.checkpoint, args.data)
        print(_format_metrics(args.data.stem, metrics))
        return 0

    if args.command == "predict":
        prediction = run_predict(args.checkpoint, args.image, args.grid)
        confidences = ",".join(f"{value:.6f}" for value in prediction.confidences)
        print(
            f"label={prediction.label} row={prediction.row} col={prediction.col} "
            f"confidences={confidences} consistent={str(prediction.consistent).lower()}"
        )
        return 0

    if args.command == "gradcheck":
        model_config, train_config = load_experiment_config(args.config)
        report = run_gradcheck(
            model_config,
            train_config,
            seed=args.seed,
            fault=args.inject_fault,
            batch_size=args.batch,
            epsilon=args.epsilon,
        )
        for name, error in report.per_param.items():
            print(f"{name} max_rel_error={error:.3e}")
        passed = report.passed(args.tolerance)
        print(
            f"{'PASS' if passed else 'FAIL'} max_rel_error={report.max_error:.3e} "
            f"worst={report.worst_param} coordinates={report.coordinates_checked}"
        )
        return 0 if passed else 1

    if args.command == "sweep":
        model_config, train_config = _experiment(args)
        rows = run_sweep_experiment(
            args.data,
            args.alphas,
            args.seeds,
            model_config,
            train_config,
            args.out,
            deterministic=args.deterministic,
        )
        for row in rows:
            print(",".join(row.to_row()))
        return 0

    if args.command == "plot":
        plot_metrics(args.metrics, args.out, per_task=args.per_task, deterministic=args.deterministic)
        print(f"Plot written: {args.out}")
        return 0

    # grid
    grid = parse_grid(args.file.read_text(encoding="utf-8"))
    violations = validate_grid(grid)
    for violation in violations:
        print(violation)
    if violations:
        return 1
    print(f"OK: {grid.num_labels} labels on a {grid.num_rows}x{grid.num_cols} grid")
    return 0


def run_cli(argv: list[str] | None = None) -> int:
    settings = load_settings(load_dotenv=True)
    parser = _build_parser(settings)
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)

    _configure_logging(args.log_level)
    LOGGER.info("Starting command '%s' (deterministic=%s)", args.command, args.deterministic)
    try:
        return _dispatch(args)
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    raise SystemExit(run_cli())


if __name__ == "__main__":
    main()
