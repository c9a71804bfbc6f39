"""Per-class expansion of a split to exact target counts."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
import csv
from dataclasses import replace
import logging
from pathlib import Path
from typing import Iterable

from fidel_mtl.augment.transforms import add_noise, rotate, shrink
from fidel_mtl.core.rng import RngStream
from fidel_mtl.dataset.container import quantize_pixels
from fidel_mtl.errors import ConfigurationError, ValidationError
from fidel_mtl.types import AugmentationSpec, GlyphImage, TransformLog


LOGGER = logging.getLogger(__name__)

TRANSFORM_ORDER = ("rotate", "shrink", "noise")
TRANSFORM_LOG_HEADER = ("class", "sourceWriter", "transforms", "params")


def choose_transforms(rng: RngStream) -> list[str]:
    """Each transform independently with probability 1/2; at least one."""
    included = [name for name, draw in zip(TRANSFORM_ORDER, rng.random(len(TRANSFORM_ORDER))) if draw < 0.5]
    if not included:
        included = [TRANSFORM_ORDER[int(rng.integers(0, len(TRANSFORM_ORDER)))]]
    return included


def transform_sample(source: GlyphImage, spec: AugmentationSpec, rng: RngStream) -> tuple[GlyphImage, TransformLog]:
    chosen = choose_transforms(rng)
    params: dict[str, float] = {}
    image = source
    for name in chosen:
        if name == "rotate":
            params["rotate"] = float(rng.uniform(*spec.rotation_range))
            image = rotate(image, params["rotate"], limits=spec.rotation_range)
        elif name == "shrink":
            params["shrink"] = float(rng.uniform(*spec.shrink_range))
            image = shrink(image, params["shrink"], limits=spec.shrink_range)
        else:
            params["noise"] = spec.noise_density
            image = add_noise(image, spec.noise_density, rng)
    log = TransformLog(label=source.label, source_writer=source.source_writer, transforms=chosen, params=params)
    return image, log


def augment_class(
    label: int,
    sources: list[GlyphImage],
    spec: AugmentationSpec,
    target_count: int,
    rng: RngStream,
) -> tuple[list[GlyphImage], list[TransformLog]]:
    if not sources:
        raise ConfigurationError(f"class {label} has no source samples to augment")
    if len(sources) >= target_count:
        if len(sources) > target_count:
            LOGGER.warning("Class %d has %d originals, truncated to %d", label, len(sources), target_count)
        return list(sources[:target_count]), []

    images = list(sources)
    logs: list[TransformLog] = []
    for index in range(target_count - len(sources)):
        image, log = transform_sample(sources[index % len(sources)], spec, rng.substream(index))
        images.append(image)
        logs.append(log)
    return images, logs


def augment_split(
    samples: list[GlyphImage],
    spec: AugmentationSpec,
    target_count: int,
    stream: int = 0,
    labels: Iterable[int] | None = None,
    workers: int = 1,
    quantize: bool = False,
) -> tuple[list[GlyphImage], list[TransformLog]]:
    """Expand every class to ``target_count`` images, originals first, classes ascending.

    Each class draws from its own stream keyed by the class label, so the
    output does not depend on ``workers``. ``stream`` separates the splits.
    ``labels`` lists the classes that must be present. With ``quantize`` each
    class is stored as uint8 levels as soon as it is finished.
    """
    spec.validate()
    if target_count < 1:
        raise ValidationError(f"target count must be >= 1, got {target_count}")

    by_class: dict[int, list[GlyphImage]] = {}
    for sample in samples:
        by_class.setdefault(sample.label, []).append(sample)
    expected = sorted(set(labels) if labels is not None else set(by_class))
    for label in expected:
        if label not in by_class:
            raise ConfigurationError(f"class {label} has no source samples to augment")

    def _run(label: int) -> tuple[list[GlyphImage], list[TransformLog]]:
        class_images, class_logs = augment_class(label, by_class[label], spec, target_count, RngStream(spec.seed, label, (stream,)))
        if quantize:
            class_images = [replace(image, pixels=quantize_pixels(image.pixels)) for image in class_images]
        return class_images, class_logs

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run, expected))
    else:
        results = [_run(label) for label in expected]

    images: list[GlyphImage] = []
    logs: list[TransformLog] = []
    for class_images, class_logs in results:
        images.extend(class_images)
        logs.extend(class_logs)
    LOGGER.info("Augmented %d classes to %d images each (%d generated)", len(expected), target_count, len(logs))
    return images, logs


def format_params(params: dict[str, float]) -> str:
    return ";".join(f"{name}={value:.6f}" for name, value in params.items())


def write_transform_log(logs: list[TransformLog], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(TRANSFORM_LOG_HEADER)
        for log in logs:
            writer.writerow((log.label, log.source_writer, "+".join(log.transforms), format_params(log.params)))
    LOGGER.info("Transform log written: %s (%d rows)", path, len(logs))


def read_transform_log(path: Path) -> list[TransformLog]:
    logs: list[TransformLog] = []
    with path.open("r", encoding="utf-8", newline="") as handle:
        for row in csv.DictReader(handle):
            params: dict[str, float] = {}
            for item in filter(None, row["params"].split(";")):
                name, _, value = item.partition("=")
                params[name] = float(value)
            logs.append(
                TransformLog(
                    label=int(row["class"]),
                    source_writer=row["sourceWriter"],
                    transforms=row["transforms"].split("+") if row["transforms"] else [],
                    params=params,
                )
            )
    return logs
