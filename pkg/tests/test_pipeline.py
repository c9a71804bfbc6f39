import json
import os
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np
from PIL import Image

from fidel_mtl.alphabet.grid import make_regular_grid, write_grid
from fidel_mtl.augment.expand import read_transform_log
from fidel_mtl.dataset.container import read_container
from fidel_mtl.errors import ConfigurationError
from fidel_mtl.pipeline import (
    augmentation_digest,
    bind_model_config,
    load_data_grid,
    manifest_timestamp,
    run_augment,
    run_eval,
    run_ingest,
    run_synth,
    run_train,
)
from fidel_mtl.types import AugmentationSpec, ModelConfig, TrainConfig


class TimestampTests(unittest.TestCase):
    def test_deterministic_timestamp(self) -> None:
        with patch.dict(os.environ, {}, clear=True):
            self.assertEqual(manifest_timestamp(True), "1970-01-01T00:00:00Z")
        with patch.dict(os.environ, {"SOURCE_DATE_EPOCH": "86400"}, clear=True):
            self.assertEqual(manifest_timestamp(True), "1970-01-02T00:00:00Z")
        self.assertRegex(manifest_timestamp(False), r"^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}Z$")

    def test_augmentation_digest_tracks_parameters(self) -> None:
        self.assertEqual(augmentation_digest(AugmentationSpec()), augmentation_digest(AugmentationSpec()))
        self.assertNotEqual(augmentation_digest(AugmentationSpec()), augmentation_digest(AugmentationSpec(noise_density=0.05)))


class IngestPipelineTests(unittest.TestCase):
    def test_ingest_writes_writer_disjoint_containers(self) -> None:
        grid = make_regular_grid(2, 2)
        with tempfile.TemporaryDirectory() as tmp:
            src, out = Path(tmp) / "src", Path(tmp) / "out"
            for writer in range(12):
                for label in range(1, 5):
                    pixels = np.full((24, 24), 255, dtype=np.uint8)
                    pixels[4 + label : 14 + label, 6:12] = 0
                    path = src / f"writer{writer:02d}" / f"{label}.png"
                    path.parent.mkdir(parents=True, exist_ok=True)
                    Image.fromarray(pixels).save(path)
            grid_path = Path(tmp) / "grid.csv"
            write_grid(grid, grid_path)

            manifest, report = run_ingest(src, grid_path, out, seed=2, canvas_size=16, deterministic=True)
            splits = {name: read_container(out / f"{name}.amcr", grid) for name in ("train", "val", "test")}
            sidecar = json.loads((out / "train.manifest.json").read_text(encoding="utf-8"))

        self.assertEqual(manifest.split_counts, {"train": 36, "val": 8, "test": 4})
        self.assertEqual(report.errors, [])
        self.assertEqual(manifest.grid_digest, grid.digest())
        writer_sets = [splits[name].writer_set() for name in ("train", "val", "test")]
        self.assertFalse(writer_sets[0] & writer_sets[1] or writer_sets[0] & writer_sets[2] or writer_sets[1] & writer_sets[2])
        self.assertEqual(splits["val"].canvas_size, 16)
        self.assertEqual(sidecar["seed"], 2)

    def test_empty_source_is_a_configuration_error(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            grid_path = Path(tmp) / "grid.csv"
            write_grid(make_regular_grid(2, 2), grid_path)
            (Path(tmp) / "src").mkdir()
            with self.assertRaises(ConfigurationError):
                run_ingest(Path(tmp) / "src", grid_path, Path(tmp) / "out")


class AugmentPipelineTests(unittest.TestCase):
    def test_every_split_reaches_exact_counts(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            raw, augmented = Path(tmp) / "raw", Path(tmp) / "aug"
            run_synth(2, 2, 12, raw, seed=1, canvas_size=16, deterministic=True)
            manifest = run_augment(raw, augmented, counts=(15, 6, 4), seed=3, log_transforms=True, deterministic=True)
            train = read_container(augmented / "train.amcr")
            train_log = read_transform_log(augmented / "train.transforms.csv")
            val_log = read_transform_log(augmented / "val.transforms.csv")
            stored = json.loads((augmented / "manifest.json").read_text(encoding="utf-8"))

        self.assertEqual(manifest.split_counts, {"train": 60, "val": 24, "test": 16})
        self.assertEqual(np.bincount(train.labels).tolist(), [0, 15, 15, 15, 15])
        # 12 writers split 9:2:1, so each class starts with 9, 2 and 1 originals
        self.assertEqual(len(train_log), 4 * (15 - 9))
        self.assertEqual(len(val_log), 4 * (6 - 2))
        self.assertEqual(stored["augmentation"]["per_class_counts"], [15, 6, 4])
        self.assertEqual(stored["augmentation_digest"], augmentation_digest(AugmentationSpec(per_class_counts=(15, 6, 4), seed=3)))

    def test_missing_input(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(FileNotFoundError):
                run_augment(Path(tmp), Path(tmp) / "out", counts=(2, 2, 2))


class TrainPipelineTests(unittest.TestCase):
    def test_model_binds_to_data_and_eval_reuses_training_weights(self) -> None:
        config = ModelConfig(canvas_size=32, conv_stages=((5, 4), (3, 4)), hidden_units=8)
        train_config = TrainConfig(batch_size=16, learning_rate=0.01, max_epochs=1, keep_prob=1.0, alphas=(1.0, 0.5, 0.5))
        with tempfile.TemporaryDirectory() as tmp:
            data, run_dir = Path(tmp) / "data", Path(tmp) / "run"
            run_synth(2, 3, 12, data, seed=0, canvas_size=16, deterministic=True)
            result = run_train(data, config, train_config, run_dir, deterministic=True)
            metrics = run_eval(run_dir / "best.amcp", data / "val.amcr")
            run_config = json.loads((run_dir / "run_config.json").read_text(encoding="utf-8"))

        self.assertEqual(run_config["model"]["canvas_size"], 16)
        self.assertEqual(run_config["model"]["num_labels"], 6)
        self.assertEqual((run_config["model"]["num_rows"], run_config["model"]["num_cols"]), (2, 3))
        self.assertAlmostEqual(metrics.total_loss, result.history[0].val.total_loss, places=5)
        self.assertEqual(metrics.samples, result.history[0].val.samples)

    def test_bind_model_config(self) -> None:
        bound = bind_model_config(ModelConfig(), make_regular_grid(3, 4), 24)
        self.assertEqual((bound.canvas_size, bound.num_labels, bound.num_rows, bound.num_cols), (24, 12, 3, 4))
        self.assertEqual(bound.conv_stages, ModelConfig().conv_stages)

    def test_missing_grid_falls_back_to_default(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertLogs("fidel_mtl.pipeline", level="WARNING"):
                grid = load_data_grid(Path(tmp))
        self.assertEqual(grid.head_sizes, (265, 34, 9))


if __name__ == "__main__":
    unittest.main()
