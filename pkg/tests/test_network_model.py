import math
import tempfile
import unittest
from pathlib import Path

import numpy as np

from fidel_mtl.alphabet.grid import make_regular_grid
from fidel_mtl.core.checkpoint import save_checkpoint
from fidel_mtl.core.rng import STREAM_INIT, RngStream
from fidel_mtl.errors import ConfigurationError, DimensionError, FormatError, ValidationError
from fidel_mtl.network.model import (
    argmax_predictions,
    backward,
    build_model,
    consistent_mask,
    flatten_width,
    forward,
    load_model,
    parameter_shapes,
    predict,
    save_model,
    spatial_trace,
)
from fidel_mtl.types import ModelConfig, MultiHeadOutput


def small_config(**overrides) -> ModelConfig:
    values = dict(
        canvas_size=16,
        conv_stages=((5, 4), (3, 4)),
        hidden_units=8,
        num_labels=6,
        num_rows=2,
        num_cols=3,
        keep_prob=0.5,
    )
    values.update(overrides)
    return ModelConfig(**values)


class ArchitectureTests(unittest.TestCase):
    def test_default_trace_and_flatten_width(self) -> None:
        self.assertEqual(spatial_trace(ModelConfig()), [32, 14, 5])
        self.assertEqual(flatten_width(ModelConfig()), 5 * 5 * 64)
        self.assertEqual(spatial_trace(small_config()), [16, 6, 2])

    def test_odd_convolution_output_is_rejected(self) -> None:
        with self.assertRaises(ConfigurationError) as ctx:
            spatial_trace(small_config(canvas_size=12, conv_stages=((3, 4), (3, 4))))
        self.assertIn("(M - N + 1)", str(ctx.exception))
        self.assertIn("stage 2", str(ctx.exception))

    def test_parameter_order_trunk_then_heads(self) -> None:
        names = [name for name, _, _ in parameter_shapes(small_config())]
        self.assertEqual(
            names,
            [
                "conv1.weight",
                "conv1.bias",
                "conv2.weight",
                "conv2.bias",
                "hidden.weight",
                "hidden.bias",
                "head_label.weight",
                "head_label.bias",
                "head_row.weight",
                "head_row.bias",
                "head_col.weight",
                "head_col.bias",
            ],
        )
        shapes = {name: shape for name, shape, _ in parameter_shapes(small_config())}
        self.assertEqual(shapes["conv2.weight"], (3, 3, 4, 4))
        self.assertEqual(shapes["hidden.weight"], (16, 8))
        self.assertEqual(shapes["head_col.weight"], (8, 3))


class BuildModelTests(unittest.TestCase):
    def test_seeded_initialization(self) -> None:
        first = build_model(small_config(), None, RngStream(4, STREAM_INIT))
        second = build_model(small_config(), None, RngStream(4, STREAM_INIT))
        other = build_model(small_config(), None, RngStream(5, STREAM_INIT))
        for name in first.names():
            np.testing.assert_array_equal(first[name].value, second[name].value)
        self.assertFalse(np.array_equal(first["conv1.weight"].value, other["conv1.weight"].value))

    def test_weight_bounds_and_zero_biases(self) -> None:
        params = build_model(small_config(), None, RngStream(0, STREAM_INIT))
        for param in params:
            if param.name.endswith(".bias"):
                self.assertFalse(param.regularized)
                self.assertFalse(np.any(param.value))
            else:
                fan_in = int(np.prod(param.value.shape[:-1]))
                self.assertTrue(param.regularized)
                self.assertLessEqual(float(np.abs(param.value).max()), math.sqrt(6.0 / fan_in) * (1 + 1e-6))
            self.assertEqual(param.value.dtype, np.float32)
        self.assertEqual(params["head_row.weight"].head, "row")
        self.assertIsNone(params["hidden.weight"].head)

    def test_grid_must_match_heads(self) -> None:
        with self.assertRaises(ConfigurationError):
            build_model(small_config(), make_regular_grid(3, 3), RngStream(0))
        build_model(small_config(), make_regular_grid(2, 3), RngStream(0))

    def test_keep_prob_range(self) -> None:
        with self.assertRaises(ValidationError):
            build_model(small_config(keep_prob=0.0), None, RngStream(0))


class ForwardBackwardTests(unittest.TestCase):
    def setUp(self) -> None:
        self.params = build_model(small_config(), None, RngStream(1, STREAM_INIT))
        self.images = np.random.default_rng(0).random((3, 16, 16, 1)).astype(np.float32)

    def test_output_shapes(self) -> None:
        outputs, _ = forward(self.params, self.images)
        self.assertEqual([logits.shape for logits in outputs.heads()], [(3, 6), (3, 2), (3, 3)])
        single, _ = forward(self.params, self.images[0])
        self.assertEqual(single.label_logits.shape, (1, 6))
        np.testing.assert_allclose(single.label_logits[0], outputs.label_logits[0], rtol=1e-5, atol=1e-6)

    def test_eval_is_deterministic_and_train_uses_dropout(self) -> None:
        first, _ = forward(self.params, self.images)
        second, _ = forward(self.params, self.images, rng=RngStream(9), keep_prob=0.5)
        np.testing.assert_array_equal(first.label_logits, second.label_logits)
        trained, cache = forward(self.params, self.images, mode="train", rng=RngStream(9), keep_prob=0.5)
        self.assertEqual(cache.keep_prob, 0.5)
        self.assertFalse(np.array_equal(first.label_logits, trained.label_logits))

    def test_heads_share_only_the_trunk(self) -> None:
        before, _ = forward(self.params, self.images)
        self.params["head_row.weight"].value += np.float32(0.5)
        after_head, _ = forward(self.params, self.images)
        np.testing.assert_array_equal(after_head.label_logits, before.label_logits)
        np.testing.assert_array_equal(after_head.col_logits, before.col_logits)
        self.assertFalse(np.array_equal(after_head.row_logits, before.row_logits))

        conv1 = self.params["conv1.weight"].value
        conv1 += np.random.default_rng(4).normal(0.0, 0.2, conv1.shape).astype(np.float32)
        after_trunk, _ = forward(self.params, self.images)
        for changed, original in zip(after_trunk.heads(), after_head.heads()):
            self.assertFalse(np.array_equal(changed, original))

    def test_rejects_wrong_image_shape_and_mode(self) -> None:
        with self.assertRaises(DimensionError):
            forward(self.params, np.zeros((2, 16, 16, 3), np.float32))
        with self.assertRaises(ValidationError):
            forward(self.params, self.images, mode="predict")

    def test_counters_record_trunk_passes(self) -> None:
        counters: dict[str, int] = {}
        forward(self.params, self.images, counters=counters)
        self.assertEqual(counters["conv"], 6)

    def test_missing_head_gradient_leaves_head_untouched(self) -> None:
        outputs, cache = forward(self.params, self.images)
        self.params.zero_grad()
        backward(self.params, cache, (np.ones_like(outputs.label_logits), None, None))
        self.assertFalse(np.any(self.params["head_row.weight"].grad))
        self.assertFalse(np.any(self.params["head_col.bias"].grad))
        np.testing.assert_allclose(self.params["head_label.bias"].grad, np.full(6, 3.0))

    def test_fault_flips_one_parameter_gradient(self) -> None:
        outputs, cache = forward(self.params, self.images)
        grads = (np.ones_like(outputs.label_logits), None, None)
        self.params.zero_grad()
        backward(self.params, cache, grads, fault="head_label.bias")
        np.testing.assert_allclose(self.params["head_label.bias"].grad, np.full(6, -3.0))


class PredictionTests(unittest.TestCase):
    def test_argmax_is_one_based(self) -> None:
        outputs = MultiHeadOutput(
            label_logits=np.array([[0.0, 5.0, 1.0]]),
            row_logits=np.array([[2.0, 1.0]]),
            col_logits=np.array([[0.0, 0.0, 3.0]]),
        )
        labels, rows, cols = argmax_predictions(outputs)
        self.assertEqual((int(labels[0]), int(rows[0]), int(cols[0])), (2, 1, 3))

    def test_consistency_against_grid(self) -> None:
        grid = make_regular_grid(2, 3)
        mask = consistent_mask(np.array([5, 5]), np.array([2, 1]), np.array([2, 2]), grid)
        self.assertEqual(mask.tolist(), [True, False])

    def test_predict_reports_triple_and_confidences(self) -> None:
        grid = make_regular_grid(2, 3)
        params = build_model(small_config(), grid, RngStream(2, STREAM_INIT))
        prediction = predict(params, np.ones((16, 16, 1), np.float32), grid)
        self.assertTrue(1 <= prediction.label <= 6)
        self.assertTrue(1 <= prediction.row <= 2)
        self.assertTrue(1 <= prediction.col <= 3)
        for confidence, size in zip(prediction.confidences, (6, 2, 3)):
            self.assertTrue(1.0 / size - 1e-9 <= confidence <= 1.0)
        self.assertEqual(
            prediction.consistent,
            bool(consistent_mask(np.array([prediction.label]), np.array([prediction.row]), np.array([prediction.col]), grid)[0]),
        )


class SaveLoadTests(unittest.TestCase):
    def test_model_file_carries_config_and_values(self) -> None:
        config = small_config()
        params = build_model(config, None, RngStream(3, STREAM_INIT))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "model.amcp"
            save_model(path, params, config, {"epoch": 2})
            loaded, loaded_config, meta = load_model(path)
        self.assertEqual(loaded_config, config)
        self.assertEqual(meta["epoch"], 2)
        for name in params.names():
            np.testing.assert_array_equal(loaded[name].value, params[name].value)

    def test_checkpoint_without_model_config(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "bare.amcp"
            save_checkpoint(path, {"w": np.zeros(2)}, {})
            with self.assertRaises(FormatError):
                load_model(path)


if __name__ == "__main__":
    unittest.main()
