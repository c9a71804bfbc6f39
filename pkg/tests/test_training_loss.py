import math
import unittest

import numpy as np

from fidel_mtl.core.layers import softmax_cross_entropy
from fidel_mtl.core.rng import STREAM_INIT, RngStream
from fidel_mtl.core.tensor import ParamTensor, Parameters
from fidel_mtl.dataset.targets import one_hot_batch
from fidel_mtl.errors import DimensionError, ValidationError
from fidel_mtl.network.model import build_model, forward
from fidel_mtl.training.loss import active_params, multitask_loss
from fidel_mtl.training.optim import SGD, Adam, build_optimizer
from fidel_mtl.types import ModelConfig, MultiHeadOutput, TargetBatch


def _logits_for_loss(loss: float) -> np.ndarray:
    # two classes, target 1: loss = log(1 + exp(z))
    return np.array([[0.0, math.log(math.exp(loss) - 1.0)]])


def _single_targets() -> TargetBatch:
    return TargetBatch(labels=np.array([1]), rows=np.array([1]), cols=np.array([1]))


def _head_params() -> Parameters:
    return Parameters(
        [
            ParamTensor("hidden.weight", np.array([[1.0]])),
            ParamTensor("head_label.weight", np.array([[2.0]]), head="label"),
            ParamTensor("head_row.weight", np.array([[3.0]]), head="row"),
            ParamTensor("head_col.bias", np.array([4.0]), regularized=False, head="col"),
        ]
    )


class MultitaskLossTests(unittest.TestCase):
    def setUp(self) -> None:
        self.outputs = MultiHeadOutput(_logits_for_loss(2.0), _logits_for_loss(1.0), _logits_for_loss(0.5))

    def test_weighted_sum_of_task_losses(self) -> None:
        loss = multitask_loss(self.outputs, _single_targets(), (1.0, 0.35, 0.65), _head_params(), 0.0)
        self.assertAlmostEqual(loss.label, 2.0, places=10)
        self.assertAlmostEqual(loss.row, 1.0, places=10)
        self.assertAlmostEqual(loss.col, 0.5, places=10)
        self.assertAlmostEqual(loss.total, 2.675, places=10)
        self.assertEqual(loss.per_task, (loss.label, loss.row, loss.col))

    def test_total_is_linear_in_alphas_over_random_batches(self) -> None:
        rng = np.random.default_rng(11)
        alpha_sets = [(float(rng.uniform(0.1, 1.0)), float(rng.uniform(0.0, 1.0)), float(rng.uniform(0.0, 1.0))) for _ in range(18)]
        alpha_sets += [(1.0, 0.0, 0.35), (0.5, 0.65, 0.0)]
        for _ in range(100):
            batch = int(rng.integers(1, 9))
            outputs = MultiHeadOutput(*(rng.normal(0.0, 3.0, (batch, size)) for size in (6, 3, 2)))
            targets = TargetBatch(
                labels=rng.integers(1, 7, batch), rows=rng.integers(1, 4, batch), cols=rng.integers(1, 3, batch)
            )
            for alphas in alpha_sets:
                loss = multitask_loss(outputs, targets, alphas, _head_params(), 0.01, accumulate_l2=False)
                penalty = 0.01 * (1.0 + 4.0 + (9.0 if alphas[1] > 0 else 0.0))
                expected = alphas[0] * loss.label + alphas[1] * loss.row + alphas[2] * loss.col + penalty
                self.assertLessEqual(abs(loss.total - expected), 1e-5 * abs(expected))
                self.assertAlmostEqual(loss.l2, penalty, places=12)

    def test_label_only_weights_reduce_to_label_loss_exactly(self) -> None:
        rng = np.random.default_rng(5)
        for _ in range(20):
            logits = rng.normal(0.0, 2.0, (4, 6))
            outputs = MultiHeadOutput(logits, rng.normal(size=(4, 3)), rng.normal(size=(4, 2)))
            labels = rng.integers(1, 7, 4)
            targets = TargetBatch(labels=labels, rows=rng.integers(1, 4, 4), cols=rng.integers(1, 3, 4))
            loss = multitask_loss(outputs, targets, (1.0, 0.0, 0.0), _head_params(), 0.0)
            single, _ = softmax_cross_entropy(logits, one_hot_batch(labels, 6, dtype=np.float64))
            self.assertEqual(loss.total, single)

    def test_head_gradients_are_alpha_scaled(self) -> None:
        loss = multitask_loss(self.outputs, _single_targets(), (1.0, 0.35, 0.65), _head_params(), 0.0)
        base = multitask_loss(self.outputs, _single_targets(), (1.0, 1.0, 1.0), _head_params(), 0.0)
        np.testing.assert_allclose(loss.head_grads[1], 0.35 * base.head_grads[1])
        np.testing.assert_allclose(loss.head_grads[2], 0.65 * base.head_grads[2])

    def test_penalty_is_part_of_total_and_skips_inactive_heads(self) -> None:
        params = _head_params()
        loss = multitask_loss(self.outputs, _single_targets(), (1.0, 0.0, 0.65), params, 0.5)
        # hidden 1^2 + label 2^2; the row head is inactive and the col bias unregularized
        self.assertAlmostEqual(loss.l2, 0.5 * (1.0 + 4.0))
        self.assertAlmostEqual(loss.total, 2.0 + 0.65 * 0.5 + loss.l2, places=10)
        self.assertIsNone(loss.head_grads[1])
        self.assertAlmostEqual(loss.row, 1.0, places=10)
        self.assertFalse(np.any(params["head_row.weight"].grad))
        np.testing.assert_allclose(params["head_label.weight"].grad, [[2.0]])

    def test_penalty_gradient_can_be_skipped(self) -> None:
        params = _head_params()
        multitask_loss(self.outputs, _single_targets(), (1.0, 0.35, 0.65), params, 0.5, accumulate_l2=False)
        self.assertFalse(np.any(params["hidden.weight"].grad))

    def test_active_params(self) -> None:
        names = [param.name for param in active_params(_head_params(), (1.0, 0.0, 0.0))]
        self.assertEqual(names, ["hidden.weight", "head_label.weight"])

    def test_invalid_alphas_and_lengths(self) -> None:
        with self.assertRaises(ValidationError):
            multitask_loss(self.outputs, _single_targets(), (0.0, 1.0, 1.0), _head_params(), 0.0)
        with self.assertRaises(ValidationError):
            multitask_loss(self.outputs, _single_targets(), (1.0, -0.1, 1.0), _head_params(), 0.0)
        targets = TargetBatch(labels=np.array([1, 2]), rows=np.array([1, 1]), cols=np.array([1, 1]))
        with self.assertRaises(DimensionError):
            multitask_loss(self.outputs, targets, (1.0, 0.35, 0.65), _head_params(), 0.0)

    def test_network_outputs_feed_the_loss(self) -> None:
        config = ModelConfig(canvas_size=16, conv_stages=((5, 2), (3, 2)), hidden_units=4, num_labels=5, num_rows=2, num_cols=3)
        params = build_model(config, None, RngStream(0, STREAM_INIT))
        outputs, _ = forward(params, np.ones((2, 16, 16, 1), np.float32))
        targets = TargetBatch(labels=np.array([1, 5]), rows=np.array([1, 2]), cols=np.array([3, 1]))
        loss = multitask_loss(outputs, targets, (1.0, 0.35, 0.65), params, 0.01)
        self.assertTrue(math.isfinite(loss.total))
        self.assertGreater(loss.l2, 0.0)
        self.assertEqual(loss.head_grads[0].shape, (2, 5))


class OptimizerTests(unittest.TestCase):
    def test_sgd_step(self) -> None:
        param = ParamTensor("w", np.array([1.0, -2.0]))
        param.grad[...] = [0.5, -1.0]
        SGD(0.1).step([param])
        np.testing.assert_allclose(param.value, [0.95, -1.9])

    def test_zero_learning_rate_leaves_values(self) -> None:
        for optimizer in (SGD(0.0), Adam(0.0)):
            param = ParamTensor("w", np.array([1.0, -2.0]))
            param.grad[...] = [0.5, -1.0]
            optimizer.step([param])
            np.testing.assert_array_equal(param.value, [1.0, -2.0])
            self.assertEqual(optimizer.steps, 1)

    def test_adam_first_step_moves_by_learning_rate(self) -> None:
        param = ParamTensor("w", np.array([1.0, -2.0]))
        param.grad[...] = [0.5, -3.0]
        Adam(0.01).step([param])
        np.testing.assert_allclose(param.value, [0.99, -1.99], atol=1e-6)

    def test_adam_state_round_trip_continues_identically(self) -> None:
        def run(optimizer: Adam, param: ParamTensor, steps: int) -> None:
            for step in range(steps):
                param.grad[...] = np.sin(param.value + step)
                optimizer.step([param])

        reference = ParamTensor("w", np.array([0.3, -0.7]))
        reference_opt = Adam(0.05)
        run(reference_opt, reference, 3)
        tensors, meta = reference_opt.state_dict()
        self.assertEqual(meta, {"name": "adam", "steps": 3})
        self.assertEqual(sorted(tensors), ["optim.m.w", "optim.v.w"])

        restored = ParamTensor("w", reference.value.copy())
        restored_opt = Adam(0.05)
        restored_opt.load_state_dict(tensors, meta)
        run(reference_opt, reference, 2)
        run(restored_opt, restored, 2)
        np.testing.assert_array_equal(restored.value, reference.value)

    def test_build_optimizer(self) -> None:
        self.assertIsInstance(build_optimizer("adam", 0.1), Adam)
        self.assertIsInstance(build_optimizer("sgd", 0.1), SGD)
        with self.assertRaises(ValidationError):
            build_optimizer("rmsprop", 0.1)


if __name__ == "__main__":
    unittest.main()
