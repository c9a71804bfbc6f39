"""Shared-trunk convolutional network with label, row and column heads.

Trunk: ``[conv -> ReLU -> 2x2 max-pool] * stages -> flatten -> dense -> ReLU
-> dropout``. The dropped-out hidden vector feeds three parallel dense heads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math
from pathlib import Path
from typing import Any

import numpy as np

from fidel_mtl.alphabet.grid import AlphabetGrid
from fidel_mtl.config import model_config_from_dict, model_config_to_dict
from fidel_mtl.core.checkpoint import load_checkpoint, save_checkpoint
from fidel_mtl.core.layers import (
    conv2d_backward,
    conv2d_forward,
    conv_output_size,
    dense_backward,
    dense_forward,
    dropout,
    dropout_backward,
    maxpool2_backward,
    maxpool2_forward,
    relu,
    relu_backward,
    softmax,
)
from fidel_mtl.core.rng import RngStream
from fidel_mtl.core.tensor import TRAIN_DTYPE, ParamTensor, Parameters
from fidel_mtl.errors import ConfigurationError, DimensionError, FormatError, ValidationError
from fidel_mtl.types import ModelConfig, MultiHeadOutput, Prediction, Tensor


LOGGER = logging.getLogger(__name__)

HEADS = ("label", "row", "col")
MODES = ("train", "eval")


def spatial_trace(config: ModelConfig) -> list[int]:
    """Side length after the input and after every conv+pool stage."""
    if not config.conv_stages:
        raise ConfigurationError("at least one convolution stage is required")
    sizes = [config.canvas_size]
    size = config.canvas_size
    for index, (filter_size, filter_count) in enumerate(config.conv_stages, start=1):
        if filter_size < 1 or filter_count < 1:
            raise ConfigurationError(f"conv stage {index}: filter size and count must be positive")
        conv_size = conv_output_size(size, filter_size)
        if conv_size < 2 or conv_size % 2:
            raise ConfigurationError(
                f"conv stage {index}: (M - N + 1) = ({size} - {filter_size} + 1) = {conv_size} "
                "cannot be halved by 2x2 pooling to a positive integer"
            )
        size = conv_size // 2
        sizes.append(size)
    return sizes


def flatten_width(config: ModelConfig) -> int:
    side = spatial_trace(config)[-1]
    return side * side * config.conv_stages[-1][1]


def _check_config(config: ModelConfig, grid: AlphabetGrid | None) -> None:
    if config.canvas_size < 1 or config.hidden_units < 1:
        raise ConfigurationError("canvas size and hidden width must be positive")
    if min(config.head_sizes) < 1:
        raise ConfigurationError(f"head sizes must be positive, got {config.head_sizes}")
    if not 0.0 < config.keep_prob <= 1.0:
        raise ValidationError(f"keep_prob must be in (0, 1], got {config.keep_prob}")
    if grid is not None and grid.head_sizes != config.head_sizes:
        raise ConfigurationError(f"model head sizes {config.head_sizes} do not match grid {grid.head_sizes}")


def parameter_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...], str | None]]:
    """(name, shape, head) for every parameter, trunk first."""
    shapes: list[tuple[str, tuple[int, ...], str | None]] = []
    channels = 1
    for index, (filter_size, filter_count) in enumerate(config.conv_stages, start=1):
        shapes.append((f"conv{index}.weight", (filter_size, filter_size, channels, filter_count), None))
        shapes.append((f"conv{index}.bias", (filter_count,), None))
        channels = filter_count
    shapes.append(("hidden.weight", (flatten_width(config), config.hidden_units), None))
    shapes.append(("hidden.bias", (config.hidden_units,), None))
    for head, size in zip(HEADS, config.head_sizes):
        shapes.append((f"head_{head}.weight", (config.hidden_units, size), head))
        shapes.append((f"head_{head}.bias", (size,), head))
    return shapes


def build_model(
    config: ModelConfig,
    grid: AlphabetGrid | None,
    rng: RngStream,
    dtype=TRAIN_DTYPE,
) -> Parameters:
    """Weights ~ U(-sqrt(6/fanIn), +sqrt(6/fanIn)); biases zero and unregularized."""
    _check_config(config, grid)
    items: list[ParamTensor] = []
    for index, (name, shape, head) in enumerate(parameter_shapes(config)):
        if name.endswith(".bias"):
            items.append(ParamTensor(name, np.zeros(shape, dtype=dtype), regularized=False, head=head))
            continue
        fan_in = int(np.prod(shape[:-1]))
        bound = math.sqrt(6.0 / fan_in)
        value = rng.substream(index).uniform(-bound, bound, shape).astype(dtype)
        items.append(ParamTensor(name, value, regularized=True, head=head))
    params = Parameters(items)
    LOGGER.debug("Model built: trace=%s parameters=%d", spatial_trace(config), params.count())
    return params


def num_stages(params: Parameters) -> int:
    return sum(1 for name in params.names() if name.startswith("conv") and name.endswith(".weight"))


@dataclass
class ForwardCache:
    single: bool
    stage_inputs: list[Tensor] = field(default_factory=list)
    stage_pre: list[Tensor] = field(default_factory=list)
    stage_masks: list[Tensor] = field(default_factory=list)
    pooled_shape: tuple[int, ...] = ()
    flat: Tensor | None = None
    hidden_pre: Tensor | None = None
    dropped: Tensor | None = None
    dropout_mask: Tensor | None = None
    keep_prob: float = 1.0


def forward(
    params: Parameters,
    images: Tensor,
    mode: str = "eval",
    rng: RngStream | None = None,
    keep_prob: float = 1.0,
    counters: dict[str, int] | None = None,
) -> tuple[MultiHeadOutput, ForwardCache]:
    """Logits of all three heads from one trunk pass; outputs always carry a batch axis."""
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}, got '{mode}'")
    dtype = params["conv1.weight"].value.dtype
    single = images.ndim == 3
    batch = (images[np.newaxis] if single else images).astype(dtype, copy=False)
    if batch.ndim != 4 or batch.shape[-1] != params["conv1.weight"].value.shape[2]:
        raise DimensionError(f"forward: expected images [B, H, W, 1], got shape {images.shape}")

    cache = ForwardCache(single=single, keep_prob=keep_prob if mode == "train" else 1.0)
    activations = batch
    for index in range(1, num_stages(params) + 1):
        cache.stage_inputs.append(activations)
        pre = conv2d_forward(activations, params[f"conv{index}.weight"].value, params[f"conv{index}.bias"].value)
        if counters is not None:
            counters["conv"] = counters.get("conv", 0) + batch.shape[0]
        cache.stage_pre.append(pre)
        activations, mask = maxpool2_forward(relu(pre))
        cache.stage_masks.append(mask)

    cache.pooled_shape = activations.shape
    cache.flat = activations.reshape(batch.shape[0], -1)
    if cache.flat.shape[1] != params["hidden.weight"].value.shape[0]:
        raise DimensionError(
            f"forward: flattened width {cache.flat.shape[1]} != hidden input {params['hidden.weight'].value.shape[0]}"
        )
    cache.hidden_pre = dense_forward(cache.flat, params["hidden.weight"].value, params["hidden.bias"].value)
    cache.dropped, cache.dropout_mask = dropout(relu(cache.hidden_pre), keep_prob, rng, training=mode == "train")

    logits = [
        dense_forward(cache.dropped, params[f"head_{head}.weight"].value, params[f"head_{head}.bias"].value)
        for head in HEADS
    ]
    return MultiHeadOutput(*logits), cache


def backward(
    params: Parameters,
    cache: ForwardCache,
    head_grads: tuple[Tensor | None, Tensor | None, Tensor | None],
    fault: str | None = None,
) -> None:
    """Accumulate parameter gradients; a ``None`` head gradient leaves that head untouched.

    ``fault`` names a parameter whose gradient contribution is sign-flipped,
    used as a negative control for the gradient check.
    """

    def _accumulate(name: str, value: Tensor) -> None:
        if name == fault:
            params[name].grad -= value
        else:
            params[name].grad += value

    grad_hidden = np.zeros_like(cache.dropped)
    for head, grad in zip(HEADS, head_grads):
        if grad is None:
            continue
        grad_input, grad_weight, grad_bias = dense_backward(grad, cache.dropped, params[f"head_{head}.weight"].value)
        _accumulate(f"head_{head}.weight", grad_weight)
        _accumulate(f"head_{head}.bias", grad_bias)
        grad_hidden += grad_input

    grad_hidden = relu_backward(dropout_backward(grad_hidden, cache.dropout_mask, cache.keep_prob), cache.hidden_pre)
    grad_flat, grad_weight, grad_bias = dense_backward(grad_hidden, cache.flat, params["hidden.weight"].value)
    _accumulate("hidden.weight", grad_weight)
    _accumulate("hidden.bias", grad_bias)

    grad = grad_flat.reshape(cache.pooled_shape)
    for index in range(len(cache.stage_inputs), 0, -1):
        grad = relu_backward(maxpool2_backward(grad, cache.stage_masks[index - 1]), cache.stage_pre[index - 1])
        grad, grad_weight, grad_bias = conv2d_backward(
            grad, cache.stage_inputs[index - 1], params[f"conv{index}.weight"].value
        )
        _accumulate(f"conv{index}.weight", grad_weight)
        _accumulate(f"conv{index}.bias", grad_bias)


def grid_lookup(grid: AlphabetGrid) -> tuple[np.ndarray, np.ndarray]:
    """Row and column of every label, indexed by label (index 0 unused)."""
    rows = np.zeros(grid.num_labels + 1, dtype=np.int64)
    cols = np.zeros(grid.num_labels + 1, dtype=np.int64)
    for entry in grid.entries:
        if 1 <= entry.label <= grid.num_labels:
            rows[entry.label], cols[entry.label] = entry.row, entry.col
    return rows, cols


def consistent_mask(labels: np.ndarray, rows: np.ndarray, cols: np.ndarray, grid: AlphabetGrid) -> np.ndarray:
    """True where the predicted label sits at the predicted (row, col) cell."""
    grid_rows, grid_cols = grid_lookup(grid)
    labels = np.clip(labels, 0, grid.num_labels)
    return (grid_rows[labels] == rows) & (grid_cols[labels] == cols)


def argmax_predictions(outputs: MultiHeadOutput) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """1-based argmax of each head."""
    return tuple(np.argmax(logits, axis=-1) + 1 for logits in outputs.heads())  # type: ignore[return-value]


def predict(params: Parameters, image: Tensor, grid: AlphabetGrid) -> Prediction:
    outputs, _ = forward(params, image, mode="eval")
    confidences = []
    picks = []
    for logits in outputs.heads():
        probs = softmax(logits[0].astype(np.float64))
        index = int(np.argmax(probs))
        picks.append(index + 1)
        confidences.append(float(probs[index]))
    label, row, col = picks
    consistent = bool(consistent_mask(np.array([label]), np.array([row]), np.array([col]), grid)[0])
    return Prediction(label=label, row=row, col=col, confidences=tuple(confidences), consistent=consistent)  # type: ignore[arg-type]


def cast_params(params: Parameters, dtype) -> Parameters:
    return Parameters([item.astype(dtype) for item in params])


def copy_values(params: Parameters) -> dict[str, Tensor]:
    return {item.name: item.value.copy() for item in params}


def load_values(params: Parameters, values: dict[str, Tensor]) -> None:
    for item in params:
        if item.name not in values:
            raise FormatError(f"checkpoint has no tensor '{item.name}'", 0)
        if values[item.name].shape != item.value.shape:
            raise DimensionError(
                f"checkpoint tensor '{item.name}' has shape {values[item.name].shape}, model expects {item.value.shape}"
            )
        item.value[...] = values[item.name]


def params_from_values(config: ModelConfig, values: dict[str, Tensor]) -> Parameters:
    params = Parameters(
        [
            ParamTensor(name, np.zeros(shape, dtype=TRAIN_DTYPE), regularized=not name.endswith(".bias"), head=head)
            for name, shape, head in parameter_shapes(config)
        ]
    )
    load_values(params, values)
    return params


def save_model(path: Path, params: Parameters, config: ModelConfig, meta: dict[str, Any] | None = None) -> None:
    payload = dict(meta or {})
    payload["model_config"] = model_config_to_dict(config)
    save_checkpoint(path, copy_values(params), payload)


def load_model(path: Path) -> tuple[Parameters, ModelConfig, dict[str, Any]]:
    tensors, meta = load_checkpoint(path)
    if "model_config" not in meta:
        raise FormatError(f"checkpoint {path} carries no model_config", 0)
    config = model_config_from_dict(meta["model_config"])
    params = params_from_values(config, tensors)
    return params, config, meta
