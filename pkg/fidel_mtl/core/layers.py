"""Forward and backward passes for every layer the network uses.

Layouts are channels-last: images ``[H, W, C]``, filters ``[N, N, Cin, Cout]``,
dense weights ``[K, L]``. Each op also accepts a leading batch axis and then
sums parameter gradients over it in index order.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from fidel_mtl.core.rng import RngStream
from fidel_mtl.core.tensor import ParamTensor
from fidel_mtl.errors import DimensionError, ValidationError
from fidel_mtl.types import Tensor


def _as_batch(tensor: Tensor, rank: int, name: str) -> tuple[Tensor, bool]:
    if tensor.ndim == rank:
        return tensor[np.newaxis, ...], True
    if tensor.ndim == rank + 1:
        return tensor, False
    raise DimensionError(f"{name}: expected rank {rank} or {rank + 1}, got shape {tensor.shape}")


def _unbatch(tensor: Tensor, single: bool) -> Tensor:
    return tensor[0] if single else tensor


def conv_output_size(size: int, filter_size: int) -> int:
    """Valid, stride-1 convolution: M - N + 1."""
    return size - filter_size + 1


def _im2col(batch: Tensor, fh: int, fw: int) -> Tensor:
    # (B, Ho, Wo, C, fh, fw) -> (B, Ho, Wo, fh, fw, C) -> (B*Ho*Wo, fh*fw*C)
    windows = sliding_window_view(batch, (fh, fw), axis=(1, 2))
    b, ho, wo, c = windows.shape[:4]
    return windows.transpose(0, 1, 2, 4, 5, 3).reshape(b * ho * wo, fh * fw * c)


def conv2d_forward(inputs: Tensor, filters: Tensor, bias: Tensor) -> Tensor:
    batch, single = _as_batch(inputs, 3, "conv2d input")
    if filters.ndim != 4:
        raise DimensionError(f"conv2d filters must be [N, N, Cin, Cout], got {filters.shape}")
    fh, fw, cin, cout = filters.shape
    _, h, w, c = batch.shape
    if c != cin or fh > h or fw > w:
        raise DimensionError(f"conv2d: input shape {inputs.shape} incompatible with filter shape {filters.shape}")
    if bias.shape != (cout,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} incompatible with filter shape {filters.shape}")

    ho, wo = conv_output_size(h, fh), conv_output_size(w, fw)
    cols = _im2col(batch, fh, fw)
    out = cols @ filters.reshape(fh * fw * cin, cout) + bias
    return _unbatch(out.reshape(batch.shape[0], ho, wo, cout), single)


def conv2d_backward(grad_out: Tensor, inputs: Tensor, filters: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    batch, single = _as_batch(inputs, 3, "conv2d input")
    grad_batch, _ = _as_batch(grad_out, 3, "conv2d gradOut")
    fh, fw, cin, cout = filters.shape
    b, h, w, _ = batch.shape
    expected = (b, conv_output_size(h, fh), conv_output_size(w, fw), cout)
    if grad_batch.shape != expected:
        raise DimensionError(f"conv2d gradOut: expected shape {expected}, got {grad_batch.shape}")

    flat_grad = grad_batch.reshape(-1, cout)
    grad_bias = flat_grad.sum(axis=0)
    grad_filters = (_im2col(batch, fh, fw).T @ flat_grad).reshape(fh, fw, cin, cout)

    # Full correlation of the padded gradient with the spatially flipped filters.
    padded = np.pad(grad_batch, ((0, 0), (fh - 1, fh - 1), (fw - 1, fw - 1), (0, 0)))
    flipped = filters[::-1, ::-1].transpose(0, 1, 3, 2).reshape(fh * fw * cout, cin)
    grad_input = (_im2col(padded, fh, fw) @ flipped).reshape(b, h, w, cin)
    return _unbatch(grad_input, single), grad_filters, grad_bias


def maxpool2_forward(inputs: Tensor) -> tuple[Tensor, Tensor]:
    """2x2, stride-2 max pooling; the mask holds the row-major argmax (0..3) per window."""
    batch, single = _as_batch(inputs, 3, "maxpool input")
    b, h, w, c = batch.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2 needs even height and width, got shape {inputs.shape}")
    windows = batch.reshape(b, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(b, h // 2, w // 2, c, 4)
    mask = np.argmax(windows, axis=-1).astype(np.uint8)
    out = np.take_along_axis(windows, mask[..., np.newaxis].astype(np.intp), axis=-1)[..., 0]
    return _unbatch(out, single), _unbatch(mask, single)


def maxpool2_backward(grad_out: Tensor, mask: Tensor) -> Tensor:
    if grad_out.shape != mask.shape:
        raise DimensionError(f"maxpool2 backward: gradOut shape {grad_out.shape} != mask shape {mask.shape}")
    grad_batch, single = _as_batch(grad_out, 3, "maxpool gradOut")
    mask_batch, _ = _as_batch(mask, 3, "maxpool mask")
    b, h2, w2, c = grad_batch.shape
    routed = np.zeros((b, h2, w2, c, 4), dtype=grad_out.dtype)
    np.put_along_axis(routed, mask_batch[..., np.newaxis].astype(np.intp), grad_batch[..., np.newaxis], axis=-1)
    grad_input = routed.reshape(b, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(b, 2 * h2, 2 * w2, c)
    return _unbatch(grad_input, single)


def dense_forward(inputs: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    if inputs.ndim not in (1, 2) or weights.ndim != 2 or inputs.shape[-1] != weights.shape[0]:
        raise DimensionError(f"dense: input shape {inputs.shape} incompatible with weight shape {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise DimensionError(f"dense: bias shape {bias.shape} incompatible with weight shape {weights.shape}")
    return inputs @ weights + bias


def dense_backward(grad_out: Tensor, inputs: Tensor, weights: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    expected = inputs.shape[:-1] + (weights.shape[1],)
    if grad_out.shape != expected:
        raise DimensionError(f"dense gradOut: expected shape {expected}, got {grad_out.shape}")
    grad_input = grad_out @ weights.T
    if inputs.ndim == 1:
        return grad_input, np.outer(inputs, grad_out), grad_out.copy()
    return grad_input, inputs.T @ grad_out, grad_out.sum(axis=0)


def relu(inputs: Tensor) -> Tensor:
    return np.maximum(inputs, 0).astype(inputs.dtype, copy=False)


def relu_backward(grad_out: Tensor, inputs: Tensor) -> Tensor:
    if grad_out.shape != inputs.shape:
        raise DimensionError(f"relu backward: gradOut shape {grad_out.shape} != input shape {inputs.shape}")
    return np.where(inputs > 0, grad_out, 0).astype(grad_out.dtype, copy=False)


def softmax(logits: Tensor) -> Tensor:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=-1, keepdims=True)


def _check_one_hot(target: Tensor) -> np.ndarray:
    ones = target == 1
    if not np.all(ones | (target == 0)) or not np.all(ones.sum(axis=-1) == 1):
        raise ValidationError("softmax_cross_entropy target must be one-hot")
    return np.argmax(target, axis=-1)


def softmax_cross_entropy(logits: Tensor, target: Tensor) -> tuple[float, Tensor]:
    """Mean cross-entropy over the batch (a single sample when rank 1) and its logit gradient."""
    if logits.shape != target.shape or logits.ndim not in (1, 2):
        raise DimensionError(f"softmax_cross_entropy: logits shape {logits.shape} != target shape {target.shape}")
    index = _check_one_hot(target)
    batch, single = (logits[np.newaxis], True) if logits.ndim == 1 else (logits, False)
    index = np.atleast_1d(index)

    shifted = batch - np.max(batch, axis=-1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(shifted), axis=-1))
    picked = shifted[np.arange(batch.shape[0]), index]
    loss = float(np.mean(log_norm - picked))

    probs = np.exp(shifted - log_norm[:, np.newaxis])
    grad = probs - (target[np.newaxis] if single else target)
    grad = (grad / batch.shape[0]).astype(logits.dtype, copy=False)
    return loss, _unbatch(grad, single)


def l2_penalty(
    params: Iterable[ParamTensor],
    lam: float,
    accumulate: bool = True,
) -> tuple[float, dict[str, Tensor]]:
    """lam * sum of squared weights (biases excluded); optionally adds 2*lam*w to each weight grad."""
    if lam < 0:
        raise ValidationError(f"L2 lambda must be >= 0, got {lam}")
    penalty = 0.0
    contributions: dict[str, Tensor] = {}
    for param in params:
        if not param.regularized:
            continue
        penalty += lam * float(np.sum(param.value.astype(np.float64) ** 2))
        if lam == 0:
            continue
        contribution = (2.0 * lam) * param.value
        contributions[param.name] = contribution
        if accumulate:
            param.grad += contribution
    return penalty, contributions


def dropout(inputs: Tensor, keep_prob: float, rng: RngStream | None, training: bool) -> tuple[Tensor, Tensor]:
    """Inverted dropout; evaluation mode returns the input object untouched."""
    if not 0.0 < keep_prob <= 1.0:
        raise ValidationError(f"keep probability must be in (0, 1], got {keep_prob}")
    if not training or keep_prob == 1.0:
        return inputs, np.ones_like(inputs)
    if rng is None:
        raise ValidationError("dropout in training mode needs an RngStream")
    mask = (rng.random(inputs.shape) < keep_prob).astype(inputs.dtype)
    return inputs * mask / inputs.dtype.type(keep_prob), mask


def dropout_backward(grad_out: Tensor, mask: Tensor, keep_prob: float) -> Tensor:
    if grad_out.shape != mask.shape:
        raise DimensionError(f"dropout backward: gradOut shape {grad_out.shape} != mask shape {mask.shape}")
    if keep_prob == 1.0:
        return grad_out
    return grad_out * mask / grad_out.dtype.type(keep_prob)
