"""Weighted multi-task objective over the three heads."""

from __future__ import annotations

from dataclasses import dataclass

from fidel_mtl.config import validate_alphas
from fidel_mtl.core.layers import l2_penalty, softmax_cross_entropy
from fidel_mtl.core.tensor import ParamTensor, Parameters
from fidel_mtl.dataset.targets import one_hot_batch
from fidel_mtl.errors import DimensionError
from fidel_mtl.types import MultiHeadOutput, TargetBatch, Tensor


HEAD_INDEX = {"label": 0, "row": 1, "col": 2}


@dataclass
class LossBreakdown:
    total: float
    label: float
    row: float
    col: float
    l2: float
    head_grads: tuple[Tensor | None, Tensor | None, Tensor | None]

    @property
    def per_task(self) -> tuple[float, float, float]:
        return (self.label, self.row, self.col)


def is_active(param: ParamTensor, alphas: tuple[float, float, float]) -> bool:
    """Trunk parameters are always active; a head is inactive when its alpha is 0."""
    return param.head is None or alphas[HEAD_INDEX[param.head]] > 0


def active_params(params: Parameters, alphas: tuple[float, float, float]) -> list[ParamTensor]:
    return [param for param in params if is_active(param, alphas)]


def multitask_loss(
    outputs: MultiHeadOutput,
    targets: TargetBatch,
    alphas: tuple[float, float, float],
    params: Parameters,
    l2_lambda: float,
    accumulate_l2: bool = True,
) -> LossBreakdown:
    """alpha1*l1 + alpha2*l2 + alpha3*l3 + L2 penalty, with alpha-scaled logit gradients.

    Inactive heads get ``None`` instead of a gradient and are left out of the
    penalty. ``accumulate_l2`` adds the penalty gradient into ``param.grad``.
    """
    validate_alphas(alphas)
    if len(outputs) != len(targets):
        raise DimensionError(f"multitask_loss: {len(outputs)} outputs vs {len(targets)} targets")

    losses: list[float] = []
    grads: list[Tensor | None] = []
    total = 0.0
    for logits, indices, alpha in zip(outputs.heads(), (targets.labels, targets.rows, targets.cols), alphas):
        loss, grad = softmax_cross_entropy(logits, one_hot_batch(indices, logits.shape[-1], dtype=logits.dtype))
        losses.append(loss)
        if alpha > 0:
            total += alpha * loss
            grads.append(grad * logits.dtype.type(alpha))
        else:
            grads.append(None)

    penalty, _ = l2_penalty(active_params(params, alphas), l2_lambda, accumulate=accumulate_l2)
    return LossBreakdown(
        total=total + penalty,
        label=losses[0],
        row=losses[1],
        col=losses[2],
        l2=penalty,
        head_grads=(grads[0], grads[1], grads[2]),
    )
