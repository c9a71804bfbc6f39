"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
from typing import Callable

import numpy as np

from fidel_mtl.core.rng import STREAM_GRADCHECK, RngStream
from fidel_mtl.core.tensor import CHECK_DTYPE, Parameters
from fidel_mtl.errors import ValidationError


LOGGER = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-5
DEFAULT_TOLERANCE = 1e-5


@dataclass
class GradCheckReport:
    max_error: float = 0.0
    worst_param: str = ""
    per_param: dict[str, float] = field(default_factory=dict)
    coordinates_checked: int = 0

    def passed(self, tolerance: float = DEFAULT_TOLERANCE) -> bool:
        return self.max_error < tolerance


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))


def _sample_coordinates(grad: np.ndarray, top_k: int, random_k: int, rng: RngStream) -> list[int]:
    flat = np.abs(grad).ravel()
    chosen: list[int] = []
    if top_k > 0:
        # stable sort keeps ties in index order
        chosen.extend(int(i) for i in np.argsort(-flat, kind="stable")[:top_k])
    if random_k > 0:
        for index in rng.integers(0, flat.size, random_k):
            if int(index) not in chosen:
                chosen.append(int(index))
    return chosen


def gradient_check(
    loss_and_grads: Callable[[], float],
    params: Parameters,
    epsilon: float = DEFAULT_EPSILON,
    top_k: int = 6,
    random_k: int = 6,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    ``loss_and_grads`` must zero the gradients, run forward and backward with
    fixed randomness, leave analytic gradients in ``param.grad`` and return the
    scalar loss. Parameters must be float64.
    """
    for param in params:
        if not param.value.flags.c_contiguous:
            raise ValidationError(f"gradient check needs contiguous parameters; '{param.name}' is not")
        if param.value.dtype != CHECK_DTYPE:
            raise ValidationError(f"gradient check needs float64 parameters; '{param.name}' is {param.value.dtype}")

    loss_and_grads()
    analytic = {param.name: param.grad.copy() for param in params}
    rng = RngStream(seed, STREAM_GRADCHECK)
    report = GradCheckReport()

    for param in params:
        worst = 0.0
        flat_value = param.value.reshape(-1)
        for index in _sample_coordinates(analytic[param.name], top_k, random_k, rng.substream(len(report.per_param))):
            original = flat_value[index]
            flat_value[index] = original + epsilon
            loss_plus = loss_and_grads()
            flat_value[index] = original - epsilon
            loss_minus = loss_and_grads()
            flat_value[index] = original

            numeric = (loss_plus - loss_minus) / (2.0 * epsilon)
            error = relative_error(float(analytic[param.name].reshape(-1)[index]), numeric)
            worst = max(worst, error)
            report.coordinates_checked += 1

        report.per_param[param.name] = worst
        LOGGER.debug("gradcheck %s: max relative error %.3e", param.name, worst)
        if not report.worst_param or worst > report.max_error:
            report.max_error = worst
            report.worst_param = param.name

    # restore analytic gradients for the caller
    for param in params:
        param.grad[...] = analytic[param.name]
    return report
