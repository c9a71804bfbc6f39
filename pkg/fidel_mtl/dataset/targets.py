"""Label targets: the (label, row, col) triple and one-hot materialization."""

from __future__ import annotations

import numpy as np

from fidel_mtl.alphabet.grid import AlphabetGrid, label_to_grid
from fidel_mtl.errors import ValidationError
from fidel_mtl.types import LabelTriple, Tensor


def one_hot(index: int, size: int, dtype=np.float32) -> Tensor:
    if not 1 <= index <= size:
        raise ValidationError(f"one-hot index {index} out of range 1..{size}")
    vector = np.zeros(size, dtype=dtype)
    vector[index - 1] = 1
    return vector


def one_hot_batch(indices: np.ndarray, size: int, dtype=np.float32) -> Tensor:
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 1 or indices.max() > size):
        raise ValidationError(f"one-hot indices must lie in 1..{size}")
    matrix = np.zeros((indices.shape[0], size), dtype=dtype)
    matrix[np.arange(indices.shape[0]), indices - 1] = 1
    return matrix


def derive_targets(label: int, grid: AlphabetGrid) -> LabelTriple:
    row, col = label_to_grid(grid, label)
    return LabelTriple(label=label, row=row, col=col)
