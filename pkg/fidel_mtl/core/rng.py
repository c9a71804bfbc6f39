"""Seeded, portable random streams.

Every stream is a numpy ``Generator`` over the PCG64 bit generator, seeded
through ``SeedSequence(seed, spawn_key=(stream_id, *sub_ids))``. PCG64 output
is specified bit-for-bit, so a (seed, stream) pair draws the same sequence on
any platform and numpy build.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


ALGORITHM = "PCG64"

# Stream ids reserved by the toolkit; class-level augmentation streams use the
# class label itself, which stays below these.
STREAM_INIT = 1_000_001
STREAM_SHUFFLE = 1_000_002
STREAM_DROPOUT = 1_000_003
STREAM_SPLIT = 1_000_004
STREAM_SYNTH = 1_000_005
STREAM_GRADCHECK = 1_000_006


@dataclass
class RngStream:
    seed: int
    stream_id: int = 0
    sub_ids: tuple[int, ...] = ()
    algorithm: str = ALGORITHM
    _generator: np.random.Generator | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.algorithm != ALGORITHM:
            raise ValueError(f"unsupported RNG algorithm '{self.algorithm}'")
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")

    @property
    def generator(self) -> np.random.Generator:
        if self._generator is None:
            sequence = np.random.SeedSequence(
                entropy=self.seed,
                spawn_key=(self.stream_id, *self.sub_ids),
            )
            self._generator = np.random.Generator(np.random.PCG64(sequence))
        return self._generator

    def substream(self, *sub_ids: int) -> "RngStream":
        """Independent child stream, e.g. one per epoch or per sample."""
        return RngStream(self.seed, self.stream_id, (*self.sub_ids, *sub_ids))

    def random(self, shape: tuple[int, ...] | int | None = None) -> np.ndarray | float:
        return self.generator.random(shape)

    def uniform(self, low: float, high: float, shape: tuple[int, ...] | int | None = None):
        return self.generator.uniform(low, high, shape)

    def integers(self, low: int, high: int, shape: tuple[int, ...] | int | None = None):
        return self.generator.integers(low, high, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)
