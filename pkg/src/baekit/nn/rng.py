"""Seeded random streams.

Every randomized operation in baekit takes an :class:`RngStream` rather than a
global generator. A stream is a ``(seed, stream_id)`` pair plus an optional path
of sub-stream indices; it maps onto a NumPy ``SeedSequence`` spawn key, so
distinct ids give statistically independent PCG64 generators and the same
stream always reproduces the same draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0
    path: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.stream_id < 0 or any(p < 0 for p in self.path):
            raise ValueError("stream ids must be non-negative")

    @property
    def spawn_key(self) -> tuple[int, ...]:
        return (self.stream_id, *self.path)

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        seq = np.random.SeedSequence(self.seed & _SEED_MASK, spawn_key=self.spawn_key)
        return np.random.Generator(np.random.PCG64(seq))

    def child(self, index: int) -> RngStream:
        """Independent sub-stream, e.g. one per ensemble member or epoch."""
        return RngStream(self.seed, self.stream_id, (*self.path, index))

    def __str__(self) -> str:
        key = "/".join(str(k) for k in self.spawn_key)
        return f"{self.seed}:{key}"
