"""Reproducible random streams.

All randomness in the package flows from a single 64-bit master seed.
Independent streams are derived by feeding (master_seed, stream_id) into
numpy's SeedSequence, so replicate r of design k can be regenerated in
isolation and draws are identical regardless of execution order or
worker count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DrawRng:
    """One reproducible random stream: (master_seed, stream_id)."""

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        if self.master_seed < 0 or self.stream_id < 0:
            raise ValueError("seed and stream_id must be nonnegative")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence([self.master_seed, self.stream_id])
        return np.random.Generator(np.random.PCG64(ss))


def stream_id(design: int, replicate: int) -> int:
    """Pack a design index and replicate index into one stream id."""
    if replicate < 0 or design < 0:
        raise ValueError("negative stream components")
    return (design << 40) | replicate
