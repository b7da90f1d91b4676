"""Counter-based random substreams.

Every random number used by the samplers is addressed by
``(master seed, tag, index)``: the tag names the consumer (source,
station A, station B, ...) and the index is usually the global pair
index. A draw therefore never depends on the order in which pairs are
generated, on chunking, or on how many threads did the work.

Backed by numpy's Philox, a counter-based generator: each 256-bit
counter value yields four 64-bit words, so word ``i`` of a keyed stream
is reached with ``advance(i // 4)``.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np
from numpy.random import Philox, SeedSequence
from scipy.special import ndtri

_WORDS_PER_BLOCK = 4
_TO_UNIT = 2.0 ** -53

SEED_MAX = 2 ** 64 - 1


def tag_code(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


@dataclass(frozen=True)
class CounterStream:
    """Random-access uniform and normal draws keyed by a 64-bit seed."""

    seed: int

    def __post_init__(self) -> None:
        if not 0 <= int(self.seed) <= SEED_MAX:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")

    def key(self, tag: str) -> np.ndarray:
        return SeedSequence([int(self.seed), tag_code(tag)]).generate_state(2, np.uint64)

    def raw(self, tag: str, start: int, count: int) -> np.ndarray:
        """64-bit words ``start .. start + count - 1`` of the ``tag`` stream."""
        if start < 0 or count < 0:
            raise ValueError("start and count must be nonnegative")
        bg = Philox(key=self.key(tag))
        block, offset = divmod(int(start), _WORDS_PER_BLOCK)
        if block:
            bg.advance(block)
        return bg.random_raw(offset + int(count))[offset:]

    def uniform(self, tag: str, start: int, count: int) -> np.ndarray:
        """Uniform draws on ``[0, 1)`` with 53-bit resolution."""
        return (self.raw(tag, start, count) >> np.uint64(11)) * _TO_UNIT

    def normal(self, tag: str, start: int, count: int) -> np.ndarray:
        """Standard normal draws by inversion of open-interval uniforms."""
        u = ((self.raw(tag, start, count) >> np.uint64(11)) + 0.5) * _TO_UNIT
        return ndtri(u)

    def spawn(self, name: str) -> "CounterStream":
        """Independent stream family for a named sub-experiment."""
        child = SeedSequence([int(self.seed), tag_code("spawn:" + name)]).generate_state(1, np.uint64)
        return CounterStream(int(child[0]))


def as_stream(rng: "CounterStream | int") -> CounterStream:
    return rng if isinstance(rng, CounterStream) else CounterStream(int(rng))
