"""Seeded sample selection and sequence digests.

The generator is SplitMix64 (Steele, Lea, Flood 2014) with the user seed used
directly as the initial state. Each call advances the state by the golden
gamma 0x9E3779B97F4A7C15 and returns the mixed state::

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    return z ^ (z >> 31)

all arithmetic modulo 2**64. Bounded draws in [0, n) use rejection: draws
below ``2**64 mod n`` are discarded, the rest are reduced modulo ``n``.

The sequence digest is 64-bit FNV-1a over each index encoded as an unsigned
64-bit little-endian integer.
"""

from __future__ import annotations

from collections.abc import Iterable

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


class EmptyDatasetError(ValueError):
    pass


class SplitMix64:
    def __init__(self, seed: int):
        if not 0 <= seed <= MASK64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.state = seed

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) without modulo bias."""
        if n <= 0:
            raise ValueError("bound must be positive")
        threshold = (1 << 64) % n
        while True:
            x = self.next_u64()
            if x >= threshold:
                return x % n

    def uniform(self) -> float:
        """Float in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))


def select_samples(seed: int, dataset_size: int, count: int) -> list[int]:
    """Deterministic list of ``count`` indices into a data set of ``dataset_size``.

    When ``count <= dataset_size`` the result is the prefix of a Fisher-Yates
    shuffle of ``range(dataset_size)`` (i from n-1 down to 1, swap with
    ``below(i + 1)``), so indices are distinct. Otherwise indices are drawn
    independently with ``below(dataset_size)``.
    """
    if dataset_size <= 0:
        raise EmptyDatasetError("data set is empty")
    if count <= 0:
        raise ValueError(f"count must be positive, got {count}")
    rng = SplitMix64(seed)
    if count > dataset_size:
        return [rng.below(dataset_size) for _ in range(count)]
    order = list(range(dataset_size))
    for i in range(dataset_size - 1, 0, -1):
        j = rng.below(i + 1)
        order[i], order[j] = order[j], order[i]
    return order[:count]


def sequence_digest(indices: Iterable[int]) -> int:
    h = FNV_OFFSET
    for idx in indices:
        for byte in int(idx).to_bytes(8, "little"):
            h ^= byte
            h = (h * FNV_PRIME) & MASK64
    return h


def format_digest(digest: int) -> str:
    return f"{digest:016x}"


def accuracy_sequence(seed: int, dataset_size: int) -> list[int]:
    """Issue order for an accuracy run: a seeded permutation of the whole data set."""
    return select_samples(seed, dataset_size, dataset_size)


class PerformanceSequence:
    """Issue order for a performance run.

    The loaded subset is ``select_samples(seed, dataset_size, subset_size)``;
    query ``i`` uses ``subset[i % subset_size]``, so any prefix is stable
    however long the run turns out to be.
    """

    def __init__(self, seed: int, dataset_size: int, subset_size: int):
        self.subset = select_samples(seed, dataset_size, subset_size)

    def __getitem__(self, i: int) -> int:
        return self.subset[i % len(self.subset)]

    def take(self, count: int) -> list[int]:
        return [self[i] for i in range(count)]
