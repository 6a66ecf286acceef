"""Network size estimation from rank-wise distances to the closest peers.

For ``N`` uniform IDs the expected normalised distance from a random key to
its ``i``-th closest peer is ``i / (N + 1)``. Averaging observed distances
per rank and fitting ``d_i = c * i`` by least squares through the origin gives
``c = sum(i * d_i) / sum(i**2)`` and ``N = 1/c - 1``.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

from kadlab.keyspace import KEY_SPACE, Key256

DEFAULT_WINDOW = 256


class UninitializedEstimator(RuntimeError):
    """Raised when an estimate is requested before any sample was ingested."""


@dataclass(frozen=True)
class NetsizeSample:
    key: Key256
    closest: tuple[Key256, ...]

    def __post_init__(self):
        if not self.closest:
            raise ValueError("sample needs at least one peer")
        dists = [p ^ self.key for p in self.closest]
        if any(a > b for a, b in zip(dists, dists[1:])):
            raise ValueError("sample peers are not sorted by distance to the key")

    def normalized_distances(self) -> list[float]:
        # int / int is correctly rounded, no 256-bit division needed
        return [(p ^ self.key) / KEY_SPACE for p in self.closest]


@dataclass(frozen=True)
class NetsizeEstimate:
    n_hat: float
    sample_count: int
    avg_distance: tuple[float, ...]


class NetsizeEstimator:
    """Running per-rank mean distances over the last ``window`` samples.

    ``window=None`` keeps a cumulative mean over every sample ever ingested.
    """

    def __init__(self, k: int = 20, window: int | None = DEFAULT_WINDOW):
        self.k = k
        self.window = window
        self._samples: deque[list[float]] = deque(maxlen=window)
        self._total = 0

    def ingest_sample(self, sample: NetsizeSample) -> None:
        self._samples.append(sample.normalized_distances()[: self.k])
        self._total += 1

    def ingest(self, key: Key256, closest: Sequence[Key256]) -> None:
        self.ingest_sample(NetsizeSample(key, tuple(closest)))

    @property
    def sample_count(self) -> int:
        return len(self._samples)

    def average_distances(self) -> list[float]:
        sums = [0.0] * self.k
        counts = [0] * self.k
        for dists in self._samples:
            for i, d in enumerate(dists):
                sums[i] += d
                counts[i] += 1
        return [s / c for s, c in zip(sums, counts) if c]

    def estimate(self) -> NetsizeEstimate:
        if not self._samples:
            raise UninitializedEstimator("no samples ingested")
        avg = self.average_distances()
        return NetsizeEstimate(fit_network_size(avg, self.k), len(self._samples), tuple(avg))


def fit_network_size(avg_distance: Sequence[float], k: int | None = None) -> float:
    """Closed-form least-squares ``N`` for normalised rank means ``avg_distance``.

    Clamped below at ``k`` (defaults to the number of ranks given).
    """
    num = sum(i * d for i, d in enumerate(avg_distance, start=1))
    den = sum(i * i for i in range(1, len(avg_distance) + 1))
    floor = len(avg_distance) if k is None else k
    if num <= 0:
        return float("inf")
    return max(den / num - 1.0, float(floor))


def sample_network(
    est: NetsizeEstimator,
    lookup: Callable[[Key256], Sequence[Key256]],
    rng: random.Random,
    m: int = 256,
) -> NetsizeEstimate:
    """Query ``m`` uniformly random keys through ``lookup`` and ingest the results."""
    for _ in range(m):
        key = rng.getrandbits(256)
        closest = lookup(key)
        if closest:
            est.ingest(key, closest)
    return est.estimate()


def estimate_from_keys(lookup: Callable[[Key256], Sequence[Key256]], keys: Iterable[Key256], k: int = 20) -> NetsizeEstimate:
    est = NetsizeEstimator(k=k, window=None)
    for key in keys:
        est.ingest(key, lookup(key))
    return est.estimate()
