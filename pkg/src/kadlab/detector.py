"""Censorship detection by comparing closest-peer CPLs against their honest model.

Under no attack the common prefix length of a random peer with a key is
geometric (``P(cpl > x) = 0.5**(x+1)``). A lookup returns the ``k`` largest of
``N`` such values; their averaged order-statistic pmf is the model. The
observed histogram of the ``k`` CPLs is scored by KL divergence against it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

from kadlab.estimator import NetsizeEstimate, NetsizeEstimator
from kadlab.keyspace import KEY_BITS, Key256, common_prefix_length, to_hex

SUPPORT = KEY_BITS + 1
DEFAULT_THRESHOLD = 0.94
MODEL_FLOOR = 1e-300
_LOG_HALF = math.log(0.5)


@dataclass(frozen=True)
class CplDistribution:
    pmf: tuple[float, ...]

    def __post_init__(self):
        if len(self.pmf) != SUPPORT:
            raise ValueError(f"pmf must have {SUPPORT} entries")

    def __getitem__(self, x: int) -> float:
        return self.pmf[x]

    def mean(self) -> float:
        return sum(x * p for x, p in enumerate(self.pmf))

    def support(self) -> list[int]:
        return [x for x, p in enumerate(self.pmf) if p > 0]


def _order_stat_terms(x: int, n: int, k: int) -> list[float]:
    """Binomial terms ``C(N,i) (1-s)^(N-i) s^i`` for ``i < k`` with ``s = 0.5**(x+1)``."""
    s = 0.5 ** (x + 1)
    log_keep = math.log1p(-s)
    log_n_fact = math.lgamma(n + 1)
    terms = []
    for i in range(min(k, n + 1)):
        log_binom = log_n_fact - math.lgamma(i + 1) - math.lgamma(n - i + 1)
        terms.append(math.exp(log_binom + (n - i) * log_keep + i * (x + 1) * _LOG_HALF))
    return terms


def model_cdf_jth(j: int, x: int, n: float) -> float:
    """``P(j-th largest CPL <= x)`` among ``round(n)`` uniform peer IDs."""
    if j < 1:
        raise ValueError("j must be >= 1")
    if x < 0:
        return 0.0
    return min(1.0, sum(_order_stat_terms(x, round(n), j)))


def model_distribution(n: float, k: int = 20) -> CplDistribution:
    """Average pmf of the ``k`` largest CPLs among ``round(n)`` uniform IDs."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return _model_distribution(round(n), k)


@lru_cache(maxsize=256)
def _model_distribution(n: int, k: int) -> CplDistribution:
    pmf = []
    prev = 0.0
    for x in range(SUPPORT):
        cum = 0.0
        avg_cdf = 0.0
        for t in _order_stat_terms(x, n, k):
            cum += t
            avg_cdf += min(cum, 1.0)
        # j > N+1 rows: F_j(x) = 1 since fewer than j peers exist
        avg_cdf += max(0, k - (n + 1))
        avg_cdf /= k
        pmf.append(max(avg_cdf - prev, 0.0))
        prev = avg_cdf
    return CplDistribution(tuple(pmf))


def empirical_distribution(cpls: Sequence[int], k: int = 20) -> CplDistribution:
    if len(cpls) != k:
        raise ValueError(f"expected {k} prefix lengths, got {len(cpls)}")
    counts = [0] * SUPPORT
    for c in cpls:
        if not 0 <= c <= KEY_BITS:
            raise ValueError(f"prefix length {c} out of range")
        counts[c] += 1
    return CplDistribution(tuple(c / k for c in counts))


def kl_divergence(q: CplDistribution, p: CplDistribution) -> float:
    """``D(q || p)`` summed over the support of ``q``; ``p`` floored at 1e-300."""
    total = 0.0
    for qx, px in zip(q.pmf, p.pmf):
        if qx > 0:
            total += qx * math.log(qx / max(px, MODEL_FLOOR))
    return max(total, 0.0)


@dataclass(frozen=True)
class DetectionVerdict:
    key: Key256
    kl: float
    threshold: float
    attacked: bool
    n_hat_used: float
    empirical: CplDistribution
    model: CplDistribution

    def to_row(self) -> dict:
        return {
            "key": to_hex(self.key),
            "kl": self.kl,
            "threshold": self.threshold,
            "attacked": int(self.attacked),
            "n_hat": self.n_hat_used,
        }


def detect(
    lookup: Callable[[Key256], Sequence[Key256]],
    estimate: NetsizeEstimate | NetsizeEstimator,
    key: Key256,
    threshold: float = DEFAULT_THRESHOLD,
    k: int = 20,
) -> DetectionVerdict:
    """Flag ``key`` as censored when the KL score of its closest peers exceeds ``threshold``.

    Issues exactly one ``lookup`` call. Raises ``UninitializedEstimator`` when
    handed an estimator without samples.
    """
    peers = lookup(key)
    if not peers:
        raise ValueError("lookup returned no peers")
    cpls = [common_prefix_length(p, key) for p in peers]
    q = empirical_distribution(cpls, k=len(cpls))
    if isinstance(estimate, NetsizeEstimator):
        estimate = estimate.estimate()
    n_hat = estimate.n_hat
    p = model_distribution(n_hat, k)
    kl = kl_divergence(q, p)
    return DetectionVerdict(key, kl, threshold, kl > threshold, n_hat, q, p)
