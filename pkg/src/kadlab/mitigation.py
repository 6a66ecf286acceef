"""Region-based queries: reach every peer inside a common-prefix region of a key.

Sybils can crowd the ``k`` closest slots of a CID but cannot evict honest
peers from the key space. Publishing to and resolving from the whole prefix
region that holds about ``k`` honest peers therefore keeps honest resolvers
in the loop. Regions are enumerated with nothing but closest-peer lookups.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

from kadlab.keyspace import KEY_BITS, Key256, common_prefix_length, flip_bit
from kadlab.simnet import ProviderRecord, SimNetwork

logger = logging.getLogger(__name__)

DEFAULT_LOOKUP_BUDGET = 64

Lookup = Callable[[Key256], Sequence[Key256]]


@dataclass(frozen=True)
class RegionQueryResult:
    peers: frozenset[Key256]
    lookup_count: int
    min_cpl_used: int
    budget_exhausted: bool = False


class _Counter:
    def __init__(self, lookup: Lookup, budget: int | None):
        self.lookup = lookup
        self.budget = budget
        self.calls = 0
        self.exhausted = False

    def __call__(self, key: Key256) -> list[Key256]:
        if self.budget is not None and self.calls >= self.budget:
            self.exhausted = True
            return []
        self.calls += 1
        return list(self.lookup(key))


def _find_by_cpl(lookup: _Counter, key: Key256, min_cpl: int) -> set[Key256]:
    found = set(lookup(key))
    if not found:
        return found
    cpl = min(common_prefix_length(p, key) for p in found)
    # cpl == 256 only when the sole reachable peer equals key; no sibling to flip
    cpl = min(cpl, KEY_BITS - 1)
    while cpl >= min_cpl:
        qkey = flip_bit(key, cpl)
        found |= _find_by_cpl(lookup, qkey, cpl + 1)
        cpl -= 1
    return {p for p in found if common_prefix_length(p, key) >= min_cpl}


def find_by_cpl(lookup: Lookup, key: Key256, min_cpl: int, budget: int | None = DEFAULT_LOOKUP_BUDGET) -> RegionQueryResult:
    """All peers sharing at least ``min_cpl`` leading bits with ``key``.

    Exact whenever ``lookup`` returns the true closest peers. Recursion depth
    is bounded by the shrinking CPL; ``budget`` caps the number of lookups and
    sets ``budget_exhausted`` on the (partial) result when hit.
    """
    if not 0 <= min_cpl <= KEY_BITS:
        raise ValueError(f"min_cpl must lie in [0, {KEY_BITS}]")
    counter = _Counter(lookup, budget)
    peers = _find_by_cpl(counter, key, min_cpl)
    if counter.exhausted:
        logger.warning("region query for min_cpl=%d hit the lookup budget (%d)", min_cpl, budget)
    return RegionQueryResult(frozenset(peers), counter.calls, min_cpl, counter.exhausted)


def choose_min_cpl(n_hat: float, k: int = 20, margin: int = 0) -> int:
    """Largest prefix length whose region still expects ``k`` peers, minus ``margin``."""
    if n_hat < k:
        raise ValueError("n_hat must be at least k")
    bits = 0
    while k * (1 << (bits + 1)) <= n_hat:
        bits += 1
    return max(bits - margin, 0)


@dataclass(frozen=True)
class RegionProvideOutcome:
    region: RegionQueryResult
    updated: tuple[Key256, ...]
    honest_updated: int


def provide_to_region(net: SimNetwork, provider: Key256, cid: Key256, n_hat: float, margin: int = 0) -> RegionProvideOutcome:
    min_cpl = choose_min_cpl(n_hat, net.k, margin)
    region = find_by_cpl(net.get_closest_peers, cid, min_cpl)
    # sorted so record placement never depends on set iteration order
    updated = net.put_provider_record(provider, cid, sorted(region.peers))
    honest = sum(1 for p in updated if not net.nodes[p].is_sybil)
    return RegionProvideOutcome(region, tuple(updated), honest)


def region_provide(net: SimNetwork, provider: Key256, cid: Key256, n_hat: float, margin: int = 0) -> int:
    """Publish to every peer of the CID's region; returns honest resolvers updated."""
    if provider not in net:
        raise KeyError("provider is not part of the network")

    def reissue(p: Key256, c: Key256) -> int:
        return provide_to_region(net, p, c, n_hat, margin).honest_updated

    outcome = provide_to_region(net, provider, cid, n_hat, margin)
    net.register_reprovide(provider, cid, reissue)
    return outcome.honest_updated


def region_lookup_providers(
    net: SimNetwork, downloader: Key256, cid: Key256, n_hat: float, margin: int = 0
) -> tuple[set[ProviderRecord], RegionQueryResult]:
    if downloader not in net:
        raise KeyError("downloader is not part of the network")
    min_cpl = choose_min_cpl(n_hat, net.k, margin)
    region = find_by_cpl(net.get_closest_peers, cid, min_cpl)
    records = net.query_records(sorted(region.peers - {downloader}), cid)
    records.update(net.nodes[downloader].records_for(cid, net.clock))
    return records, region


def region_find_providers(net: SimNetwork, downloader: Key256, cid: Key256, n_hat: float, margin: int = 0) -> set[ProviderRecord]:
    """Query every region member for ``cid`` and return the union of unexpired records."""
    return region_lookup_providers(net, downloader, cid, n_hat, margin)[0]
