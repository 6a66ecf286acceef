"""Deterministic in-memory Kademlia DHT.

Lookups are answered by a global k-nearest oracle over a sorted ID array,
optionally perturbed by two knobs: ``p_offline`` (a node fails to answer a
given query) and ``p_miss`` (a node that would have been returned is left
out of a lookup result). Per-node routing tables are not materialised; the
only place a walk is simulated is :meth:`SimNetwork.find_providers`, which
needs the set of nodes *encountered* on the way to the key. There, a node's
bucket toward a key is a deterministic pseudo-random sample of at most ``k``
peers from the matching subtree, computed on demand.

Model constants: ``k = 20``, ``alpha = 3``, ``ROUTING_BUCKETS = 256``.
"""

from __future__ import annotations

import heapq
import io
import json
import logging
import random
from bisect import bisect_left, insort
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator

from kadlab.keyspace import (
    KEY_BITS,
    Key256,
    common_prefix_length,
    derive_ids,
    flip_bit,
    from_hex,
    prefix_range,
    to_hex,
)

logger = logging.getLogger(__name__)

HOUR = 3600
RECORD_TTL = 48 * HOUR
ROUTING_BUCKETS = KEY_BITS
PEER_TAG = b"kadlab/peer"


@dataclass(frozen=True, order=True)
class ProviderRecord:
    cid: Key256
    provider: Key256
    expires_at: float

    def expired(self, now: float) -> bool:
        return self.expires_at < now


@dataclass(frozen=True)
class Honest:
    def censors(self, key: Key256) -> bool:
        return False


@dataclass(frozen=True)
class SybilCensoring:
    """Drops records and answers empty for ``target_cids``; honest otherwise."""

    target_cids: frozenset[Key256]

    def censors(self, key: Key256) -> bool:
        return key in self.target_cids


NodeBehavior = Honest | SybilCensoring
HONEST = Honest()


@dataclass
class Node:
    id: Key256
    behavior: NodeBehavior = HONEST
    online: bool = True
    # cid -> provider -> record
    record_store: dict[Key256, dict[Key256, ProviderRecord]] = field(default_factory=dict)

    @property
    def is_sybil(self) -> bool:
        return isinstance(self.behavior, SybilCensoring)

    def accept(self, record: ProviderRecord) -> bool:
        if self.behavior.censors(record.cid):
            return False
        self.record_store.setdefault(record.cid, {})[record.provider] = record
        return True

    def records_for(self, cid: Key256, now: float) -> list[ProviderRecord]:
        if self.behavior.censors(cid):
            return []
        held = self.record_store.get(cid)
        if not held:
            return []
        for provider in [p for p, r in held.items() if r.expired(now)]:
            del held[provider]
        if not held:
            del self.record_store[cid]
            return []
        return sorted(held.values())

    def purge(self, now: float) -> None:
        for cid in list(self.record_store):
            self.records_for(cid, now)


@dataclass
class SimConfig:
    k: int = 20
    alpha: int = 3
    p_offline: float = 0.0
    p_miss: float = 0.0
    record_ttl: float = RECORD_TTL
    reprovide_interval: float | None = None

    def __post_init__(self):
        if self.k < 1 or self.alpha < 1:
            raise ValueError("k and alpha must be positive")
        for name in ("p_offline", "p_miss"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.record_ttl <= 0:
            raise ValueError("record_ttl must be positive")
        if self.reprovide_interval is not None and self.reprovide_interval <= 0:
            raise ValueError("reprovide_interval must be positive when set")

    @property
    def perfect(self) -> bool:
        return self.p_offline == 0.0 and self.p_miss == 0.0


@dataclass(order=True)
class _Reprovide:
    due: float
    seq: int
    provider: Key256 = field(compare=False)
    cid: Key256 = field(compare=False)
    reissue: Callable[[Key256, Key256], object] = field(compare=False)


class SimNetwork:
    """A whole simulated DHT: nodes, virtual clock and seeded randomness.

    Not thread-safe; every operation mutates the instance (RNG state included).
    """

    def __init__(self, seed: int, config: SimConfig | None = None):
        self.seed = seed
        self.config = config or SimConfig()
        self.clock: float = 0.0
        self.rng = random.Random(f"kadlab/net/{seed}")
        self.nodes: dict[Key256, Node] = {}
        self._ids: list[Key256] = []
        self._reprovides: list[_Reprovide] = []
        self._reprovide_seq = 0
        self.lookup_count = 0
        self.reprovide_count = 0

    @property
    def k(self) -> int:
        return self.config.k

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, node_id: Key256) -> bool:
        return node_id in self.nodes

    @property
    def ids(self) -> list[Key256]:
        """All node IDs in ascending integer order (read-only view by convention)."""
        return self._ids

    def honest_ids(self) -> list[Key256]:
        return [i for i in self._ids if not self.nodes[i].is_sybil]

    def add_node(self, node_id: Key256, behavior: NodeBehavior = HONEST) -> Node:
        if node_id in self.nodes:
            raise ValueError(f"duplicate node id {to_hex(node_id)}")
        node = Node(node_id, behavior)
        self.nodes[node_id] = node
        insort(self._ids, node_id)
        return node

    def remove_node(self, node_id: Key256) -> None:
        del self.nodes[node_id]
        self._ids.pop(bisect_left(self._ids, node_id))

    # -- routing oracle ----------------------------------------------------

    def iter_by_distance(self, key: Key256) -> Iterator[Key256]:
        """All node IDs in ascending XOR distance from ``key`` (lazy).

        Peers with common prefix length exactly ``l`` occupy one contiguous
        slice of the sorted ID array (the sibling subtree at depth ``l``), so
        the walk visits one slice per level, deepest first.
        """
        ids = self._ids
        n = len(ids)
        if not n:
            return
        pos = bisect_left(ids, key)
        deepest = -1
        if pos < n:
            deepest = common_prefix_length(ids[pos], key)
        if pos > 0:
            deepest = max(deepest, common_prefix_length(ids[pos - 1], key))
        if deepest == KEY_BITS:
            yield key
            deepest = KEY_BITS - 1
        for level in range(deepest, -1, -1):
            lo, hi = prefix_range(flip_bit(key, level), level + 1)
            i = bisect_left(ids, lo, 0, n)
            j = bisect_left(ids, hi, i, n)
            if i == j:
                continue
            ring = ids[i:j]
            if len(ring) > 1:
                ring.sort(key=key.__xor__)
            yield from ring

    def nearest(self, key: Key256, count: int, online_only: bool = False) -> list[Key256]:
        """True ``count`` closest nodes, no noise and no RNG draws."""
        out = []
        if count <= 0:
            return out
        for node_id in self.iter_by_distance(key):
            if online_only and not self.nodes[node_id].online:
                continue
            out.append(node_id)
            if len(out) == count:
                break
        return out

    def _answers(self, node: Node) -> bool:
        if not node.online:
            return False
        p = self.config.p_offline
        return p == 0.0 or self.rng.random() >= p

    def get_closest_peers(self, key: Key256) -> list[Key256]:
        """Up to ``k`` reachable peers closest to ``key``, ascending by distance."""
        self.lookup_count += 1
        k = self.config.k
        if self.config.perfect:
            return self.nearest(key, k, online_only=True)
        p_miss = self.config.p_miss
        out = []
        for node_id in self.iter_by_distance(key):
            if not self._answers(self.nodes[node_id]):
                continue
            if p_miss and self.rng.random() < p_miss:
                continue
            out.append(node_id)
            if len(out) == k:
                break
        return out

    def routing_bucket(self, owner: Key256, key: Key256) -> list[Key256]:
        """``owner``'s routing-table bucket covering ``key``, sorted toward ``key``.

        The bucket spans every peer sharing ``cpl(owner, key) + 1`` leading
        bits with ``key``. Small subtrees are returned whole; larger ones are
        sampled with a generator seeded by (network seed, owner, bucket index)
        so that repeated queries see the same table.
        """
        level = common_prefix_length(owner, key)
        if level >= KEY_BITS:
            return []
        lo, hi = prefix_range(key, level + 1)
        ids = self._ids
        i = bisect_left(ids, lo)
        j = bisect_left(ids, hi, i)
        k = self.config.k
        if j - i <= k:
            members = ids[i:j]
        else:
            rnd = random.Random(f"kadlab/bucket/{self.seed}/{owner}/{level}")
            picked = set()
            for _ in range(k):
                idx = bisect_left(ids, rnd.randrange(lo, hi), i, j)
                picked.add(ids[idx if idx < j else i])
            members = list(picked)
        members.sort(key=key.__xor__)
        return members

    def walk(self, origin: Key256, key: Key256) -> list[Key256]:
        """Iterative alpha-parallel lookup from ``origin``; returns the nodes that answered.

        Censoring Sybils answer with an empty peer list for their targets.
        """
        k, alpha = self.config.k, self.config.alpha
        known = set(self.routing_bucket(origin, key))
        known.discard(origin)
        queried: set[Key256] = set()
        answered: list[Key256] = []
        while True:
            frontier = heapq.nsmallest(k, known, key=key.__xor__)
            batch = [p for p in frontier if p not in queried][:alpha]
            if not batch:
                break
            for peer in batch:
                queried.add(peer)
                node = self.nodes.get(peer)
                if node is None or not self._answers(node):
                    continue
                answered.append(peer)
                if node.behavior.censors(key):
                    continue
                known.update(self.routing_bucket(peer, key))
                known.discard(origin)
        return answered

    # -- provider records --------------------------------------------------

    def put_provider_record(self, provider: Key256, cid: Key256, peers: Iterable[Key256]) -> list[Key256]:
        """Send a fresh record to ``peers``; returns the IDs that stored it."""
        record = ProviderRecord(cid, provider, self.clock + self.config.record_ttl)
        return [p for p in peers if self.nodes[p].accept(record)]

    def provide(self, provider: Key256, cid: Key256) -> int:
        """Publish to the k closest peers; returns how many honest resolvers stored it."""
        if provider not in self.nodes:
            raise KeyError(f"unknown provider {to_hex(provider)}")
        stored = self._provide_once(provider, cid)
        self.register_reprovide(provider, cid, self._provide_once)
        return stored

    def _provide_once(self, provider: Key256, cid: Key256) -> int:
        peers = self.get_closest_peers(cid)
        updated = self.put_provider_record(provider, cid, peers)
        return sum(1 for p in updated if not self.nodes[p].is_sybil)

    def register_reprovide(self, provider: Key256, cid: Key256, reissue: Callable[[Key256, Key256], object]) -> None:
        interval = self.config.reprovide_interval
        if interval is None:
            return
        self._reprovide_seq += 1
        heapq.heappush(self._reprovides, _Reprovide(self.clock + interval, self._reprovide_seq, provider, cid, reissue))

    def query_records(self, peers: Iterable[Key256], cid: Key256, already_answered: bool = False) -> set[ProviderRecord]:
        """Ask each peer for its unexpired records for ``cid``."""
        found: set[ProviderRecord] = set()
        for peer in peers:
            node = self.nodes.get(peer)
            if node is None:
                continue
            if not already_answered and not self._answers(node):
                continue
            found.update(node.records_for(cid, self.clock))
        return found

    def find_providers_detailed(self, downloader: Key256, cid: Key256) -> tuple[set[ProviderRecord], list[Key256]]:
        """Records found plus every node that answered during the lookup."""
        if downloader not in self.nodes:
            raise KeyError(f"unknown downloader {to_hex(downloader)}")
        contacted = self.walk(downloader, cid)
        seen = set(contacted)
        for peer in self.get_closest_peers(cid):
            if peer not in seen and peer != downloader:
                seen.add(peer)
                contacted.append(peer)
        records = self.query_records(contacted, cid, already_answered=True)
        records.update(self.nodes[downloader].records_for(cid, self.clock))
        return records, contacted

    def find_providers(self, downloader: Key256, cid: Key256) -> set[ProviderRecord]:
        return self.find_providers_detailed(downloader, cid)[0]

    # -- time ----------------------------------------------------------------

    def advance_clock(self, dt: float) -> None:
        if dt < 0:
            raise ValueError("dt must be non-negative")
        if dt == 0:
            return
        target = self.clock + dt
        interval = self.config.reprovide_interval
        while self._reprovides and self._reprovides[0].due <= target:
            job = heapq.heappop(self._reprovides)
            self.clock = job.due
            self.purge_expired()
            if job.provider in self.nodes:
                job.reissue(job.provider, job.cid)
                self.reprovide_count += 1
                job.due += interval
                heapq.heappush(self._reprovides, job)
        self.clock = target
        self.purge_expired()

    def purge_expired(self) -> None:
        for node in self.nodes.values():
            if node.record_store:
                node.purge(self.clock)

    def stored_records(self) -> Iterator[tuple[Key256, ProviderRecord]]:
        for node_id in self._ids:
            for held in self.nodes[node_id].record_store.values():
                for record in sorted(held.values()):
                    yield node_id, record

    # -- snapshots -----------------------------------------------------------

    def write_snapshot(self, dest: str | Path | io.TextIOBase) -> None:
        """Line-delimited JSON: one ``network`` line, then ``node`` and ``record`` lines."""
        lines = [
            {
                "kind": "network",
                "seed": self.seed,
                "clock": self.clock,
                "k": self.config.k,
                "alpha": self.config.alpha,
                "p_offline": self.config.p_offline,
                "p_miss": self.config.p_miss,
                "record_ttl": self.config.record_ttl,
                "reprovide_interval": self.config.reprovide_interval,
            }
        ]
        for node_id in self._ids:
            node = self.nodes[node_id]
            row = {"kind": "node", "id": to_hex(node_id), "online": node.online, "behavior": "honest"}
            if node.is_sybil:
                row["behavior"] = "sybil"
                row["targets"] = sorted(to_hex(t) for t in node.behavior.target_cids)
            lines.append(row)
        for holder, record in self.stored_records():
            lines.append(
                {
                    "kind": "record",
                    "holder": to_hex(holder),
                    "cid": to_hex(record.cid),
                    "provider": to_hex(record.provider),
                    "expires_at": record.expires_at,
                }
            )
        text = "".join(json.dumps(line, sort_keys=True) + "\n" for line in lines)
        if isinstance(dest, (str, Path)):
            Path(dest).write_text(text, encoding="utf-8")
        else:
            dest.write(text)

    @classmethod
    def read_snapshot(cls, src: str | Path | io.TextIOBase) -> "SimNetwork":
        if isinstance(src, (str, Path)):
            text = Path(src).read_text(encoding="utf-8")
        else:
            text = src.read()
        net = None
        for raw in text.splitlines():
            if not raw.strip():
                continue
            row = json.loads(raw)
            kind = row["kind"]
            if kind == "network":
                config = SimConfig(
                    k=row["k"],
                    alpha=row["alpha"],
                    p_offline=row["p_offline"],
                    p_miss=row["p_miss"],
                    record_ttl=row["record_ttl"],
                    reprovide_interval=row["reprovide_interval"],
                )
                net = cls(row["seed"], config)
                net.clock = row["clock"]
            elif net is None:
                raise ValueError("snapshot must start with a network line")
            elif kind == "node":
                behavior = HONEST
                if row["behavior"] == "sybil":
                    behavior = SybilCensoring(frozenset(from_hex(t) for t in row["targets"]))
                net.add_node(from_hex(row["id"]), behavior).online = row["online"]
            elif kind == "record":
                record = ProviderRecord(from_hex(row["cid"]), from_hex(row["provider"]), row["expires_at"])
                net.nodes[from_hex(row["holder"])].record_store.setdefault(record.cid, {})[record.provider] = record
            else:
                raise ValueError(f"unknown snapshot line kind {kind!r}")
        if net is None:
            raise ValueError("empty snapshot")
        return net


def build_network(n: int, seed: int, config: SimConfig | None = None) -> SimNetwork:
    """``n`` honest nodes with IDs ``derive_id(tag || seed || counter)``."""
    config = config or SimConfig()
    if n < config.k:
        raise ValueError(f"network size {n} is smaller than k={config.k}")
    net = SimNetwork(seed, config)
    ids = set()
    for _, node_id in derive_ids(PEER_TAG, seed):
        ids.add(node_id)
        if len(ids) == n:
            break
    net._ids = sorted(ids)
    net.nodes = {i: Node(i) for i in net._ids}
    return net
