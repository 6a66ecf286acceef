"""Sybil placement against a target CID, and the attacker's cost model.

Identity generation is rejection sampling: hash fresh seeds until ``e`` IDs
land closer to the target than the closest honest peer. One hash stands in
for one keypair generation, so ``attempts`` is the brute-force count s(e).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from kadlab.keyspace import KEY_SPACE, Distance, Key256, derive_ids, from_hex, to_hex
from kadlab.simnet import SimNetwork, SybilCensoring

MAX_ATTEMPTS = 10**9
SYBIL_TAG = b"kadlab/sybil"
DIRECT_TAG = b"kadlab/sybil-direct"


class BoundTooTight(RuntimeError):
    """Raised when Sybil generation exceeds ``MAX_ATTEMPTS`` hash attempts."""


@dataclass
class SybilBatch:
    target: Key256
    ids: list[Key256]
    attempts: int
    distance_bound: Distance
    seed: int = 0
    next_counter: int = 0
    e: int = field(default=-1)

    def __post_init__(self):
        if self.e < 0:
            self.e = len(self.ids)

    def to_json(self) -> str:
        return json.dumps(
            {
                "target": to_hex(self.target),
                "ids": [to_hex(i) for i in self.ids],
                "attempts": self.attempts,
                "distance_bound": format(self.distance_bound, "x"),
                "seed": self.seed,
                "next_counter": self.next_counter,
                "e": self.e,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "SybilBatch":
        raw = json.loads(text)
        return cls(
            target=from_hex(raw["target"]),
            ids=[from_hex(i) for i in raw["ids"]],
            attempts=raw["attempts"],
            distance_bound=int(raw["distance_bound"], 16),
            seed=raw["seed"],
            next_counter=raw["next_counter"],
            e=raw["e"],
        )


@dataclass(frozen=True)
class AttackCostModel:
    """Dollar costs; ``c_oper`` is per hour and ``t_w``/``t_eff`` are hours."""

    c_gen_per_attempt: float
    c_oper: float
    t_w: float
    t_eff: float

    def __post_init__(self):
        for name in ("c_gen_per_attempt", "c_oper", "t_w", "t_eff"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def attack_cost(model: AttackCostModel, attempts: int) -> float:
    return attempts * model.c_gen_per_attempt + (model.t_w + model.t_eff) * model.c_oper


def generate_sybils(
    target: Key256,
    e: int,
    distance_bound: Distance,
    seed: int,
    start_counter: int = 0,
    exclude: frozenset[Key256] | set[Key256] = frozenset(),
) -> SybilBatch:
    """Brute-force ``e`` distinct IDs strictly closer to ``target`` than ``distance_bound``."""
    if e < 1:
        raise ValueError("e must be >= 1")
    if distance_bound <= 0:
        raise ValueError("distance_bound must be positive")
    ids: list[Key256] = []
    kept = set()
    attempts = 0
    counter = start_counter
    for counter, candidate in derive_ids(SYBIL_TAG, seed, start_counter):
        attempts += 1
        if (candidate ^ target) < distance_bound and candidate not in kept and candidate not in exclude:
            kept.add(candidate)
            ids.append(candidate)
            if len(ids) == e:
                break
        if attempts >= MAX_ATTEMPTS:
            raise BoundTooTight(f"no {e} IDs within bound after {attempts} attempts")
    return SybilBatch(target, ids, attempts, distance_bound, seed, counter + 1, e)


def place_sybils(target: Key256, e: int, distance_bound: Distance, seed: int, start_counter: int = 0, exclude=frozenset()) -> SybilBatch:
    """Draw ``e`` IDs uniformly from the ball ``dist < distance_bound`` without brute force.

    Same placement distribution as :func:`generate_sybils` (up to a modulo
    bias below ``distance_bound / 2**256``). ``attempts`` is reported as the
    expected brute-force count, rounded.
    """
    if e < 1:
        raise ValueError("e must be >= 1")
    ids: list[Key256] = []
    kept = set()
    counter = start_counter
    for counter, h in derive_ids(DIRECT_TAG, seed, start_counter):
        candidate = target ^ (h % distance_bound)
        if candidate not in kept and candidate not in exclude:
            kept.add(candidate)
            ids.append(candidate)
            if len(ids) == e:
                break
    expected = round(e * KEY_SPACE / distance_bound)
    return SybilBatch(target, ids, expected, distance_bound, seed, counter + 1, e)


def closest_honest_distance(net: SimNetwork, target: Key256) -> Distance:
    for node_id in net.iter_by_distance(target):
        if not net.nodes[node_id].is_sybil:
            return node_id ^ target
    return KEY_SPACE


def launch_attack(
    net: SimNetwork,
    target: Key256,
    e: int,
    seed: int,
    distance_bound: Distance | None = None,
    brute_force: bool = True,
) -> SybilBatch:
    """Insert ``e`` censoring Sybils closer to ``target`` than any honest node.

    ``brute_force=False`` uses :func:`place_sybils` (fast, same placement).
    The returned batch lists the inserted IDs and feeds :func:`maintain_attack`.
    """
    if distance_bound is None:
        distance_bound = closest_honest_distance(net, target)
    if e == 0:
        return SybilBatch(target, [], 0, distance_bound, seed, 0, 0)
    make = generate_sybils if brute_force else place_sybils
    batch = make(target, e, distance_bound, seed, exclude=net.nodes.keys())
    behavior = SybilCensoring(frozenset({target}))
    for node_id in batch.ids:
        net.add_node(node_id, behavior)
    return batch


def maintain_attack(net: SimNetwork, batch: SybilBatch, brute_force: bool = True) -> int:
    """Restore an all-Sybil ``e``-closest set after honest nodes moved into it.

    Returns how many Sybils were generated and inserted.
    """
    if batch.e == 0:
        return 0
    closest = net.nearest(batch.target, batch.e)
    honest = [p for p in closest if not net.nodes[p].behavior.censors(batch.target)]
    if not honest:
        return 0
    bound = min(p ^ batch.target for p in honest)
    inside = sum(1 for p in closest if p ^ batch.target < bound)
    needed = batch.e - inside
    make = generate_sybils if brute_force else place_sybils
    fresh = make(batch.target, needed, bound, batch.seed, batch.next_counter, exclude=net.nodes.keys())
    behavior = SybilCensoring(frozenset({batch.target}))
    for node_id in fresh.ids:
        net.add_node(node_id, behavior)
    batch.ids.extend(fresh.ids)
    batch.attempts += fresh.attempts
    batch.next_counter = fresh.next_counter
    batch.distance_bound = bound
    return needed
