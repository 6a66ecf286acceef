"""256-bit key arithmetic shared by peer IDs and CIDs.

Keys are plain Python ints in ``[0, 2**256)``. Bit 0 is the most significant
bit, so ``key[:l]`` in prefix notation means the top ``l`` bits.

All identifiers are derived with SHA-256.
"""

from __future__ import annotations

import hashlib
from typing import Iterable

KEY_BITS = 256
KEY_SPACE = 1 << KEY_BITS
KEY_MASK = KEY_SPACE - 1
HASH_NAME = "sha256"

Key256 = int
Distance = int


def xor_distance(a: Key256, b: Key256) -> Distance:
    return a ^ b


def common_prefix_length(a: Key256, b: Key256) -> int:
    """Number of leading bits on which ``a`` and ``b`` agree (256 iff equal)."""
    return KEY_BITS - (a ^ b).bit_length()


def derive_id(seed: bytes) -> Key256:
    """Hash ``seed`` to a key. Stands in for hashing a public key."""
    if not seed:
        raise ValueError("seed must be non-empty")
    return int.from_bytes(hashlib.sha256(seed).digest(), "big")


def counter_seed(tag: bytes, seed: int, counter: int) -> bytes:
    """``tag || seed || counter`` with fixed 8-byte big-endian integer fields."""
    return tag + (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "big") + counter.to_bytes(8, "big")


def derive_ids(tag: bytes, seed: int, start: int = 0) -> Iterable[tuple[int, Key256]]:
    """Endless stream of ``(counter, derive_id(tag||seed||counter))``.

    Reuses the hashed prefix so each step costs one hash finalisation.
    """
    base = hashlib.sha256(tag + (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "big"))
    counter = start
    while True:
        h = base.copy()
        h.update(counter.to_bytes(8, "big"))
        yield counter, int.from_bytes(h.digest(), "big")
        counter += 1


def to_hex(key: Key256) -> str:
    return format(key, "064x")


def from_hex(text: str) -> Key256:
    if len(text) != 64:
        raise ValueError(f"expected 64 hex characters, got {len(text)}")
    return int(text, 16)


def bit(key: Key256, index: int) -> int:
    """Bit ``index`` of ``key`` counting from the most significant bit."""
    return (key >> (KEY_BITS - 1 - index)) & 1


def flip_bit(key: Key256, index: int) -> Key256:
    return key ^ (1 << (KEY_BITS - 1 - index))


def prefix_range(key: Key256, length: int) -> tuple[int, int]:
    """Half-open integer interval of all keys sharing the top ``length`` bits of ``key``."""
    span = 1 << (KEY_BITS - length)
    lo = (key >> (KEY_BITS - length)) << (KEY_BITS - length) if length else 0
    return lo, lo + span
