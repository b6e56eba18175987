"""Key-to-shard primitives: hash functions, hashtag extraction, the three
request distributions (ketama, modula, random), and token-range ownership.

All functions are pure; rings and token maps are immutable after build, so
everything here is safe to share across simulated components.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Sequence

MASK32 = 0xFFFFFFFF
MASK64 = 0xFFFFFFFFFFFFFFFF

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3


class NoLiveServersError(RuntimeError):
    """Raised when a distribution is asked to select from zero live servers."""


class UnknownRackError(KeyError):
    """Raised when a token lookup names a rack absent from the map."""


def _as_bytes(key: str | bytes) -> bytes:
    return key if isinstance(key, bytes) else key.encode("utf-8")


def hash_fnv1_64(key: str | bytes) -> int:
    """64-bit FNV-1a digest (xor-then-multiply variant) of the key bytes."""
    h = FNV64_OFFSET
    for b in _as_bytes(key):
        h = ((h ^ b) * FNV64_PRIME) & MASK64
    return h


def hash_one_at_a_time(key: str | bytes) -> int:
    """Jenkins one-at-a-time 32-bit digest, zero-extended to 64 bits."""
    h = 0
    for b in _as_bytes(key):
        h = (h + b) & MASK32
        h = (h + (h << 10)) & MASK32
        h ^= h >> 6
    h = (h + (h << 3)) & MASK32
    h ^= h >> 11
    h = (h + (h << 15)) & MASK32
    return h


def _crc_table(poly: int, width_mask: int) -> list[int]:
    table = []
    for n in range(256):
        c = n
        for _ in range(8):
            c = (c >> 1) ^ poly if c & 1 else c >> 1
        table.append(c & width_mask)
    return table


_CRC32_TABLE = _crc_table(0xEDB88320, MASK32)
_CRC16_TABLE = _crc_table(0xA001, 0xFFFF)  # CRC-16/ARC, reflected 0x8005


def hash_crc32(key: str | bytes) -> int:
    """Standard reflected CRC-32 (zlib-compatible), zero-extended."""
    c = MASK32
    for b in _as_bytes(key):
        c = _CRC32_TABLE[(c ^ b) & 0xFF] ^ (c >> 8)
    return c ^ MASK32


def hash_crc16(key: str | bytes) -> int:
    """CRC-16/ARC digest, zero-extended."""
    c = 0
    for b in _as_bytes(key):
        c = _CRC16_TABLE[(c ^ b) & 0xFF] ^ (c >> 8)
    return c


HASH_FUNCTIONS = {
    "fnv1_64": hash_fnv1_64,
    "fnv1a_64": hash_fnv1_64,
    "one_at_a_time": hash_one_at_a_time,
    "crc32": hash_crc32,
    "crc16": hash_crc16,
}


def get_hash_function(name: str):
    try:
        return HASH_FUNCTIONS[name]
    except KeyError:
        raise ValueError(f"unknown hash function {name!r}; expected one of "
                         f"{sorted(set(HASH_FUNCTIONS))}") from None


def extract_hashtag(key: str, open_tag: str, close_tag: str) -> str:
    """Return the substring strictly between the first `open_tag` and the next
    `close_tag`. Falls back to the whole key when the delimiters are missing,
    out of order, or enclose nothing, so related keys can co-locate without
    malformed keys ever failing to route.
    """
    if not open_tag or not close_tag:
        raise ValueError("hashtag delimiters must be non-empty")
    start = key.find(open_tag)
    if start < 0:
        return key
    start += len(open_tag)
    end = key.find(close_tag, start)
    if end < 0 or end == start:
        return key
    return key[start:end]


def modula_select(key_hash: int, n_live: int) -> int:
    if n_live <= 0:
        raise NoLiveServersError("modula distribution over zero live servers")
    return key_hash % n_live


def random_select(rng, n_live: int) -> int:
    if n_live <= 0:
        raise NoLiveServersError("random distribution over zero live servers")
    return rng.randrange(n_live)


@dataclass(frozen=True)
class HashRing:
    """Ketama continuum: sorted point hashes and the server owning each point."""

    point_hashes: tuple[int, ...]
    point_owners: tuple[str, ...]
    points_per_server: int


def ketama_build(servers: Sequence[str], points_per_server: int = 160) -> HashRing:
    """Build a ketama ring with `points_per_server` points per live server.

    Point hashes derive from the server id only, so removing one server leaves
    every other server's arcs in place (minimal remap churn).
    """
    if not servers:
        raise NoLiveServersError("ketama ring over zero live servers")
    if points_per_server < 1:
        raise ValueError("points_per_server must be >= 1")
    points = []
    for server in servers:
        for i in range(points_per_server):
            points.append((hash_fnv1_64(f"{server}-{i}"), server))
    points.sort()
    return HashRing(
        point_hashes=tuple(p for p, _ in points),
        point_owners=tuple(s for _, s in points),
        points_per_server=points_per_server,
    )


def ketama_select(ring: HashRing, key_hash: int) -> str:
    """Owner of the first ring point with point-hash >= key_hash, wrapping."""
    if not ring.point_hashes:
        raise NoLiveServersError("empty ketama ring")
    idx = bisect.bisect_left(ring.point_hashes, key_hash)
    if idx == len(ring.point_hashes):
        idx = 0
    return ring.point_owners[idx]


@dataclass(frozen=True)
class TokenMap:
    """Per-rack token continuum: each node owns the sub-range ending at its
    token, inclusive, with wraparound past the largest token."""

    racks: dict[str, tuple[tuple[int, str], ...]]

    def __post_init__(self):
        for rack, entries in self.racks.items():
            if not entries:
                raise ValueError(f"rack {rack!r} has no token entries")
            tokens = [t for t, _ in entries]
            if tokens != sorted(tokens) or len(set(tokens)) != len(tokens):
                raise ValueError(f"rack {rack!r} tokens must be strictly increasing")

    def nodes_of(self, rack: str) -> list[str]:
        return [n for _, n in self.racks[rack]]


def evenly_spaced_tokens(node_ids: Sequence[str]) -> tuple[tuple[int, str], ...]:
    """Default token assignment: nodes at equal spacing over the 64-bit range."""
    m = len(node_ids)
    step = (MASK64 + 1) // m
    return tuple(((i + 1) * step - 1 if i < m - 1 else MASK64, node)
                 for i, node in enumerate(node_ids))


def token_owner(token_map: TokenMap, rack: str, token: int) -> str:
    """Node whose token is the smallest token >= `token` in the rack, wrapping
    past the largest token to the rack's first node."""
    entries = token_map.racks.get(rack)
    if entries is None:
        raise UnknownRackError(f"unknown rack {rack!r}")
    tokens = [t for t, _ in entries]
    idx = bisect.bisect_left(tokens, token & MASK64)
    if idx == len(entries):
        idx = 0
    return entries[idx][1]
