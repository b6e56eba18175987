"""Model of one Memcached-like server: a byte-budget LRU store plus the
runtime knobs (up/down, CPU share, link slowdown) the fault injector drives.

Values are modeled as (size, digest) pairs only; the digest stands in for the
payload so replica divergence and read-my-write checks stay cheap.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field


def ceil_us(x: float) -> int:
    """Round a duration up to whole microseconds, tolerating float dust."""
    return max(0, math.ceil(x - 1e-9))


class OversizeError(ValueError):
    """Entry larger than the whole store budget."""


class NodeDownError(ConnectionRefusedError):
    """Request addressed to a crashed node."""


class CacheStore:
    """LRU key-value store bounded by a byte budget."""

    def __init__(self, budget: int):
        if budget <= 0:
            raise ValueError("budget must be positive")
        self.budget = budget
        self.used = 0
        self._entries: OrderedDict[str, tuple[int, int]] = OrderedDict()

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def set(self, key: str, size: int, digest: int) -> list[str]:
        """Insert or replace `key`, evicting LRU-oldest entries until the
        budget holds. Returns the evicted keys, oldest first."""
        if size > self.budget:
            raise OversizeError(f"entry of {size} bytes exceeds budget {self.budget}")
        if size < 0:
            raise ValueError("size must be non-negative")
        old = self._entries.pop(key, None)
        if old is not None:
            self.used -= old[0]
        evicted = []
        while self.used + size > self.budget:
            victim, (vsize, _) = self._entries.popitem(last=False)
            self.used -= vsize
            evicted.append(victim)
        self._entries[key] = (size, digest)
        self.used += size
        return evicted

    def get(self, key: str) -> tuple[int, int] | None:
        """Return (size, digest) and refresh recency, or None on miss."""
        entry = self._entries.get(key)
        if entry is None:
            return None
        self._entries.move_to_end(key)
        return entry

    def clear(self) -> None:
        self._entries.clear()
        self.used = 0


@dataclass
class NodeState:
    """One cache node: store plus the mutable runtime state faults act on."""

    node_id: str
    budget: int
    base_service_time_us: int
    link_id: str
    up: bool = True
    cpu_share: float = 1.0
    store: CacheStore = field(init=False)

    def __post_init__(self):
        if self.base_service_time_us <= 0:
            raise ValueError("base_service_time_us must be positive")
        self.store = CacheStore(self.budget)

    def cpu_time_us(self) -> int:
        """Per-request CPU cost under the current contention level."""
        if not self.up:
            raise NodeDownError(self.node_id)
        return ceil_us(self.base_service_time_us / self.cpu_share)

    def crash(self) -> None:
        self.up = False

    def restart(self) -> None:
        """Bring the node back up. A restart of a down node loses the store
        (volatile memory); restarting an up node is an idempotent no-op."""
        if self.up:
            return
        self.store.clear()
        self.up = True


def transfer_time_us(payload_bits: int, bandwidth_bps: float, link_factor: float = 1.0) -> int:
    """Time to move `payload_bits` over a link running at bandwidth/link_factor,
    rounded up to whole microseconds."""
    if payload_bits <= 0:
        return 0
    return ceil_us(payload_bits * link_factor * 1_000_000 / bandwidth_bps)


def service_time_us(node: NodeState, payload_bits: int, bandwidth_bps: float,
                    link_factor: float = 1.0) -> int:
    """Isolated (no queueing) service duration: CPU component under the current
    cpu_share plus the payload transfer component."""
    return node.cpu_time_us() + transfer_time_us(payload_bits, bandwidth_bps, link_factor)
