"""Open-loop workload generator: a fixed-rate get/set request stream with
configurable key popularity and value sizes, plus the sets-only warm-up that
populates every key before the measured run starts.

Arrival times are drawn up front from the target rate alone, so offered load
never adapts to system latency; overload shows up as queueing, not as a
quieter client."""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .hashing import MASK64, hash_fnv1_64
from .simkernel import US_PER_S
from .topology import ConfigError

_STD_NORMAL = NormalDist()


@dataclass(slots=True)
class Request:
    at_us: int
    client: int
    op: str          # "get" | "set"
    key: str
    size: int        # value bytes; meaningful for sets and for hit responses


@dataclass
class WorkloadConfig:
    get_fraction: float = 0.8
    key_count: int = 100_000
    zipf_s: float = 0.99            # 0 = uniform popularity
    value_size: int | None = None   # fixed size; None = lognormal
    value_median: int = 1024
    value_sigma: float = 1.0
    value_cap: int = 64 * 1024
    target_rate: float = 1000.0     # requests per second
    clients: int = 8
    duration_s: int = 600
    dataset_file: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.get_fraction <= 1.0:
            raise ConfigError("get_fraction must be within [0, 1]")
        if self.target_rate <= 0:
            raise ConfigError("target_rate must be > 0")
        if self.key_count < 1:
            raise ConfigError("key_count must be >= 1")
        if self.clients < 1:
            raise ConfigError("clients must be >= 1")


def load_dataset(path: str) -> tuple[list[str], list[int]]:
    """Read a `key<TAB>size_bytes` rows file; row order defines popularity rank."""
    keys, sizes = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                key, size = line.split("\t")
                keys.append(key)
                sizes.append(int(size))
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: expected 'key<TAB>size_bytes'")
    if not keys:
        raise ConfigError(f"{path}: dataset file is empty")
    return keys, sizes


class Workload:
    """Materialized keyspace plus the deterministic request stream."""

    def __init__(self, config: WorkloadConfig, seed: int):
        self.config = config
        self.seed = seed
        if config.dataset_file:
            self.keys, self._sizes = load_dataset(config.dataset_file)
        else:
            self.keys = [f"k{i:07d}" for i in range(config.key_count)]
            self._sizes = [self._derived_size(k) for k in self.keys]
        n = len(self.keys)
        if config.zipf_s > 0:
            weights = 1.0 / np.arange(1, n + 1, dtype=np.float64) ** config.zipf_s
        else:
            weights = np.ones(n)
        self._cdf = np.cumsum(weights / weights.sum())

    def _derived_size(self, key: str) -> int:
        """Per-key value size: stable across the run, lognormal unless fixed."""
        cfg = self.config
        if cfg.value_size is not None:
            return cfg.value_size
        u = (hash_fnv1_64(f"sz:{key}") + 0.5) / (MASK64 + 1)
        z = _STD_NORMAL.inv_cdf(u)
        size = int(round(math.exp(math.log(cfg.value_median) + cfg.value_sigma * z)))
        return max(1, min(size, cfg.value_cap))

    def size_of(self, key: str) -> int:
        return self._sizes[self._key_index[key]]

    @property
    def _key_index(self) -> dict[str, int]:
        idx = getattr(self, "_key_index_cache", None)
        if idx is None:
            idx = {k: i for i, k in enumerate(self.keys)}
            self._key_index_cache = idx
        return idx

    def zipf_top_mass(self, top_fraction: float) -> float:
        """Probability mass of the most popular `top_fraction` of keys,
        computed directly from the weight table (oracle for sampling checks)."""
        top = max(1, int(len(self.keys) * top_fraction))
        return float(self._cdf[top - 1])

    def warmup_keys(self) -> list[tuple[str, int]]:
        """Every key with its size, in deterministic order, for the sets-only
        warm-up pass that runs before t=0 of the measured window."""
        return list(zip(self.keys, self._sizes))

    def _np_rng(self, label: str) -> np.random.Generator:
        return np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([self.seed, hash_fnv1_64(label)])))

    def generate(self) -> list[Request]:
        """The full measured-run arrival schedule: exponential inter-arrivals
        at the target rate, op mix by get_fraction, keys by popularity, and
        clients assigned round-robin."""
        cfg = self.config
        horizon = cfg.duration_s * US_PER_S
        mean_gap = US_PER_S / cfg.target_rate

        rng_arrival = self._np_rng("workload.arrivals")
        arrivals = np.empty(0, dtype=np.int64)
        t_last = 0.0
        while t_last < horizon:
            chunk = int(cfg.target_rate * cfg.duration_s * 0.25) + 1024
            gaps = rng_arrival.exponential(mean_gap, size=chunk)
            times = t_last + np.cumsum(gaps)
            arrivals = np.concatenate([arrivals, times.astype(np.int64)])
            t_last = float(times[-1])
        arrivals = arrivals[arrivals < horizon]
        n = len(arrivals)

        is_get = self._np_rng("workload.ops").random(n) < cfg.get_fraction
        kidx = np.searchsorted(self._cdf, self._np_rng("workload.keys").random(n),
                               side="right")
        np.clip(kidx, 0, len(self.keys) - 1, out=kidx)

        keys = self.keys
        sizes = self._sizes
        clients = cfg.clients
        return [
            Request(int(arrivals[i]), i % clients,
                    "get" if is_get[i] else "set", keys[kidx[i]], sizes[kidx[i]])
            for i in range(n)
        ]
