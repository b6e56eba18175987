"""Sharding proxy over one pool: hash+distribution routing, auto-ejection
after consecutive failures, key redistribution over the survivors, periodic
retry probes, and timeout-to-miss conversion for gets.

No replication: every key has exactly one owner at any instant."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..hashing import (HashRing, NoLiveServersError, extract_hashtag,
                       get_hash_function, ketama_build, ketama_select,
                       modula_select, random_select)
from ..simkernel import US_PER_S, derive_rng
from ..topology import ConfigError

DISTRIBUTIONS = ("ketama", "modula", "random")


@dataclass
class ProxyConfig:
    hash_name: str = "fnv1a_64"
    distribution: str = "ketama"
    hashtag: str | None = None          # two-character delimiter pair, e.g. "{}"
    server_failure_limit: int = 2
    server_retry_timeout_ms: int = 30_000
    timeout_ms: int = 400
    connections_per_server: int = 1
    points_per_server: int = 160
    inflight_budget: int = 256
    pipeline_depth: int = 1
    overhead_us: int = 150

    def __post_init__(self):
        if self.distribution not in DISTRIBUTIONS:
            raise ConfigError(f"unknown distribution {self.distribution!r}")
        if self.server_failure_limit < 1:
            raise ConfigError("server_failure_limit must be >= 1")
        if self.timeout_ms <= 0 or self.server_retry_timeout_ms <= 0:
            raise ConfigError("timeouts must be > 0")
        if self.hashtag is not None and len(self.hashtag) != 2:
            raise ConfigError("hashtag must be a two-character string, e.g. '{}'")


@dataclass
class EjectionState:
    consecutive_failures: int = 0
    ejected: bool = False
    next_retry_at: int = 0


class ProxyPoolStrategy:
    """Twemproxy-style middleware. One sub-request per client request; the
    failure handler drives ejection and ring rebuilds."""

    name = "proxy_pool"

    def __init__(self, engine, config: ProxyConfig, seed: int):
        self.engine = engine
        self.config = config
        self.hash = get_hash_function(config.hash_name)
        self.servers = list(engine.topology.node_ids)
        self.ejection = {s: EjectionState() for s in self.servers}
        self.ejections = 0            # total eject events (observability)
        self._rng = derive_rng(seed, "proxy.random")
        self._ring: HashRing | None = None
        self._live: list[str] = list(self.servers)
        self._rebuild()

    # -- routing --------------------------------------------------------------

    def _rebuild(self) -> None:
        self._live = [s for s in self.servers if not self.ejection[s].ejected]
        if self._live and self.config.distribution == "ketama":
            self._ring = ketama_build(self._live, self.config.points_per_server)
        else:
            self._ring = None

    def live_servers(self) -> list[str]:
        return list(self._live)

    def route(self, key: str) -> str:
        """Owner of `key` over the live (non-ejected) server set."""
        if not self._live:
            raise NoLiveServersError("all servers ejected")
        if self.config.hashtag:
            key = extract_hashtag(key, self.config.hashtag[0], self.config.hashtag[1])
        if self.config.distribution == "random":
            return self._live[random_select(self._rng, len(self._live))]
        h = self.hash(key)
        if self.config.distribution == "modula":
            return self._live[modula_select(h, len(self._live))]
        return ketama_select(self._ring, h)

    # -- engine callbacks -----------------------------------------------------

    def warm_store(self, key: str, size: int, digest: int) -> None:
        node = self.engine.nodes[self.route(key)]
        if node.state.up:
            node.state.store.set(key, size, digest)

    def instance_for(self, req):
        return self.engine.instances[req.client % len(self.engine.instances)]

    def on_request(self, req) -> None:
        inst = self.instance_for(req)
        try:
            server = self.route(req.key)
        except NoLiveServersError:
            self.engine.resolve(req, "error_conn", inst)
            return
        sub = self.engine.make_sub(req, req.op, req.key, req.size, req.digest,
                                   inst, server, self.config.timeout_ms * 1000)
        self.engine.dispatch(sub)

    def on_sub_result(self, sub, outcome, digest) -> None:
        if sub.op == "probe":
            self._on_probe_result(sub, outcome)
            return
        if outcome in ("hit", "miss", "ok"):
            self._note_success(sub.node_id)
        else:
            self._note_failure(sub.node_id)
        if sub.req is not None and not sub.req.resolved:
            self.engine.resolve(sub.req, self._finalize(sub.op, outcome), sub.instance)

    @staticmethod
    def _finalize(op: str, outcome: str) -> str:
        """Client-visible result mapping; the signature call is get timeouts
        surfacing as plain cache misses."""
        if outcome == "hit" or outcome == "ok":
            return "done"
        if op == "get":
            if outcome in ("miss", "timeout"):
                return "miss"
            return "error_conn"            # refused before ejection
        if outcome == "timeout":
            return "error_timeout"
        return "error_conn"

    # -- ejection -------------------------------------------------------------

    def _note_success(self, server: str) -> None:
        self.ejection[server].consecutive_failures = 0

    def _note_failure(self, server: str) -> None:
        st = self.ejection[server]
        if st.ejected:
            return
        st.consecutive_failures += 1
        if st.consecutive_failures >= self.config.server_failure_limit:
            self._eject(server)

    def _eject(self, server: str) -> None:
        st = self.ejection[server]
        st.ejected = True
        st.consecutive_failures = 0
        self.ejections += 1
        self.engine.ejection_events += 1
        self._rebuild()
        retry_us = self.config.server_retry_timeout_ms * 1000
        st.next_retry_at = self.engine.kernel.now + retry_us
        self.engine.kernel.schedule(st.next_retry_at, self._probe, server)
        # Requests already queued toward the ejected server cannot be re-sent;
        # they surface as timeouts (gets become misses).
        for inst in self.engine.instances:
            for sub in self.engine.flush_queued(inst, server):
                if sub.req is not None and not sub.req.resolved:
                    self.engine.resolve(sub.req, self._finalize(sub.op, "timeout"),
                                        sub.instance)

    def _probe(self, server: str) -> None:
        st = self.ejection[server]
        if not st.ejected:
            return
        inst = self.engine.instances[0]
        sub = self.engine.make_sub(None, "probe", "__health__", 0, 0, inst, server,
                                   self.config.timeout_ms * 1000)
        self.engine.send_probe(sub)

    def _on_probe_result(self, sub, outcome) -> None:
        st = self.ejection[sub.node_id]
        if not st.ejected:
            return
        if outcome in ("hit", "miss", "ok"):
            st.ejected = False
            st.consecutive_failures = 0
            self._rebuild()
        else:
            st.next_retry_at = (self.engine.kernel.now
                                + self.config.server_retry_timeout_ms * 1000)
            self.engine.kernel.schedule(st.next_retry_at, self._probe, sub.node_id)

    def on_node_crash(self, node_id: str) -> None:
        pass

    def on_node_restart(self, node_id: str) -> None:
        pass

    # -- introspection ----------------------------------------------------------

    def route_report(self, op: str, key: str) -> dict:
        return {
            "strategy": self.name,
            "op": op,
            "key": key,
            "destinations": [self.route(key)] if self._live else [],
            "ejected": sorted(s for s, st in self.ejection.items() if st.ejected),
        }

    def snapshot(self) -> dict:
        return {
            "strategy": self.name,
            "config": {
                "hash_name": self.config.hash_name,
                "distribution": self.config.distribution,
                "hashtag": self.config.hashtag,
                "points_per_server": self.config.points_per_server,
            },
            "servers": list(self.servers),
            "ejected": sorted(s for s, st in self.ejection.items() if st.ejected),
        }
