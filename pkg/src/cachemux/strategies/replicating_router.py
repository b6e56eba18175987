"""Replicating router: writes fan out to every pool and acknowledge on
majority; reads go to one replica per client and fail over on miss or error.
Destination health is tracked per middleware instance with soft/hard TKO,
capped soft-TKO occupancy, and exponentially backed-off probes with jitter.
Get errors convert to misses by default."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..hashing import get_hash_function, hash_fnv1_64
from ..simkernel import derive_rng
from ..topology import ConfigError

ACTIVE = "active"
SOFT_TKO = "soft_tko"
HARD_TKO = "hard_tko"


@dataclass
class RouterConfig:
    hash_name: str = "crc32"
    failures_until_tko: int = 3
    maximum_soft_tko: int = 1
    soft_tko_scope: str = "slice"        # "slice" (replica set of one shard) or "global"
    probe_interval_initial_ms: int = 100
    probe_interval_max_ms: int = 3000
    jitter_fraction: float = 0.5
    timeout_ms: int = 100
    convert_get_errors_to_miss: bool = True
    prefix_routes: list = field(default_factory=list)   # [(prefix, [pool names])]
    connections_per_server: int = 1
    inflight_budget: int = 256
    pipeline_depth: int = 1
    overhead_us: int = 500

    def __post_init__(self):
        if self.failures_until_tko < 1:
            raise ConfigError("failures_until_tko must be >= 1")
        if self.probe_interval_initial_ms > self.probe_interval_max_ms:
            raise ConfigError("probe_interval_initial must be <= probe_interval_max")
        if not 0.0 <= self.jitter_fraction <= 0.5:
            raise ConfigError("jitter_fraction must be within [0, 0.5]")
        if self.soft_tko_scope not in ("slice", "global"):
            raise ConfigError("soft_tko_scope must be 'slice' or 'global'")
        if self.timeout_ms <= 0:
            raise ConfigError("request timeout must be > 0")


@dataclass
class DestinationHealth:
    consecutive_soft_errors: int = 0
    status: str = ACTIVE
    probe_attempt: int = 0
    next_probe_at: int = 0
    transitions: int = 0     # active<->soft_tko flips, for flapping analysis


class PrefixRouteTable:
    """Longest-prefix match from key prefixes to pool subsets."""

    def __init__(self, rules: list, default_pools: list[str]):
        for prefix, _ in rules:
            if not prefix:
                raise ConfigError("prefix rules must have non-empty prefixes")
        self.rules = sorted(rules, key=lambda r: -len(r[0]))
        self.default_pools = list(default_pools)

    def pools_for(self, key: str) -> list[str]:
        for prefix, pools in self.rules:
            if key.startswith(prefix):
                return list(pools)
        return list(self.default_pools)


class ReplicatingRouterStrategy:
    """Mcrouter-style middleware over symmetric pools. Destinations align by
    slot index across pools, so pool_a[i], pool_b[i], pool_c[i] replicate the
    same key slice."""

    name = "replicating_router"

    def __init__(self, engine, config: RouterConfig, seed: int):
        self.engine = engine
        self.config = config
        self.hash = get_hash_function(config.hash_name)
        topo = engine.topology
        self.pools = dict(topo.groups)            # pool name -> node ids
        self.pool_names = list(self.pools)
        sizes = {len(v) for v in self.pools.values()}
        if len(sizes) != 1:
            raise ConfigError("replicating router requires equal-size pools")
        self.pool_size = sizes.pop()
        self.prefix_table = PrefixRouteTable(config.prefix_routes, self.pool_names)
        # Health is per middleware instance: every router discovers failures
        # on its own, which is why probe jitter exists at all.
        self.health: list[dict[str, DestinationHealth]] = [
            {n: DestinationHealth() for pool in self.pools.values() for n in pool}
            for _ in engine.instances
        ]
        self._probe_rngs = [derive_rng(seed, f"router.jitter.{i}")
                            for i in range(len(engine.instances))]
        self._slot_of = {n: i for pool in self.pools.values()
                         for i, n in enumerate(pool)}
        self._pool_of = {n: p for p, pool in self.pools.items() for n in pool}

    # -- routing --------------------------------------------------------------

    def slot(self, key: str) -> int:
        return self.hash(key) % self.pool_size

    def destination(self, pool: str, key: str) -> str:
        return self.pools[pool][self.slot(key)]

    def replica_order(self, client: int, key: str) -> list[str]:
        """Pools in failover order: a stable per-client primary, then the
        rest cyclically."""
        pools = self.prefix_table.pools_for(key)
        primary = hash_fnv1_64(f"client:{client}") % len(pools)
        return pools[primary:] + pools[:primary]

    # -- health ---------------------------------------------------------------

    def _soft_count(self, inst_idx: int, dest: str) -> int:
        table = self.health[inst_idx]
        if self.config.soft_tko_scope == "global":
            return sum(1 for h in table.values() if h.status == SOFT_TKO)
        slot = self._slot_of[dest]
        return sum(1 for n, h in table.items()
                   if self._slot_of[n] == slot and h.status == SOFT_TKO)

    def health_update(self, inst_idx: int, dest: str, outcome: str) -> None:
        h = self.health[inst_idx][dest]
        if outcome in ("hit", "miss", "ok"):
            h.consecutive_soft_errors = 0
            if h.status != ACTIVE:
                if h.status == SOFT_TKO:
                    h.transitions += 1
                h.status = ACTIVE
                h.probe_attempt = 0
            return
        if outcome == "refused":
            if h.status != HARD_TKO:
                h.status = HARD_TKO
                self._schedule_probe(inst_idx, dest)
            return
        # soft error (timeout)
        h.consecutive_soft_errors += 1
        if (h.status == ACTIVE
                and h.consecutive_soft_errors >= self.config.failures_until_tko
                and self._soft_count(inst_idx, dest) < self.config.maximum_soft_tko):
            h.status = SOFT_TKO
            h.transitions += 1
            self._schedule_probe(inst_idx, dest)
            self._flush_dest(inst_idx, dest)

    def is_tko(self, inst_idx: int, dest: str) -> bool:
        return self.health[inst_idx][dest].status != ACTIVE

    def _schedule_probe(self, inst_idx: int, dest: str) -> None:
        h = self.health[inst_idx][dest]
        cfg = self.config
        base = min(cfg.probe_interval_initial_ms * (2 ** h.probe_attempt),
                   cfg.probe_interval_max_ms)
        jitter = 1.0 + self._probe_rngs[inst_idx].random() * cfg.jitter_fraction
        interval_us = int(base * jitter * 1000)
        h.next_probe_at = self.engine.kernel.now + interval_us
        self.engine.kernel.schedule(h.next_probe_at, self._probe, inst_idx, dest)

    def _probe(self, inst_idx: int, dest: str) -> None:
        h = self.health[inst_idx][dest]
        if h.status == ACTIVE:
            return
        inst = self.engine.instances[inst_idx]
        sub = self.engine.make_sub(None, "probe", "__health__", 0, 0, inst, dest,
                                   self.config.timeout_ms * 1000, tag=inst_idx)
        self.engine.send_probe(sub)

    def _on_probe_result(self, sub, outcome) -> None:
        inst_idx = sub.tag
        h = self.health[inst_idx][sub.node_id]
        if h.status == ACTIVE:
            return
        if outcome in ("hit", "miss", "ok"):
            if h.status == SOFT_TKO:
                h.transitions += 1
            h.status = ACTIVE
            h.probe_attempt = 0
            h.consecutive_soft_errors = 0
        else:
            h.probe_attempt += 1
            self._schedule_probe(inst_idx, sub.node_id)

    def _flush_dest(self, inst_idx: int, dest: str) -> None:
        """A destination just went TKO: re-route its queued gets, fail its
        queued sets (their ack can no longer arrive)."""
        inst = self.engine.instances[inst_idx]
        for sub in self.engine.flush_queued(inst, dest):
            if sub.op == "get":
                self._continue_get(sub.req, sub.tag)
            elif sub.op == "set" and not sub.is_async:
                self._set_sub_failed(sub.req)

    # -- request handling -------------------------------------------------------

    def warm_store(self, key: str, size: int, digest: int) -> None:
        for pool in self.prefix_table.pools_for(key):
            node = self.engine.nodes[self.destination(pool, key)]
            if node.state.up:
                node.state.store.set(key, size, digest)

    def instance_for(self, req):
        return self.engine.instances[req.client % len(self.engine.instances)]

    def on_request(self, req) -> None:
        inst_idx = req.client % len(self.engine.instances)
        if req.op == "get":
            order = self.replica_order(req.client, req.key)
            req.ctx = {"kind": "get", "order": order, "pos": -1, "inst": inst_idx}
            self._continue_get(req, req.ctx)
        else:
            self._start_set(req, inst_idx)

    def _continue_get(self, req, ctx) -> None:
        """Try the next non-TKO replica; exhaustion converts to miss unless
        configured to surface errors."""
        if req.resolved:
            return
        inst_idx = ctx["inst"]
        inst = self.engine.instances[inst_idx]
        saw_miss = ctx.get("saw_miss", False)
        while True:
            ctx["pos"] += 1
            if ctx["pos"] >= len(ctx["order"]):
                if saw_miss:
                    self.engine.resolve(req, "miss", inst)
                elif self.config.convert_get_errors_to_miss:
                    self.engine.resolve(req, "miss", inst)
                else:
                    self.engine.resolve(req, "error_timeout", inst)
                return
            pool = ctx["order"][ctx["pos"]]
            dest = self.destination(pool, req.key)
            if not self.is_tko(inst_idx, dest):
                break
        sub = self.engine.make_sub(req, "get", req.key, req.size, 0, inst, dest,
                                   self.config.timeout_ms * 1000, tag=ctx)
        self.engine.dispatch(sub)

    def _start_set(self, req, inst_idx: int) -> None:
        inst = self.engine.instances[inst_idx]
        pools = self.prefix_table.pools_for(req.key)
        required = len(pools) // 2 + 1
        ctx = {"kind": "set", "acks": 0, "failed": 0, "required": required,
               "total": len(pools), "inst": inst_idx}
        req.ctx = ctx
        sent = 0
        for pool in pools:
            dest = self.destination(pool, req.key)
            if self.is_tko(inst_idx, dest):
                ctx["failed"] += 1
                continue
            sub = self.engine.make_sub(req, "set", req.key, req.size, req.digest,
                                       inst, dest, self.config.timeout_ms * 1000,
                                       tag=ctx)
            self.engine.dispatch(sub)
            sent += 1
        self._check_set(req)

    def _set_sub_failed(self, req) -> None:
        if req is None or req.resolved:
            return
        req.ctx["failed"] += 1
        self._check_set(req)

    def _check_set(self, req) -> None:
        ctx = req.ctx
        inst = self.engine.instances[ctx["inst"]]
        if ctx["acks"] >= ctx["required"]:
            self.engine.resolve(req, "done", inst)
        elif ctx["total"] - ctx["failed"] < ctx["required"]:
            # Majority can no longer be reached; surfaced as a timeout-class
            # error, which is how stalled replicated writes appear to clients.
            self.engine.resolve(req, "error_timeout", inst)

    def on_sub_result(self, sub, outcome, digest) -> None:
        if sub.op == "probe":
            self._on_probe_result(sub, outcome)
            return
        inst_idx = sub.tag["inst"] if isinstance(sub.tag, dict) else sub.tag
        self.health_update(inst_idx, sub.node_id, outcome)
        if sub.op == "get":
            ctx = sub.tag
            if sub.req is None or sub.req.resolved:
                return
            if outcome == "hit":
                self.engine.resolve(sub.req, "done",
                                    self.engine.instances[inst_idx])
            else:
                if outcome == "miss":
                    ctx["saw_miss"] = True
                self._continue_get(sub.req, ctx)
        else:
            ctx = sub.tag
            if outcome == "ok":
                ctx["acks"] += 1
            else:
                ctx["failed"] += 1
            if sub.req is not None and not sub.req.resolved:
                self._check_set(sub.req)

    def on_node_crash(self, node_id: str) -> None:
        pass

    def on_node_restart(self, node_id: str) -> None:
        pass

    # -- introspection ----------------------------------------------------------

    def route_report(self, op: str, key: str, client: int = 0,
                     inst_idx: int = 0) -> dict:
        """Admin route query: the ordered destinations a request would use
        right now, TKO state included. No side effects."""
        if op == "get":
            order = self.replica_order(client, key)
            dests = [self.destination(p, key) for p in order]
        else:
            dests = [self.destination(p, key)
                     for p in self.prefix_table.pools_for(key)]
        annotated = [{"destination": d, "pool": self._pool_of[d],
                      "status": self.health[inst_idx][d].status}
                     for d in dests]
        routable = ([d for d in annotated if d["status"] == ACTIVE]
                    + [d for d in annotated if d["status"] != ACTIVE])
        if op == "get":
            annotated = routable
        return {"strategy": self.name, "op": op, "key": key,
                "slot": self.slot(key), "destinations": annotated}

    def snapshot(self) -> dict:
        worst = {}
        for n in self._slot_of:
            statuses = [self.health[i][n].status for i in range(len(self.health))]
            if HARD_TKO in statuses:
                worst[n] = HARD_TKO
            elif SOFT_TKO in statuses:
                worst[n] = SOFT_TKO
            else:
                worst[n] = ACTIVE
        return {
            "strategy": self.name,
            "config": {
                "hash_name": self.config.hash_name,
                "prefix_routes": [[p, list(pools)]
                                  for p, pools in self.prefix_table.rules],
            },
            "pools": {p: list(nodes) for p, nodes in self.pools.items()},
            "health": worst,
        }

    def transitions_of(self, dest: str) -> int:
        return sum(self.health[i][dest].transitions for i in range(len(self.health)))
