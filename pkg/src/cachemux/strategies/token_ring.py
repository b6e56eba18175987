"""Peer-to-peer token ring: the node a client connects to becomes the
coordinator, serves or forwards within its rack, and replicates across racks
under one of three consistency levels. Quorum is counted over racks; a rack
with any live node stays eligible. Coordinator failures are not tolerated by
design: clients of a down entry node get connection errors, no retry."""

from __future__ import annotations

from dataclasses import dataclass

from ..hashing import get_hash_function, token_owner
from ..topology import ConfigError

CONSISTENCY_LEVELS = ("DC_ONE", "DC_QUORUM", "DC_SAFE_QUORUM")


@dataclass
class RingConfig:
    consistency: str = "DC_QUORUM"
    hash_name: str = "fnv1a_64"
    timeout_ms: int = 250
    prefer_local_on_divergence: bool = True
    connections_per_server: int = 1
    inflight_budget: int = 256
    pipeline_depth: int = 1
    overhead_us: int = 500

    def __post_init__(self):
        if self.consistency not in CONSISTENCY_LEVELS:
            raise ConfigError(f"unknown consistency level {self.consistency!r}")
        if self.timeout_ms <= 0:
            raise ConfigError("request timeout must be > 0")


class TokenRingStrategy:
    name = "token_ring"

    def __init__(self, engine, config: RingConfig, seed: int):
        self.engine = engine
        self.config = config
        self.hash = get_hash_function(config.hash_name)
        topo = engine.topology
        if topo.token_map is None:
            raise ConfigError("token ring requires a topology token map")
        if config.consistency != "DC_ONE" and len(topo.groups) < 2:
            raise ConfigError("quorum consistency needs at least 2 racks")
        self.token_map = topo.token_map
        self.racks = list(topo.groups)
        self.rack_of = {n: r for r, nodes in topo.groups.items() for n in nodes}
        # Entry-node assignment is fixed at start over nodes live at start.
        self._entry_nodes = engine.live_nodes()
        self._node_index = {n: i for i, n in enumerate(topo.node_ids)}
        self.coordinator_conn_errors = 0
        self._pending_by_coordinator: dict[str, list] = {n: [] for n in topo.node_ids}

    # -- placement -------------------------------------------------------------

    def owner(self, rack: str, key: str) -> str:
        return token_owner(self.token_map, rack, self.hash(key))

    def owners(self, key: str) -> dict[str, str]:
        return {rack: self.owner(rack, key) for rack in self.racks}

    def entry_node(self, client: int) -> str:
        return self._entry_nodes[client % len(self._entry_nodes)]

    def eligible_racks(self) -> list[str]:
        """A rack counts toward the quorum unless all of its nodes are down."""
        up = {n for n in self.engine.live_nodes()}
        return [r for r in self.racks
                if any(n in up for n in self.engine.topology.groups[r])]

    # -- warmup ------------------------------------------------------------------

    def warm_store(self, key: str, size: int, digest: int) -> None:
        for rack in self.racks:
            node = self.engine.nodes[self.owner(rack, key)]
            if node.state.up:
                node.state.store.set(key, size, digest)

    # -- request handling ----------------------------------------------------------

    def instance_for(self, req):
        entry = self.entry_node(req.client)
        if not self.engine.node_up(entry):
            return None
        return self.engine.instances[self._node_index[entry]]

    def on_request(self, req) -> None:
        entry = self.entry_node(req.client)
        if not self.engine.node_up(entry):
            # Coordinator failure: connection refused to the client, no retry.
            self.coordinator_conn_errors += 1
            self.engine.resolve(req, "error_conn", None)
            return
        coord = self.engine.instances[self._node_index[entry]]
        local_rack = self.rack_of[entry]
        eligible = self.eligible_racks()
        required = len(eligible) // 2 + 1
        sync_racks = ([local_rack] if self.config.consistency == "DC_ONE"
                      else [r for r in self.racks if r in eligible])
        ctx = {
            "coord": coord, "entry": entry, "local_rack": local_rack,
            "required": 1 if self.config.consistency == "DC_ONE" else required,
            "responses": [],        # (rack, outcome, digest) in arrival order
            "outstanding": 0,
            "subs": [],
        }
        req.ctx = ctx
        timeout_us = self.config.timeout_ms * 1000
        for rack in self.racks:
            dest = self.owner(rack, key=req.key)
            is_sync = rack in sync_racks
            if req.op == "get" and not is_sync:
                continue  # reads never touch racks outside the sync set
            sub = self.engine.make_sub(req, req.op, req.key, req.size, req.digest,
                                       coord, dest, timeout_us, tag=rack,
                                       is_async=not is_sync)
            if is_sync:
                ctx["outstanding"] += 1
                ctx["subs"].append(sub)
            self.engine.dispatch(sub)
        self._pending_by_coordinator[entry].append(req)
        self.engine.kernel.schedule(self.engine.kernel.now + timeout_us,
                                    self._request_timeout, req)
        self._try_resolve(req)

    def on_sub_result(self, sub, outcome, digest) -> None:
        req = sub.req
        if req is None or sub.is_async:
            return
        if req.resolved:
            return
        req.ctx["outstanding"] -= 1
        req.ctx["responses"].append((sub.tag, outcome, digest))
        self._try_resolve(req)

    def _request_timeout(self, req) -> None:
        if req.resolved:
            return
        self._try_resolve(req, timed_out=True)
        if not req.resolved:
            self._conclude(req, "error_timeout")

    def _valid(self, responses, op):
        ok = ("hit", "miss") if op == "get" else ("ok",)
        return [r for r in responses if r[1] in ok]

    def _try_resolve(self, req, timed_out: bool = False) -> None:
        ctx = req.ctx
        responses = ctx["responses"]
        valid = self._valid(responses, req.op)
        local = next((r for r in responses if r[0] == ctx["local_rack"]), None)
        exhausted = ctx["outstanding"] == 0

        if req.op == "set":
            if len(valid) >= ctx["required"]:
                self._conclude(req, "done")
            elif exhausted or timed_out:
                self._conclude(req, "error_quorum" if exhausted else "error_timeout")
            return

        if self.config.consistency == "DC_ONE":
            if local is None:
                if exhausted:
                    self._conclude(req, "error_quorum")
                elif timed_out:
                    self._conclude(req, "error_timeout")
                return
            _, outcome, digest = local
            if outcome == "hit":
                self._conclude(req, "done")
            elif outcome == "miss":
                self._conclude(req, "miss")
            else:
                self._conclude(req, "error_quorum")
            return

        # Quorum reads: the local response always weighs in before replying.
        if local is None and not (exhausted or timed_out):
            return
        if len(valid) < ctx["required"]:
            if exhausted:
                self._conclude(req, "error_quorum")
            elif timed_out:
                self._conclude(req, "error_timeout")
            return

        outcomes = {(o, d) for _, o, d in valid}
        local_failed = local is not None and local[1] not in ("hit", "miss")
        divergent = len(outcomes) > 1 or local_failed
        if not divergent:
            outcome, digest = valid[0][1], valid[0][2]
            self._conclude(req, "done" if outcome == "hit" else "miss")
            return
        if self.config.consistency == "DC_SAFE_QUORUM":
            # Checksums must match across the quorum; any divergence is an error.
            self._conclude(req, "error_quorum")
            return
        if self.config.prefer_local_on_divergence:
            if local is None or local[1] not in ("hit", "miss"):
                # The local rack's answer is a failure; that is what the
                # client hears, surfaced as a quorum error.
                self._conclude(req, "error_quorum")
            else:
                self._conclude(req, "done" if local[1] == "hit" else "miss")
            return
        first = valid[0]
        self._conclude(req, "done" if first[1] == "hit" else "miss")

    def _conclude(self, req, kind: str) -> None:
        ctx = req.ctx
        try:
            self._pending_by_coordinator[ctx["entry"]].remove(req)
        except ValueError:
            pass
        # Straggler reads are abandoned; replica writes always run to
        # completion so racks converge.
        if req.op == "get":
            for sub in ctx["subs"]:
                self.engine.cancel_sub(sub)
        self.engine.resolve(req, kind, ctx["coord"])

    # -- fault hooks -----------------------------------------------------------------

    def on_node_crash(self, node_id: str) -> None:
        """Coordinator and cache fail together: every request this node is
        coordinating dies with a connection error."""
        for req in list(self._pending_by_coordinator[node_id]):
            if not req.resolved:
                self._conclude_as_conn_error(req)

    def _conclude_as_conn_error(self, req) -> None:
        try:
            self._pending_by_coordinator[req.ctx["entry"]].remove(req)
        except ValueError:
            pass
        for sub in req.ctx["subs"]:
            self.engine.cancel_sub(sub)
        self.engine.resolve(req, "error_conn", None)

    def on_node_restart(self, node_id: str) -> None:
        pass

    # -- introspection -----------------------------------------------------------------

    def route_report(self, op: str, key: str, client: int = 0) -> dict:
        entry = self.entry_node(client)
        owners = self.owners(key)
        return {
            "strategy": self.name,
            "op": op,
            "key": key,
            "token": self.hash(key),
            "entry_node": entry,
            "coordinator_up": self.engine.node_up(entry),
            "owners": owners,
            "eligible_racks": self.eligible_racks(),
        }

    def snapshot(self) -> dict:
        return {
            "strategy": self.name,
            "config": {
                "consistency": self.config.consistency,
                "hash_name": self.config.hash_name,
                "prefer_local_on_divergence": self.config.prefer_local_on_divergence,
            },
            "racks": {r: list(nodes) for r, nodes in self.engine.topology.groups.items()},
            "tokens": {r: [[t, n] for t, n in entries]
                       for r, entries in self.token_map.racks.items()},
            "entry_nodes": list(self._entry_nodes),
            "down_nodes": sorted(set(self.engine.topology.node_ids)
                                 - set(self.engine.live_nodes())),
        }
