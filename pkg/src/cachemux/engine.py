"""Runtime that binds the event kernel to topology elements and drives one
measured run: arrival feed, middleware admission, connection pipelines,
bandwidth-aware transfer timing, node FIFO service, timeouts, and fault
application.

Resources use reserve-ahead FIFO timing: when a sub-request is sent, each
resource on its path (instance uplink, host link, node CPU, links back)
advances its busy-until cursor and the single delivery event is scheduled at
the final completion time. Store operations apply at send time, which matches
FIFO service order, so ordering semantics (read-my-write over one connection)
come out right without per-hop events."""

from __future__ import annotations

from .cachenode import NodeState, ceil_us, transfer_time_us
from .faults import FaultSchedule, apply_fault, revert_fault
from .hashing import hash_fnv1_64
from .metrics import MetricsCollector
from .simkernel import (DONE, IN_FLIGHT, Connection, InflightBudget, Kernel,
                        US_PER_S, cancel, finish, submit)
from .topology import ClusterTopology

HEADER_BITS = 400      # protocol framing per message; values add 8 bits/byte
DEFAULT_RTT_US = 100   # fixed propagation cost per delivery


class LinkState:
    """One shared uplink: FIFO transfer resource with a throttle factor."""

    __slots__ = ("link_id", "bandwidth_bps", "factor", "busy_until")

    def __init__(self, link_id: str, bandwidth_bps: float):
        self.link_id = link_id
        self.bandwidth_bps = bandwidth_bps
        self.factor = 1.0
        self.busy_until = 0

    def acquire(self, t_ready: int, bits: int) -> tuple[int, int]:
        dur = transfer_time_us(bits, self.bandwidth_bps, self.factor)
        start = t_ready if t_ready > self.busy_until else self.busy_until
        self.busy_until = start + dur
        return start, self.busy_until


class NodeRuntime:
    """Cache node plus its FIFO service cursor and in-flight bookkeeping."""

    __slots__ = ("state", "link", "busy_until", "pending", "epoch")

    def __init__(self, state: NodeState, link: LinkState):
        self.state = state
        self.link = link
        self.busy_until = 0
        self.pending: list = []
        self.epoch = 0

    def acquire_cpu(self, t_ready: int, dur_us: int) -> tuple[int, int]:
        start = t_ready if t_ready > self.busy_until else self.busy_until
        self.busy_until = start + dur_us
        return start, self.busy_until


class Sub:
    """One middleware-to-server attempt: the unit the budget and connection
    machinery operates on."""

    __slots__ = ("req", "op", "key", "size", "digest", "instance", "node_id",
                 "conn", "state", "sent_at", "timed_out", "timeout_us", "tag",
                 "outcome", "resp_digest", "is_async")

    def __init__(self, req, op, key, size, digest, instance, node_id, conn,
                 timeout_us, tag=None, is_async=False):
        self.req = req
        self.op = op
        self.key = key
        self.size = size
        self.digest = digest
        self.instance = instance
        self.node_id = node_id
        self.conn = conn
        self.state = -1
        self.sent_at = -1
        self.timed_out = False
        self.timeout_us = timeout_us
        self.tag = tag
        self.outcome = None
        self.resp_digest = None
        self.is_async = is_async


class ClientRequest:
    __slots__ = ("at_us", "client", "op", "key", "size", "digest", "resolved", "ctx")

    def __init__(self, at_us, client, op, key, size, digest):
        self.at_us = at_us
        self.client = client
        self.op = op
        self.key = key
        self.size = size
        self.digest = digest
        self.resolved = False
        self.ctx = None


class MiddlewareInstance:
    """One proxy/router process (or one token-ring coordinator when `node`
    is set): in-flight budget, uplink, and per-server connection pools."""

    __slots__ = ("idx", "budget", "link", "conns", "_rr", "cpu_busy_until",
                 "overhead_us", "node", "pipeline_depth", "conns_per_server", "_send")

    def __init__(self, idx, budget_capacity, link, overhead_us, pipeline_depth,
                 conns_per_server, send, node=None):
        self.idx = idx
        self.budget = InflightBudget(budget_capacity)
        self.link = link
        self.overhead_us = overhead_us
        self.pipeline_depth = pipeline_depth
        self.conns_per_server = conns_per_server
        self.conns: dict[str, list[Connection]] = {}
        self._rr: dict[str, int] = {}
        self.cpu_busy_until = 0
        self.node = node
        self._send = send

    def connection_for(self, node_id: str) -> Connection:
        pool = self.conns.get(node_id)
        if pool is None:
            pool = [Connection(f"mw{self.idx}->{node_id}#{c}", self.pipeline_depth, self._send)
                    for c in range(self.conns_per_server)]
            self.conns[node_id] = pool
            self._rr[node_id] = 0
        if len(pool) == 1:
            return pool[0]
        i = self._rr[node_id]
        self._rr[node_id] = (i + 1) % len(pool)
        return pool[i]

    def connections_to(self, node_id: str) -> list[Connection]:
        return self.conns.get(node_id, [])


class Engine:
    def __init__(self, kernel: Kernel, topology: ClusterTopology, strategy,
                 metrics: MetricsCollector, *, inflight_budget=256, pipeline_depth=1,
                 connections_per_server=1, overhead_us=0, rtt_us=DEFAULT_RTT_US,
                 coordinator_mode=False):
        self.kernel = kernel
        self.topology = topology
        self.strategy = strategy
        self.metrics = metrics
        self.rtt_us = rtt_us
        self.coordinator_mode = coordinator_mode

        self.links = {l.link_id: LinkState(l.link_id, l.bandwidth_bps)
                      for l in topology.links}
        self.nodes: dict[str, NodeRuntime] = {}
        for spec in topology.nodes:
            state = NodeState(spec.node_id, spec.memory_budget,
                              spec.base_service_time_us, spec.link_id)
            self.nodes[spec.node_id] = NodeRuntime(state, self.links[spec.link_id])

        self.instances: list[MiddlewareInstance] = []
        if coordinator_mode:
            # Token ring: one co-located coordinator per node, sharing its link
            # and CPU; coordinator and cache fail together.
            for i, spec in enumerate(topology.nodes):
                self.instances.append(MiddlewareInstance(
                    i, inflight_budget, self.links[spec.link_id], overhead_us,
                    pipeline_depth, connections_per_server, self._send,
                    node=self.nodes[spec.node_id]))
        else:
            for m in range(topology.middleware_instances):
                link = self.links[topology.instance_links[m]]
                self.instances.append(MiddlewareInstance(
                    m, inflight_budget, link, overhead_us,
                    pipeline_depth, connections_per_server, self._send))

        self.submitted = 0
        self.completed = 0
        self.ejection_events = 0   # strategy-reported, summarized post-run

    # -- node/link state under faults ---------------------------------------

    def crash_node(self, node_id: str) -> None:
        rt = self.nodes[node_id]
        if not rt.state.up:
            return
        rt.state.crash()
        rt.busy_until = self.kernel.now
        rt.epoch += 1
        pending, rt.pending = rt.pending, []
        for sub in pending:
            if sub.state != DONE:
                self._finish_sub(sub)
                self.strategy.on_sub_result(sub, "refused", None)
        self.strategy.on_node_crash(node_id)

    def restart_node(self, node_id: str) -> None:
        rt = self.nodes[node_id]
        rt.state.restart()
        rt.busy_until = self.kernel.now
        self.strategy.on_node_restart(node_id)

    def node_up(self, node_id: str) -> bool:
        return self.nodes[node_id].state.up

    def live_nodes(self) -> list[str]:
        return [n.state.node_id for n in self.nodes.values() if n.state.up]

    # -- sub-request lifecycle ----------------------------------------------

    def make_sub(self, req, op, key, size, digest, instance, node_id,
                 timeout_us, tag=None, is_async=False) -> Sub:
        conn = instance.connection_for(node_id)
        return Sub(req, op, key, size, digest, instance, node_id, conn,
                   timeout_us, tag, is_async)

    def dispatch(self, sub: Sub) -> None:
        submit(sub, sub.instance.budget)

    def send_probe(self, sub: Sub) -> None:
        """Health probes bypass the budget and connection FIFOs so a congested
        pipe cannot starve the very check meant to detect it."""
        sub.conn = None
        sub.state = IN_FLIGHT
        self._send(sub)

    def _finish_sub(self, sub: Sub) -> None:
        if sub.conn is None:
            sub.state = DONE
        else:
            finish(sub, sub.instance.budget)

    def cancel_sub(self, sub: Sub) -> None:
        if sub.conn is not None:
            cancel(sub, sub.instance.budget)

    def _send(self, sub: Sub) -> None:
        now = self.kernel.now
        sub.sent_at = now
        if sub.timeout_us:
            self.kernel.schedule(now + sub.timeout_us, self._fire_timeout, sub)
        inst = sub.instance
        t = now
        if inst.overhead_us:
            if inst.node is not None:
                state = inst.node.state
                if state.up:
                    dur = ceil_us(inst.overhead_us / state.cpu_share)
                    start, t = inst.node.acquire_cpu(t, dur)
                    self.metrics.add_node_busy(state.node_id, start,
                                               int(dur * state.cpu_share))
            else:
                start = t if t > inst.cpu_busy_until else inst.cpu_busy_until
                inst.cpu_busy_until = start + inst.overhead_us
                t = inst.cpu_busy_until

        node_rt = self.nodes[sub.node_id]
        if not node_rt.state.up:
            self.kernel.schedule(t + self.rtt_us, self._deliver, sub, "refused", None,
                                 node_rt.epoch)
            node_rt.pending.append(sub)
            return

        bits_req = HEADER_BITS + (sub.size * 8 if sub.op == "set" else 0)
        local = inst.node is not None and inst.node is node_rt
        if not local:
            if inst.link is not None and inst.link is not node_rt.link:
                _, t = inst.link.acquire(t, bits_req)
            start, t = node_rt.link.acquire(t, bits_req)
            self.metrics.add_node_bits(sub.node_id, start, bits_req)

        # Store op applies now, in FIFO send order; the response event only
        # reports what happened.
        outcome, digest = self._apply_store(node_rt.state, sub)
        state = node_rt.state
        dur = state.cpu_time_us()
        start, t = node_rt.acquire_cpu(t, dur)
        self.metrics.add_node_busy(sub.node_id, start, int(dur * state.cpu_share))

        bits_resp = HEADER_BITS + (sub.size * 8 if outcome == "hit" else 0)
        if not local:
            start, t = node_rt.link.acquire(t, bits_resp)
            self.metrics.add_node_bits(sub.node_id, start, bits_resp)
            if inst.link is not None and inst.link is not node_rt.link:
                _, t = inst.link.acquire(t, bits_resp)
            t += self.rtt_us

        node_rt.pending.append(sub)
        self.kernel.schedule(t, self._deliver, sub, outcome, digest, node_rt.epoch)

    @staticmethod
    def _apply_store(state: NodeState, sub: Sub):
        if sub.op == "set":
            state.store.set(sub.key, sub.size, sub.digest)
            return "ok", sub.digest
        entry = state.store.get(sub.key)
        if entry is None:
            return "miss", None
        return "hit", entry[1]

    def _deliver(self, sub: Sub, outcome, digest, epoch) -> None:
        node_rt = self.nodes[sub.node_id]
        if epoch == node_rt.epoch:
            try:
                node_rt.pending.remove(sub)
            except ValueError:
                pass
        if sub.state == DONE:
            return  # timed out earlier; late response discarded
        self._finish_sub(sub)
        self.strategy.on_sub_result(sub, outcome, digest)

    def _fire_timeout(self, sub: Sub) -> None:
        if sub.state == DONE:
            return
        sub.timed_out = True
        self._finish_sub(sub)
        self.strategy.on_sub_result(sub, "timeout", None)

    def flush_queued(self, instance: MiddlewareInstance, node_id: str) -> list[Sub]:
        """Fail every queued-but-unsent sub toward a server (ejection / TKO);
        budget slots free immediately, in-flight subs run their course."""
        flushed = []
        for conn in instance.connections_to(node_id):
            flushed.extend(conn.drain_pending())
        for sub in flushed:
            self._finish_sub(sub)
        return flushed

    # -- client request entry/exit ------------------------------------------

    def client_arrive(self, req: ClientRequest) -> None:
        """Inbound client leg: request bytes cross the instance uplink, then
        the strategy takes over."""
        self.submitted += 1
        instance = self.strategy.instance_for(req)
        if instance is None or instance.link is None:
            self.strategy.on_request(req)
            return
        bits = HEADER_BITS + (req.size * 8 if req.op == "set" else 0)
        _, t = instance.link.acquire(self.kernel.now, bits)
        if t > self.kernel.now:
            self.kernel.schedule(t, self.strategy.on_request, req)
        else:
            self.strategy.on_request(req)

    def resolve(self, req: ClientRequest, kind: str,
                instance: MiddlewareInstance | None = None) -> None:
        """Terminal client outcome: response bytes cross the uplink back and
        the latency sample lands in the window of the response time."""
        assert not req.resolved, "request resolved twice"
        req.resolved = True
        self.completed += 1
        t = self.kernel.now
        if instance is not None and instance.link is not None:
            bits = HEADER_BITS + (req.size * 8 if kind == "done" and req.op == "get" else 0)
            _, t = instance.link.acquire(t, bits)
        self.metrics.record(kind, t - req.at_us, t)

    # -- faults ---------------------------------------------------------------

    def schedule_faults(self, schedule: FaultSchedule) -> None:
        for spec in schedule.specs:
            self.kernel.schedule(int(spec.start_s * US_PER_S), self._apply, spec)
            self.kernel.schedule(int(spec.end_s * US_PER_S), self._revert, spec)
            if spec.kind == "overload":
                for target in spec.targets:
                    self.metrics.set_hog_share(target, int(spec.start_s * US_PER_S),
                                               int(spec.end_s * US_PER_S), spec.severity)

    def _apply(self, spec) -> None:
        if spec.kind == "crash":
            for target in spec.targets:
                self.crash_node(target)
        else:
            apply_fault(spec, {n: rt.state for n, rt in self.nodes.items()}, self.links)

    def _revert(self, spec) -> None:
        if spec.kind == "crash":
            for target in spec.targets:
                self.restart_node(target)
        else:
            revert_fault(spec, {n: rt.state for n, rt in self.nodes.items()}, self.links)
