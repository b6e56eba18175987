"""One measured run: build everything from a scenario, warm the stores through
the strategy's own placement, feed the open-loop arrival schedule, apply the
fault plan, drain to quiescence, and hand back the metrics."""

from __future__ import annotations

from dataclasses import dataclass

from .engine import ClientRequest, Engine
from .hashing import hash_fnv1_64
from .metrics import MetricsCollector
from .simkernel import US_PER_S, Kernel
from .strategies import make_strategy
from .scenario import Scenario
from .topology import build_topology
from .workload import Workload


def initial_digest(key: str) -> int:
    return hash_fnv1_64(f"{key}|0")


@dataclass
class RunResult:
    scenario: Scenario
    seed: int
    metrics: MetricsCollector
    strategy: object
    engine: Engine
    workload: Workload

    def phase(self, name: str):
        return self.metrics.phase(name)


def run_once(scenario: Scenario, seed: int) -> RunResult:
    kernel = Kernel()
    topology = build_topology(scenario.topology_cfg)
    scenario.faults.validate(topology)
    duration = scenario.duration_s
    metrics = MetricsCollector(duration, topology.node_ids, scenario.phases)

    scfg = scenario.strategy_config
    engine = Engine(
        kernel, topology, None, metrics,
        inflight_budget=scfg.inflight_budget,
        pipeline_depth=scfg.pipeline_depth,
        connections_per_server=scfg.connections_per_server,
        overhead_us=scfg.overhead_us,
        coordinator_mode=scenario.strategy_kind == "token_ring",
    )
    strategy = make_strategy(scenario.strategy_kind, engine, scfg, seed)
    engine.strategy = strategy

    workload = Workload(scenario.workload_cfg, seed)
    for key, size in workload.warmup_keys():
        strategy.warm_store(key, size, initial_digest(key))

    engine.schedule_faults(scenario.faults)

    requests = workload.generate()
    set_seq = iter(range(1, 1 << 62))

    def arrive(i: int) -> None:
        req = requests[i]
        digest = 0
        if req.op == "set":
            digest = hash_fnv1_64(f"{req.key}|{next(set_seq)}")
        cr = ClientRequest(req.at_us, req.client, req.op, req.key, req.size, digest)
        if i + 1 < len(requests):
            kernel.schedule(requests[i + 1].at_us, arrive, i + 1)
        engine.client_arrive(cr)

    if requests:
        kernel.schedule(requests[0].at_us, arrive, 0)

    kernel.run_until(duration * US_PER_S)
    kernel.run_until_idle()

    assert engine.submitted == len(requests)
    assert engine.completed == engine.submitted, (
        f"conservation violated: {engine.completed} outcomes "
        f"for {engine.submitted} requests")
    assert metrics.recorded == engine.completed
    for inst in engine.instances:
        assert inst.budget.occupied == 0, "in-flight budget leak after quiescence"

    metrics.finalize()
    return RunResult(scenario, seed, metrics, strategy, engine, workload)
