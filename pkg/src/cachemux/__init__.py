"""cachemux: a deterministic discrete-event workbench for distributed-cache
middleware. Three routing/replication strategies (sharding proxy, replicating
router, peer-to-peer token ring) run against a simulated cache tier under
crash, overload, and bandwidth-bottleneck faults."""

from .scenario import Scenario, load_scenario, parse_scenario
from .runner import RunResult, run_once
from .expctl import capacity_probe, compare_runs, route_query, run_scenario

__version__ = "0.1.0"

__all__ = [
    "Scenario", "load_scenario", "parse_scenario",
    "RunResult", "run_once",
    "run_scenario", "compare_runs", "capacity_probe", "route_query",
    "__version__",
]
