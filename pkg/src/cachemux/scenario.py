"""Scenario documents: one YAML file with topology, strategy, workload,
faults, and phases sections. Unknown keys anywhere are errors, so a typo'd
calibration knob fails at load time instead of silently running defaults."""

from __future__ import annotations

from dataclasses import dataclass, field

import yaml

from .faults import FaultSchedule, make_fault
from .strategies import make_config
from .topology import ConfigError
from .workload import WorkloadConfig

TOP_LEVEL_KEYS = {"name", "strategy", "topology", "workload", "faults",
                  "phases", "seeds", "capacity"}
PHASE_KEYS = {"warmup_s", "fault_s", "recovery_s"}
CAPACITY_KEYS = {"p99_limit_us", "max_error_rate", "rate_min", "rate_max",
                 "probe_duration_s", "tolerance"}

CAPACITY_DEFAULTS = {
    "p99_limit_us": 100_000,
    "max_error_rate": 0.001,
    "rate_min": 100.0,
    "rate_max": 20_000.0,
    "probe_duration_s": 25,
    "tolerance": 0.04,
}


@dataclass
class Scenario:
    name: str
    strategy_kind: str
    strategy_config: object
    topology_cfg: dict
    workload_cfg: WorkloadConfig
    phases: tuple[int, int, int]
    faults: FaultSchedule
    seeds: list[int]
    capacity: dict = field(default_factory=lambda: dict(CAPACITY_DEFAULTS))

    @property
    def duration_s(self) -> int:
        return sum(self.phases)


def parse_scenario(doc: dict, name_hint: str = "scenario") -> Scenario:
    if not isinstance(doc, dict):
        raise ConfigError("scenario document must be a mapping")
    unknown = set(doc) - TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown scenario sections: {sorted(unknown)}")
    for required in ("strategy", "topology", "workload"):
        if required not in doc:
            raise ConfigError(f"scenario is missing the '{required}' section")

    strat = dict(doc["strategy"])
    kind = strat.pop("kind", None)
    if kind is None:
        raise ConfigError("strategy section needs a 'kind'")
    strategy_config = make_config(kind, strat)

    phases_raw = dict(doc.get("phases") or {})
    unknown = set(phases_raw) - PHASE_KEYS
    if unknown:
        raise ConfigError(f"unknown phases keys: {sorted(unknown)}")
    phases = (int(phases_raw.get("warmup_s", 200)),
              int(phases_raw.get("fault_s", 200)),
              int(phases_raw.get("recovery_s", 200)))
    if any(p < 0 for p in phases) or sum(phases) <= 0:
        raise ConfigError("phases must be non-negative with positive total")

    wl_raw = dict(doc["workload"])
    wl_fields = set(WorkloadConfig.__dataclass_fields__) - {"duration_s"}
    unknown = set(wl_raw) - wl_fields
    if unknown:
        raise ConfigError(f"unknown workload keys: {sorted(unknown)}")
    workload_cfg = WorkloadConfig(duration_s=sum(phases), **wl_raw)

    fault_phase = (float(phases[0]), float(phases[0] + phases[1]))
    faults = FaultSchedule([make_fault(f, fault_phase) for f in doc.get("faults") or []])

    seeds = [int(s) for s in doc.get("seeds") or [1]]
    if not seeds:
        raise ConfigError("seeds must not be empty")

    cap_raw = dict(doc.get("capacity") or {})
    unknown = set(cap_raw) - CAPACITY_KEYS
    if unknown:
        raise ConfigError(f"unknown capacity keys: {sorted(unknown)}")
    capacity = {**CAPACITY_DEFAULTS, **cap_raw}

    return Scenario(
        name=str(doc.get("name", name_hint)),
        strategy_kind=kind,
        strategy_config=strategy_config,
        topology_cfg=dict(doc["topology"]),
        workload_cfg=workload_cfg,
        phases=phases,
        faults=faults,
        seeds=seeds,
        capacity=capacity,
    )


def load_scenario(path: str) -> Scenario:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise IOError(f"cannot read scenario {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    import os
    hint = os.path.splitext(os.path.basename(path))[0]
    return parse_scenario(doc, name_hint=hint)


def scenario_echo(scenario: Scenario) -> dict:
    """Config echo for the summary JSON: plain data, stable ordering."""
    strat = {k: getattr(scenario.strategy_config, k)
             for k in sorted(scenario.strategy_config.__dataclass_fields__)}
    wl = {k: getattr(scenario.workload_cfg, k)
          for k in sorted(scenario.workload_cfg.__dataclass_fields__)}
    return {
        "name": scenario.name,
        "strategy_kind": scenario.strategy_kind,
        "strategy": strat,
        "topology": dict(sorted(scenario.topology_cfg.items())),
        "workload": wl,
        "phases": list(scenario.phases),
        "faults": [{"kind": f.kind, "targets": list(f.targets), "start_s": f.start_s,
                    "end_s": f.end_s, "severity": f.severity}
                   for f in scenario.faults.specs],
    }
