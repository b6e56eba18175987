"""Timed fault injection over topology elements: node crashes (with empty
store on restart), CPU-hog overloads, and link bandwidth throttling."""

from __future__ import annotations

from dataclasses import dataclass, field

from .topology import ClusterTopology, ConfigError

KINDS = ("crash", "overload", "throttle")


@dataclass(frozen=True)
class FaultSpec:
    kind: str                    # crash | overload | throttle
    targets: tuple[str, ...]     # node ids (crash/overload) or link ids (throttle)
    start_s: float
    end_s: float
    severity: float = 0.0        # hog cpu share (overload) or bandwidth divisor (throttle)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown fault kind {self.kind!r}")
        if not self.targets:
            raise ConfigError(f"{self.kind} fault has no targets")
        if self.start_s >= self.end_s:
            raise ConfigError(f"{self.kind} fault must have start < end")
        if self.kind == "overload" and not 0.0 < self.severity < 1.0:
            raise ConfigError("overload severity (hog share) must be in (0, 1)")
        if self.kind == "throttle" and self.severity < 1.0:
            raise ConfigError("throttle divisor must be >= 1")


def make_fault(raw: dict, fault_phase: tuple[float, float] | None = None) -> FaultSpec:
    """Build a FaultSpec from a scenario mapping. Defaults: severity 0.9 for
    overload, divisor 10 for throttle; start/end default to the fault phase."""
    allowed = {"kind", "targets", "start_s", "end_s", "severity"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown fault keys: {sorted(unknown)}")
    if "kind" not in raw or "targets" not in raw:
        raise ConfigError("fault needs 'kind' and 'targets'")
    kind = raw["kind"]
    severity = raw.get("severity")
    if severity is None:
        severity = {"overload": 0.9, "throttle": 10.0}.get(kind, 0.0)
    targets = raw["targets"]
    if isinstance(targets, str):
        targets = [targets]
    start = raw.get("start_s", fault_phase[0] if fault_phase else None)
    end = raw.get("end_s", fault_phase[1] if fault_phase else None)
    if start is None or end is None:
        raise ConfigError("fault needs start_s/end_s or a phase plan to default to")
    return FaultSpec(kind=kind, targets=tuple(targets),
                     start_s=float(start), end_s=float(end), severity=float(severity))


@dataclass
class FaultSchedule:
    specs: list[FaultSpec] = field(default_factory=list)

    def __post_init__(self):
        self.specs = sorted(self.specs, key=lambda s: (s.start_s, s.end_s, s.kind))

    def validate(self, topology: ClusterTopology) -> None:
        node_ids = set(topology.node_ids)
        link_ids = {l.link_id for l in topology.links}
        for spec in self.specs:
            universe = link_ids if spec.kind == "throttle" else node_ids
            missing = set(spec.targets) - universe
            if missing:
                raise ConfigError(
                    f"{spec.kind} fault targets unknown elements: {sorted(missing)}")


def apply_fault(spec: FaultSpec, nodes: dict, links: dict) -> None:
    """Mutate runtime state at spec.start. Crash dominates overload on the
    same target: a down node serves nothing regardless of cpu_share."""
    if spec.kind == "crash":
        for t in spec.targets:
            nodes[t].crash()
    elif spec.kind == "overload":
        for t in spec.targets:
            nodes[t].cpu_share = round(1.0 - spec.severity, 9)
    else:
        for t in spec.targets:
            links[t].factor = spec.severity


def revert_fault(spec: FaultSpec, nodes: dict, links: dict) -> None:
    """Undo at spec.end: restart (empty store), restore cpu, restore bandwidth."""
    if spec.kind == "crash":
        for t in spec.targets:
            nodes[t].restart()
    elif spec.kind == "overload":
        for t in spec.targets:
            nodes[t].cpu_share = 1.0
    else:
        for t in spec.targets:
            links[t].factor = 1.0
