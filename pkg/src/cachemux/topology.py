"""Declarative model of the deployed system: cache nodes, replica groups
(pools for the router strategies, racks for the token ring), shared host
uplinks, and middleware placement. Immutable once built."""

from __future__ import annotations

from dataclasses import dataclass, field

from .hashing import MASK64, TokenMap, evenly_spaced_tokens


class ConfigError(ValueError):
    """Scenario or topology document violates a validation rule."""


@dataclass(frozen=True)
class NodeSpec:
    node_id: str
    memory_budget: int
    base_service_time_us: int
    link_id: str

    def __post_init__(self):
        if self.memory_budget <= 0:
            raise ConfigError(f"node {self.node_id}: memory_budget must be > 0")
        if self.base_service_time_us <= 0:
            raise ConfigError(f"node {self.node_id}: base_service_time_us must be > 0")


@dataclass(frozen=True)
class LinkSpec:
    link_id: str
    bandwidth_bps: float

    def __post_init__(self):
        if self.bandwidth_bps <= 0:
            raise ConfigError(f"link {self.link_id}: bandwidth must be > 0")


@dataclass(frozen=True)
class ClusterTopology:
    nodes: tuple[NodeSpec, ...]
    links: tuple[LinkSpec, ...]
    groups: dict[str, tuple[str, ...]]         # group name -> node ids, ordered
    middleware_instances: int
    replication_factor: int
    token_map: TokenMap | None = None
    instance_links: tuple[str, ...] = ()       # link id per middleware instance

    def node(self, node_id: str) -> NodeSpec:
        return self._node_index[node_id]

    @property
    def _node_index(self) -> dict[str, NodeSpec]:
        idx = getattr(self, "_node_index_cache", None)
        if idx is None:
            idx = {n.node_id: n for n in self.nodes}
            object.__setattr__(self, "_node_index_cache", idx)
        return idx

    @property
    def node_ids(self) -> list[str]:
        return [n.node_id for n in self.nodes]

    @property
    def group_names(self) -> list[str]:
        return list(self.groups)


DEFAULTS = {
    "nodes": 30,
    "groups": 3,
    "middleware_instances": 7,
    "memory_budget": 64 * 1024 * 1024,
    "base_service_time_us": 500,
    "link_bandwidth_bps": 1e9,
    "nodes_per_host": 5,
    "replication": True,
    "instances_share_host_links": False,
    "tokens": None,
}


def build_topology(config: dict) -> ClusterTopology:
    """Validate and materialize a topology section.

    Node ids, groups, host links, and tokens are generated deterministically
    from counts; explicit `tokens` ({rack: {node: token}}) override the even
    spacing."""
    unknown = set(config) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown topology keys: {sorted(unknown)}")
    cfg = {**DEFAULTS, **config}

    n_nodes = int(cfg["nodes"])
    n_groups = int(cfg["groups"])
    if n_nodes < 1:
        raise ConfigError("topology must have at least one node")
    if n_groups < 1 or n_nodes % n_groups:
        raise ConfigError(f"{n_groups} groups must evenly partition {n_nodes} nodes")

    nodes_per_host = int(cfg["nodes_per_host"])
    n_hosts = -(-n_nodes // nodes_per_host)
    links = [LinkSpec(f"h{h}", float(cfg["link_bandwidth_bps"])) for h in range(n_hosts)]

    nodes = tuple(
        NodeSpec(
            node_id=f"n{i:02d}",
            memory_budget=int(cfg["memory_budget"]),
            base_service_time_us=int(cfg["base_service_time_us"]),
            link_id=f"h{i // nodes_per_host}",
        )
        for i in range(n_nodes)
    )

    per_group = n_nodes // n_groups
    groups = {
        f"g{g}": tuple(f"n{i:02d}" for i in range(g * per_group, (g + 1) * per_group))
        for g in range(n_groups)
    }

    seen: set[str] = set()
    for name, members in groups.items():
        overlap = seen & set(members)
        if overlap:
            raise ConfigError(f"group {name} overlaps others on {sorted(overlap)}")
        seen.update(members)
    if seen != {n.node_id for n in nodes}:
        raise ConfigError("groups must partition the node set")

    replication = bool(cfg["replication"])
    rf = n_groups if replication else 1

    racks = {}
    explicit = cfg["tokens"]
    for name, members in groups.items():
        if explicit is not None:
            rack_tokens = explicit.get(name)
            if rack_tokens is None:
                raise ConfigError(f"tokens missing for rack {name}")
            missing = set(members) - set(rack_tokens)
            if missing:
                raise ConfigError(
                    f"rack {name} omits a token sub-range: no tokens for {sorted(missing)}")
            entries = sorted((int(t) & MASK64, n) for n, t in rack_tokens.items())
            racks[name] = tuple(entries)
        else:
            racks[name] = evenly_spaced_tokens(members)
    token_map = TokenMap(racks)

    n_instances = int(cfg["middleware_instances"])
    if n_instances < 1:
        raise ConfigError("middleware_instances must be >= 1")
    if cfg["instances_share_host_links"]:
        instance_links = tuple(f"h{m % n_hosts}" for m in range(n_instances))
    else:
        links = links + [LinkSpec(f"mw{m}", float(cfg["link_bandwidth_bps"]))
                         for m in range(n_instances)]
        instance_links = tuple(f"mw{m}" for m in range(n_instances))

    return ClusterTopology(
        nodes=nodes,
        links=tuple(links),
        groups=groups,
        middleware_instances=n_instances,
        replication_factor=rf,
        token_map=token_map,
        instance_links=instance_links,
    )
