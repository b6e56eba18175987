"""Strategy registry plus offline route queries against saved run state."""

from __future__ import annotations

from ..hashing import TokenMap, get_hash_function, hash_fnv1_64, ketama_build, ketama_select, token_owner
from ..topology import ConfigError
from .proxy_pool import ProxyConfig, ProxyPoolStrategy
from .replicating_router import RouterConfig, ReplicatingRouterStrategy
from .token_ring import RingConfig, TokenRingStrategy

CONFIG_TYPES = {
    "proxy_pool": ProxyConfig,
    "replicating_router": RouterConfig,
    "token_ring": RingConfig,
}

STRATEGY_TYPES = {
    "proxy_pool": ProxyPoolStrategy,
    "replicating_router": ReplicatingRouterStrategy,
    "token_ring": TokenRingStrategy,
}


def make_config(kind: str, options: dict):
    try:
        cfg_type = CONFIG_TYPES[kind]
    except KeyError:
        raise ConfigError(f"unknown strategy kind {kind!r}; expected one of "
                          f"{sorted(CONFIG_TYPES)}") from None
    fields = {f for f in cfg_type.__dataclass_fields__}
    unknown = set(options) - fields
    if unknown:
        raise ConfigError(f"unknown {kind} options: {sorted(unknown)}")
    opts = dict(options)
    if kind == "replicating_router" and "prefix_routes" in opts:
        opts["prefix_routes"] = [(p, list(pools)) for p, pools in opts["prefix_routes"]]
    return cfg_type(**opts)


def make_strategy(kind: str, engine, config, seed: int):
    return STRATEGY_TYPES[kind](engine, config, seed)


def route_from_snapshot(snap: dict, op: str, key: str, client: int = 0) -> dict:
    """Re-run the routing decision recorded run state would make, offline.
    Uses the same hashing primitives as the live strategies."""
    kind = snap["strategy"]
    if kind == "proxy_pool":
        cfg = snap["config"]
        live = [s for s in snap["servers"] if s not in set(snap["ejected"])]
        report = {"strategy": kind, "op": op, "key": key, "ejected": snap["ejected"]}
        if not live:
            report["destinations"] = []
            return report
        h = get_hash_function(cfg["hash_name"])(key)
        if cfg["distribution"] == "modula":
            dest = live[h % len(live)]
        else:
            ring = ketama_build(live, cfg["points_per_server"])
            dest = ketama_select(ring, h)
        report["destinations"] = [dest]
        return report

    if kind == "replicating_router":
        cfg = snap["config"]
        pools = snap["pools"]
        names = list(pools)
        size = len(next(iter(pools.values())))
        slot = get_hash_function(cfg["hash_name"])(key) % size
        if op == "get":
            primary = hash_fnv1_64(f"client:{client}") % len(names)
            order = names[primary:] + names[:primary]
        else:
            order = names
        annotated = [{"destination": pools[p][slot], "pool": p,
                      "status": snap["health"][pools[p][slot]]} for p in order]
        if op == "get":
            annotated = ([d for d in annotated if d["status"] == "active"]
                         + [d for d in annotated if d["status"] != "active"])
        return {"strategy": kind, "op": op, "key": key, "slot": slot,
                "destinations": annotated}

    if kind == "token_ring":
        cfg = snap["config"]
        token_map = TokenMap({r: tuple((int(t), n) for t, n in entries)
                              for r, entries in snap["tokens"].items()})
        token = get_hash_function(cfg["hash_name"])(key)
        entry = snap["entry_nodes"][client % len(snap["entry_nodes"])]
        down = set(snap["down_nodes"])
        owners = {r: token_owner(token_map, r, token) for r in snap["racks"]}
        return {"strategy": kind, "op": op, "key": key, "token": token,
                "entry_node": entry, "coordinator_up": entry not in down,
                "owners": owners,
                "owner_status": {r: ("down" if n in down else "up")
                                 for r, n in owners.items()}}

    raise ConfigError(f"unknown strategy kind in run state: {kind!r}")
