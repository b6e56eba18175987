"""Experiment controller: run scenarios across seeds with exports, compare
completed runs, probe sustainable capacity, and answer offline route queries
against saved run state."""

from __future__ import annotations

import json
import os
from dataclasses import replace

from .faults import FaultSchedule
from .runner import RunResult, run_once
from .scenario import Scenario, load_scenario, scenario_echo
from .strategies import route_from_snapshot
from .topology import ConfigError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3


def run_scenario(scenario: Scenario, out_dir: str | None = None,
                 seeds: list[int] | None = None, quiet: bool = False) -> list[RunResult]:
    """Run every seed; when out_dir is set, write per-seed CSV/JSON/run-state
    plus a cross-seed summary."""
    seeds = list(seeds if seeds is not None else scenario.seeds)
    results = []
    for seed in seeds:
        result = run_once(scenario, seed)
        results.append(result)
        if out_dir:
            seed_dir = os.path.join(out_dir, scenario.name, f"seed_{seed}")
            os.makedirs(seed_dir, exist_ok=True)
            result.metrics.export_csv(os.path.join(seed_dir, "metrics.csv"))
            result.metrics.export_summary_json(
                os.path.join(seed_dir, "summary.json"),
                config_echo=scenario_echo(scenario), seed=seed,
                extra={"ejections": result.engine.ejection_events})
            _write_json(os.path.join(seed_dir, "run_state.json"),
                        result.strategy.snapshot())
        if not quiet:
            fault = result.metrics.phase("fault") if scenario.phases[1] else None
            line = f"[{scenario.name} seed={seed}] requests={result.engine.submitted}"
            if fault:
                line += (f" fault: done={fault.done} miss={fault.misses}"
                         f" err={fault.errors} lat_mean={fault.lat_mean_us / 1000:.2f}ms")
            print(line)
    if out_dir:
        _write_json(os.path.join(out_dir, scenario.name, "summary.json"),
                    _cross_seed_summary(scenario, results))
    return results


def _cross_seed_summary(scenario: Scenario, results: list[RunResult]) -> dict:
    phases = {}
    for name in ("warmup", "fault", "recovery"):
        rows = []
        for r in results:
            try:
                rows.append(r.metrics.phase(name))
            except KeyError:
                continue
        if rows:
            n = len(rows)
            phases[name] = {
                "done_rate_mean": sum(p.done_rate for p in rows) / n,
                "miss_total_mean": sum(p.misses for p in rows) / n,
                "error_total_mean": sum(p.errors for p in rows) / n,
                "lat_mean_us_mean": sum(p.lat_mean_us for p in rows) / n,
            }
    return {"scenario": scenario_echo(scenario),
            "seeds": [r.seed for r in results],
            "phases": phases}


def _write_json(path: str, doc: dict) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IOError(f"cannot write {path}: {exc}") from exc


# -- compare -----------------------------------------------------------------


def load_run_summary(run_dir: str) -> dict:
    path = os.path.join(run_dir, "summary.json")
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise IOError(f"cannot read {path}: {exc}") from exc


def compare_runs(run_dirs: list[str]) -> tuple[str, str]:
    """Side-by-side phase table for >= 2 completed seed runs. Returns
    (csv_text, table_text); phase plans must match."""
    if len(run_dirs) < 2:
        raise ConfigError("compare needs at least two run directories")
    summaries = [load_run_summary(d) for d in run_dirs]
    plans = []
    for s in summaries:
        if "phases" not in s or not isinstance(s["phases"], list):
            raise ConfigError("run summary lacks per-phase data (is this a seed dir?)")
        plans.append(tuple((p["phase"], p["start_s"], p["end_s"]) for p in s["phases"]))
    if len(set(plans)) != 1:
        raise ConfigError("incompatible phase plans across runs")

    header = ["run", "phase", "requests", "done_pct", "miss_pct", "err_pct",
              "lat_mean_ms", "lat_p99_ms"]
    rows = []
    for d, s in zip(run_dirs, summaries):
        label = s.get("config", {}).get("name", os.path.basename(os.path.abspath(d)))
        for p in s["phases"]:
            total = max(1, p["requests"])
            rows.append([
                label, p["phase"], str(p["requests"]),
                f"{100 * p['done'] / total:.2f}",
                f"{100 * p['misses'] / total:.2f}",
                f"{100 * p['errors'] / total:.2f}",
                f"{p['lat_mean_us'] / 1000:.3f}",
                f"{p['lat_p99_us'] / 1000:.3f}",
            ])
    csv_text = "\n".join([",".join(header)] + [",".join(r) for r in rows]) + "\n"
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(header)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    table = "\n".join([fmt.format(*header)] + [fmt.format(*r) for r in rows]) + "\n"
    return csv_text, table


# -- capacity ----------------------------------------------------------------


def _probe_point(scenario: Scenario, rate: float) -> dict:
    """One fault-free short run at a trial rate; the whole window is measured."""
    cap = scenario.capacity
    dur = int(cap["probe_duration_s"])
    probe = replace(
        scenario,
        workload_cfg=replace(scenario.workload_cfg, target_rate=rate, duration_s=dur),
        phases=(0, dur, 0),
        faults=FaultSchedule([]),
    )
    result = run_once(probe, scenario.seeds[0])
    fault = result.metrics.phase("fault")
    total = max(1, fault.requests)
    return {
        "rate": rate,
        "p99_us": fault.lat_p99_us,
        "error_rate": fault.errors / total,
        "done_rate": fault.done_rate,
    }


def _point_ok(point: dict, capacity: dict, rate: float) -> bool:
    # A sustainable rate keeps tail latency and errors bounded and actually
    # completes the offered load inside the measured window.
    return (point["p99_us"] <= capacity["p99_limit_us"]
            and point["error_rate"] < capacity["max_error_rate"]
            and point["done_rate"] >= 0.85 * rate)


def capacity_probe(scenario: Scenario, verbose: bool = False) -> dict:
    """Binary search for the highest target rate whose p99 latency and error
    rate stay under the configured bounds."""
    if scenario.faults.specs:
        raise ConfigError("capacity probe requires a fault-free scenario")
    cap = scenario.capacity
    lo, hi = float(cap["rate_min"]), float(cap["rate_max"])
    trace = []

    point = _probe_point(scenario, lo)
    trace.append(point)
    if not _point_ok(point, cap, lo):
        return {"max_rate": 0.0, "trace": trace}
    best = lo

    point = _probe_point(scenario, hi)
    trace.append(point)
    if _point_ok(point, cap, hi):
        return {"max_rate": hi, "trace": trace, "note": "ceiling reached"}

    while hi - lo > cap["tolerance"] * hi:
        mid = (lo + hi) / 2.0
        point = _probe_point(scenario, mid)
        trace.append(point)
        if verbose:
            print(f"  probe rate={mid:.0f} p99={point['p99_us'] / 1000:.1f}ms "
                  f"err={point['error_rate']:.4f}")
        if _point_ok(point, cap, mid):
            lo = best = mid
        else:
            hi = mid
    return {"max_rate": best, "trace": trace}


# -- route -------------------------------------------------------------------


def route_query(run_state_path: str, op: str, key: str, client: int = 0) -> dict:
    if op not in ("get", "set"):
        raise ConfigError(f"op must be 'get' or 'set', not {op!r}")
    try:
        with open(run_state_path, encoding="utf-8") as fh:
            snap = json.load(fh)
    except OSError as exc:
        raise IOError(f"cannot read {run_state_path}: {exc}") from exc
    return route_from_snapshot(snap, op, key, client)


__all__ = [
    "EXIT_OK", "EXIT_CONFIG", "EXIT_IO",
    "run_scenario", "compare_runs", "capacity_probe", "route_query",
    "load_scenario",
]
