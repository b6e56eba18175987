"""Per-second aggregation of client-visible outcomes and node utilization,
with phase roll-ups and CSV/JSON export.

Every terminal outcome is counted exactly once; percentiles use nearest-rank
over the window's latency samples. Outcomes that straggle past the run
horizon (drain of queued work) are folded into the final window so the
conservation identity holds over the exported rows."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .simkernel import US_PER_S

DONE = "done"
MISS = "miss"
ERR_TIMEOUT = "error_timeout"
ERR_CONN = "error_conn"
ERR_QUORUM = "error_quorum"

OUTCOMES = (DONE, MISS, ERR_TIMEOUT, ERR_CONN, ERR_QUORUM)


def nearest_rank(sorted_us: np.ndarray, pct: float) -> int:
    """Nearest-rank percentile of an ascending latency array (empty -> 0)."""
    n = len(sorted_us)
    if n == 0:
        return 0
    rank = max(1, math.ceil(pct / 100.0 * n))
    return int(sorted_us[rank - 1])


@dataclass
class PhaseSummary:
    phase: str
    start_s: int
    end_s: int
    requests: int
    done: int
    misses: int
    errors_timeout: int
    errors_conn: int
    errors_quorum: int
    lat_mean_us: float
    lat_std_us: float
    lat_p50_us: int
    lat_p95_us: int
    lat_p99_us: int
    done_rate: float          # done per second over the phase
    node_cpu_mean: dict[str, float]

    @property
    def errors(self) -> int:
        return self.errors_timeout + self.errors_conn + self.errors_quorum

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["errors"] = self.errors
        return d


class MetricsCollector:
    """One run's window accounting. `record` takes the terminal outcome of a
    client request; node busy-time and link bits are fed by the engine."""

    def __init__(self, duration_s: int, node_ids: list[str],
                 phases: tuple[int, int, int]):
        self.duration_s = duration_s
        self.node_ids = list(node_ids)
        self.phases = phases
        self.counts = {kind: np.zeros(duration_s, dtype=np.int64) for kind in OUTCOMES}
        self._lat: list[list[int]] = [[] for _ in range(duration_s)]
        self.node_busy_us = {n: np.zeros(duration_s, dtype=np.int64) for n in self.node_ids}
        self.node_netbits = {n: np.zeros(duration_s, dtype=np.int64) for n in self.node_ids}
        self.node_hog = {n: np.zeros(duration_s, dtype=np.float64) for n in self.node_ids}
        self.recorded = 0
        self._finalized = None

    def _window(self, t_us: int) -> int:
        return min(t_us // US_PER_S, self.duration_s - 1)

    def record(self, kind: str, latency_us: int, t_us: int) -> None:
        w = self._window(t_us)
        self.counts[kind][w] += 1
        self._lat[w].append(latency_us)
        self.recorded += 1

    def add_node_busy(self, node_id: str, t_us: int, busy_us: int) -> None:
        self.node_busy_us[node_id][self._window(t_us)] += busy_us

    def add_node_bits(self, node_id: str, t_us: int, bits: int) -> None:
        self.node_netbits[node_id][self._window(t_us)] += bits

    def set_hog_share(self, node_id: str, start_us: int, end_us: int, share: float) -> None:
        """Attribute an injected CPU hog to the windows it spans."""
        w0 = self._window(start_us)
        w1 = self._window(max(start_us, end_us - 1))
        self.node_hog[node_id][w0:w1 + 1] = share

    # -- finalized views ----------------------------------------------------

    def finalize(self) -> dict:
        if self._finalized is not None:
            return self._finalized
        lat_sorted = [np.sort(np.asarray(l, dtype=np.int64)) for l in self._lat]
        windows = []
        for t in range(self.duration_s):
            arr = lat_sorted[t]
            row = {
                "t": t,
                "done": int(self.counts[DONE][t]),
                "misses": int(self.counts[MISS][t]),
                "errors_timeout": int(self.counts[ERR_TIMEOUT][t]),
                "errors_conn": int(self.counts[ERR_CONN][t]),
                "errors_quorum": int(self.counts[ERR_QUORUM][t]),
                "lat_mean_us": float(arr.mean()) if len(arr) else 0.0,
                "lat_std_us": float(arr.std()) if len(arr) else 0.0,
                "lat_p95_us": nearest_rank(arr, 95),
                "lat_p99_us": nearest_rank(arr, 99),
            }
            for n in self.node_ids:
                cpu = self.node_busy_us[n][t] / US_PER_S + self.node_hog[n][t]
                row[f"node_{n}_cpu"] = min(1.0, float(cpu))
                row[f"node_{n}_netbits"] = int(self.node_netbits[n][t])
            windows.append(row)
        self._finalized = {
            "windows": windows,
            "lat_sorted": lat_sorted,
            "phase_summaries": [self._phase_summary(*span) for span in self._phase_spans()],
        }
        return self._finalized

    def _phase_spans(self) -> list[tuple[str, int, int]]:
        w, f, r = self.phases
        spans = [("warmup", 0, w), ("fault", w, w + f), ("recovery", w + f, w + f + r)]
        return [(name, a, min(b, self.duration_s)) for name, a, b in spans if a < self.duration_s]

    def _phase_summary(self, name: str, start_s: int, end_s: int) -> PhaseSummary:
        sl = slice(start_s, end_s)
        lat = np.concatenate(
            [np.asarray(self._lat[t], dtype=np.int64) for t in range(start_s, end_s)]
            or [np.empty(0, dtype=np.int64)])
        lat_sorted = np.sort(lat)
        done = int(self.counts[DONE][sl].sum())
        counts = {kind: int(self.counts[kind][sl].sum()) for kind in OUTCOMES}
        total = sum(counts.values())
        node_cpu = {}
        for n in self.node_ids:
            cpu = (self.node_busy_us[n][sl] / US_PER_S + self.node_hog[n][sl])
            node_cpu[n] = float(np.minimum(cpu, 1.0).mean()) if end_s > start_s else 0.0
        return PhaseSummary(
            phase=name, start_s=start_s, end_s=end_s,
            requests=total,
            done=done,
            misses=counts[MISS],
            errors_timeout=counts[ERR_TIMEOUT],
            errors_conn=counts[ERR_CONN],
            errors_quorum=counts[ERR_QUORUM],
            lat_mean_us=float(lat.mean()) if len(lat) else 0.0,
            lat_std_us=float(lat.std()) if len(lat) else 0.0,
            lat_p50_us=nearest_rank(lat_sorted, 50),
            lat_p95_us=nearest_rank(lat_sorted, 95),
            lat_p99_us=nearest_rank(lat_sorted, 99),
            done_rate=done / (end_s - start_s) if end_s > start_s else 0.0,
            node_cpu_mean=node_cpu,
        )

    def phase_summaries(self) -> list[PhaseSummary]:
        return self.finalize()["phase_summaries"]

    def phase(self, name: str) -> PhaseSummary:
        for s in self.phase_summaries():
            if s.phase == name:
                return s
        raise KeyError(name)

    # -- export -------------------------------------------------------------

    def csv_header(self) -> str:
        cols = ["t", "done", "misses", "errors_timeout", "errors_conn", "errors_quorum",
                "lat_mean_us", "lat_std_us", "lat_p95_us", "lat_p99_us"]
        for n in self.node_ids:
            cols += [f"node_{n}_cpu", f"node_{n}_netbits"]
        return ",".join(cols)

    def export_csv(self, path: str) -> None:
        fin = self.finalize()
        lines = [self.csv_header()]
        for row in fin["windows"]:
            cells = [str(row["t"]), str(row["done"]), str(row["misses"]),
                     str(row["errors_timeout"]), str(row["errors_conn"]),
                     str(row["errors_quorum"]),
                     f"{row['lat_mean_us']:.3f}", f"{row['lat_std_us']:.3f}",
                     str(row["lat_p95_us"]), str(row["lat_p99_us"])]
            for n in self.node_ids:
                cells.append(f"{row[f'node_{n}_cpu']:.6f}")
                cells.append(str(row[f"node_{n}_netbits"]))
            lines.append(",".join(cells))
        _write_text(path, "\n".join(lines) + "\n")

    def export_summary_json(self, path: str, config_echo: dict, seed: int,
                            extra: dict | None = None) -> None:
        fin = self.finalize()
        doc = {
            "seed": seed,
            "config": config_echo,
            "phases": [s.to_dict() for s in fin["phase_summaries"]],
            "totals": {kind: int(self.counts[kind].sum()) for kind in OUTCOMES},
            "recorded": self.recorded,
        }
        if extra:
            doc.update(extra)
        _write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_text(path: str, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IOError(f"cannot write {path}: {exc}") from exc
