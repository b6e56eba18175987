"""Deterministic discrete-event engine.

Virtual clock in integer microseconds, a (time, sequence) ordered event heap,
per-connection FIFO queues with a pipeline-depth cap, and a bounded in-flight
budget per middleware instance with a global FIFO admission queue. The budget
plus pipeline cap is what lets one slow destination stall unrelated traffic
(head-of-line cascade); the admission queue models waiting, never rejection.
"""

from __future__ import annotations

import heapq
import random
from collections import deque
from typing import Callable

US_PER_S = 1_000_000


class SchedulingError(RuntimeError):
    """Bug guard: an event was scheduled before the current clock."""


def derive_rng(seed: int, label: str) -> random.Random:
    """Independent, reproducible stream for one component. Streams are keyed
    by label so adding a component does not perturb the others."""
    return random.Random(f"{seed}:{label}")


class Kernel:
    """Event loop: schedule(fn, at) and run to a horizon or to quiescence."""

    def __init__(self):
        self.now = 0
        self._heap: list[tuple[int, int, Callable, tuple]] = []
        self._seq = 0
        self.dispatched = 0

    def schedule(self, at_us: int, fn: Callable, *args) -> None:
        if at_us < self.now:
            raise SchedulingError(f"event at {at_us} scheduled at t={self.now}")
        self._seq += 1
        heapq.heappush(self._heap, (at_us, self._seq, fn, args))

    def schedule_in(self, delay_us: int, fn: Callable, *args) -> None:
        self.schedule(self.now + delay_us, fn, *args)

    def run_until(self, t_end_us: int) -> int:
        """Dispatch every event with time <= t_end_us; clock ends at t_end_us."""
        count = 0
        heap = self._heap
        while heap and heap[0][0] <= t_end_us:
            at, _, fn, args = heapq.heappop(heap)
            self.now = at
            fn(*args)
            count += 1
        self.now = max(self.now, t_end_us)
        self.dispatched += count
        return count

    def run_until_idle(self, max_events: int = 50_000_000) -> int:
        """Drain the queue completely (e.g. after arrivals stop)."""
        count = 0
        heap = self._heap
        while heap:
            at, _, fn, args = heapq.heappop(heap)
            self.now = at
            fn(*args)
            count += 1
            if count > max_events:
                raise RuntimeError("event queue failed to quiesce")
        self.dispatched += count
        return count

    @property
    def pending_events(self) -> int:
        return len(self._heap)


# Sub-request lifecycle states.
WAITING = 0    # in an instance's global admission queue
QUEUED = 1     # holds a budget slot, waiting in a connection FIFO
IN_FLIGHT = 2  # sent; timeout clock running
DONE = 3


class InflightBudget:
    """Bounded outstanding-request budget for one middleware instance, with a
    global FIFO admission queue for overflow."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("budget capacity must be >= 1")
        self.capacity = capacity
        self.occupied = 0
        self.admission: deque = deque()

    def has_room(self) -> bool:
        return self.occupied < self.capacity

    def release(self) -> None:
        self.occupied -= 1
        assert self.occupied >= 0, "budget slot double-release"
        while self.admission and self.occupied < self.capacity:
            sub = self.admission.popleft()
            if sub.state == DONE:
                continue
            self.occupied += 1
            sub.state = QUEUED
            sub.conn.pending.append(sub)
            sub.conn.pump()


class Connection:
    """FIFO pipe between one middleware instance and one server. At most
    pipeline_depth requests are in flight; the rest wait in order."""

    __slots__ = ("conn_id", "pipeline_depth", "pending", "in_flight", "_send")

    def __init__(self, conn_id: str, pipeline_depth: int, send: Callable):
        self.conn_id = conn_id
        self.pipeline_depth = pipeline_depth
        self.pending: deque = deque()
        self.in_flight = 0
        self._send = send

    def pump(self) -> None:
        while self.in_flight < self.pipeline_depth and self.pending:
            sub = self.pending.popleft()
            if sub.state != QUEUED:
                continue
            sub.state = IN_FLIGHT
            self.in_flight += 1
            self._send(sub)

    def drain_pending(self) -> list:
        """Remove and return every queued-but-unsent sub (ejection/TKO flush).
        In-flight subs are left to complete or time out."""
        flushed = [s for s in self.pending if s.state == QUEUED]
        self.pending.clear()
        return flushed


def submit(sub, budget: InflightBudget) -> None:
    """Admit a sub-request: occupy a budget slot and join the connection FIFO,
    or wait in the instance's admission queue when the budget is full."""
    if budget.has_room():
        budget.occupied += 1
        sub.state = QUEUED
        sub.conn.pending.append(sub)
        sub.conn.pump()
    else:
        sub.state = WAITING
        budget.admission.append(sub)


def finish(sub, budget: InflightBudget) -> None:
    """Terminal bookkeeping shared by response, timeout, and flush paths:
    free the pipeline slot if the sub was in flight, then the budget slot."""
    was_in_flight = sub.state == IN_FLIGHT
    sub.state = DONE
    if was_in_flight:
        sub.conn.in_flight -= 1
        sub.conn.pump()
    budget.release()


def cancel(sub, budget: InflightBudget) -> None:
    """Abandon a sub that is no longer needed. Queued subs free their budget
    slot immediately; in-flight subs are left to resolve on their own."""
    if sub.state == QUEUED:
        sub.state = DONE
        budget.release()
    elif sub.state == WAITING:
        sub.state = DONE
