"""Deterministic discrete-event core: per-core clocks, event queue, cost model.

The engine is strictly single-threaded.  All ordering is derived from
(timestamp, core, sequence) tuples, so two runs with the same configuration
and seed produce bit-identical traces and metrics.
"""
from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Optional

PAGE_SIZE = 4096


class EngineBug(RuntimeError):
    """Internal invariant broken (event in the past, double free, ...)."""


class ScenarioError(RuntimeError):
    """The scenario configuration cannot run (deadlock, bad shape, ...)."""


class MemoryExhausted(ScenarioError):
    """Free memory ran out with nothing left to evict."""


@dataclass(frozen=True)
class CostModel:
    """Abstract per-operation tick costs. A tick is one compute op by default.

    Ratios are order-of-magnitude; absolute results are qualitative only.
    """

    compute_op: int = 1
    tlb_miss_walk: int = 100
    page_fault_service: int = 2500
    ipi_initiate: int = 2000      # paid by the initiator when any IPI goes out
    ipi_receive: int = 1000       # paid by each user-mode receiver
    ipi_ack_wait: int = 100       # extra initiator wait per user-mode target
    syscall_overhead: int = 500

    def validate(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, int) or v < 0:
                raise ScenarioError(f"cost model field {f.name} must be a non-negative int, got {v!r}")

    def with_overrides(self, overrides: dict) -> "CostModel":
        unknown = set(overrides) - {f.name for f in fields(self)}
        if unknown:
            raise ScenarioError(f"unknown cost model fields: {sorted(unknown)}")
        cm = replace(self, **overrides)
        cm.validate()
        return cm


@dataclass(order=True)
class Event:
    """Queued simulation action; total order is (time, core, seq)."""

    time: int
    core: int
    seq: int
    kind: str = field(compare=False)
    action: Callable[[], None] = field(compare=False, repr=False)


class Engine:
    """Event loop owning per-core virtual clocks.

    Clocks only move via charge(); an event whose core clock has been pushed
    past its timestamp (e.g. by a received IPI) is re-queued at the clock,
    which keeps per-core time monotone and globally deterministic.
    """

    def __init__(self, num_cores: int, costs: Optional[CostModel] = None, trace: bool = False):
        if num_cores < 1:
            raise ScenarioError("need at least one core")
        self.num_cores = num_cores
        self.costs = costs or CostModel()
        self.costs.validate()
        self.clock = [0] * num_cores
        self.charged = [0] * num_cores
        self.now = 0
        self._queue: list[Event] = []
        self._seq = 0
        self.events_processed = 0
        self._live_actors = 0
        self.trace_enabled = trace
        self.trace_lines: list[str] = []

    # -- queue -----------------------------------------------------------

    def schedule(self, time: int, core: int, kind: str, action: Callable[[], None]) -> None:
        if time < self.now:
            raise EngineBug(f"event {kind!r} scheduled at {time} in the past (now={self.now})")
        if not 0 <= core < self.num_cores:
            raise EngineBug(f"no such core {core}")
        heapq.heappush(self._queue, Event(time, core, self._seq, kind, action))
        self._seq += 1

    def queue_size(self) -> int:
        return len(self._queue)

    # -- time ------------------------------------------------------------

    def charge(self, core: int, cost: int) -> None:
        if cost < 0:
            raise EngineBug(f"negative charge {cost}")
        self.clock[core] += cost
        self.charged[core] += cost

    def trace(self, core: int, kind: str, details: str = "") -> None:
        if self.trace_enabled:
            self.trace_lines.append(f"{self.now} {core} {kind} {details}".rstrip())

    # -- actors ----------------------------------------------------------

    def actor_started(self) -> None:
        self._live_actors += 1

    def actor_finished(self) -> None:
        self._live_actors -= 1

    # -- main loop -------------------------------------------------------

    def run(self, until_tick: Optional[int] = None, max_events: Optional[int] = None) -> None:
        """Process events until the queue drains or a limit is hit.

        Raises ScenarioError on deadlock: an empty queue while registered
        actors are still unfinished means some actor forgot to reschedule.
        """
        while self._queue:
            ev = self._queue[0]
            if until_tick is not None and ev.time > until_tick:
                return
            if max_events is not None and self.events_processed >= max_events:
                return
            heapq.heappop(self._queue)
            if self.clock[ev.core] > ev.time:
                # An IPI pushed this core's clock forward; finish later.
                self.schedule(max(self.clock[ev.core], self.now), ev.core, ev.kind, ev.action)
                continue
            self.now = ev.time
            self.clock[ev.core] = ev.time  # idle cores jump forward to the event
            self.events_processed += 1
            ev.action()
        if self._live_actors > 0:
            raise ScenarioError(f"deadlock: queue empty with {self._live_actors} unfinished actors")


def split_rng(seed: int, stream: int) -> random.Random:
    """Deterministic per-thread RNG, split from the scenario seed."""
    return random.Random((seed * 1_000_003 + stream * 7919) & 0xFFFFFFFFFFFF)
