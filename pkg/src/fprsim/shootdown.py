"""IPI/TLB-shootdown protocol: target masks, lazy deferral, global counter.

Cores running kernel code are excluded from the IPI and self-flush before
their next user-space access; everyone else pays the receive cost up front.
The initiator pays an initiation cost plus a per-acked-target wait.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

from .allocator import VERSION_MASK
from .engine import EngineBug

# A range flush covering more pages than this becomes a full flush
# (mirrors the Linux single-page-flush ceiling).
FULL_FLUSH_THRESHOLD = 33

REASONS = ("munmap", "eviction", "fpr_context_exit", "fixed_addr",
           "hint_wrap", "fork_exit", "migration", "version_wrap")
GLOBAL_REASONS = frozenset({"fpr_context_exit", "version_wrap"})


@dataclass
class ShootdownRequest:
    initiator: int
    targets: frozenset            # cores, may include the initiator
    scope_full: bool              # full flush vs range flush
    pages: tuple = ()             # ((proc, va), ...) when range-scoped
    reason: str = "munmap"
    threshold: int = FULL_FLUSH_THRESHOLD

    def __post_init__(self):
        if self.reason not in REASONS:
            raise EngineBug(f"unknown shootdown reason {self.reason!r}")
        if not self.scope_full and len(self.pages) > self.threshold:
            self.scope_full = True


@dataclass
class ShootdownReceipt:
    ipis_sent: int
    deferred: int
    dropped_entries: int


class GlobalCounter:
    """Monotone 40-bit counter, bumped once per global shootdown."""

    def __init__(self, wrap_at: int = VERSION_MASK):
        self.value = 1
        self.wrap_at = wrap_at
        self.wraps = 0

    def increment(self) -> bool:
        """Advance; returns True when the counter wrapped (stamps reset)."""
        self.value += 1
        if self.value >= self.wrap_at:
            self.value = 1
            self.wraps += 1
            return True
        return False


@dataclass
class _Deferred:
    full: bool = False
    pages: set = field(default_factory=set)
    requests: int = 0

    def absorb(self, request: ShootdownRequest) -> None:
        self.requests += 1
        if request.scope_full:
            self.full = True
            self.pages.clear()
        elif not self.full:
            self.pages.update(request.pages)
            if len(self.pages) > request.threshold:
                self.full = True
                self.pages.clear()


class ShootdownController:
    """Delivers shootdowns against the machine's TLBs and clocks."""

    def __init__(self, tlbs, in_kernel, charge, costs, metrics, counter: Optional[GlobalCounter] = None):
        self.tlbs = tlbs
        self.in_kernel = in_kernel      # callable core -> bool
        self.charge = charge            # callable (core, ticks)
        self.costs = costs
        self.metrics = metrics
        self.counter = counter or GlobalCounter()
        self.deferred: dict[int, _Deferred] = {}
        self.observers: list = []       # called with (request, immediate_targets, lazy_targets)

    # -- helpers ----------------------------------------------------------

    @staticmethod
    def mask_for(address_spaces: Iterable) -> frozenset:
        """Union of the cpu masks of the given address spaces."""
        mask: set[int] = set()
        for space in address_spaces:
            mask |= space.cpu_mask
        return frozenset(mask)

    def _flush(self, core: int, request: ShootdownRequest) -> int:
        tlb = self.tlbs[core]
        if request.scope_full:
            return tlb.flush_full()
        return tlb.flush_range(request.pages)

    # -- protocol ----------------------------------------------------------

    def initiate(self, request: ShootdownRequest) -> ShootdownReceipt:
        m = self.metrics
        m.shootdowns_sent += 1
        m.count_reason(request.reason)

        dropped = 0
        if request.initiator in request.targets:
            dropped += self._flush(request.initiator, request)

        immediate: list[int] = []
        lazy: list[int] = []
        for core in sorted(request.targets):
            if core == request.initiator:
                continue
            if self.in_kernel(core):
                lazy.append(core)
                self.deferred.setdefault(core, _Deferred()).absorb(request)
            else:
                immediate.append(core)
                dropped += self._flush(core, request)
                self.charge(core, self.costs.ipi_receive)
        if immediate:
            self.charge(request.initiator,
                        self.costs.ipi_initiate + self.costs.ipi_ack_wait * len(immediate))
        m.shootdowns_received += len(immediate)

        if request.reason in GLOBAL_REASONS:
            if self.counter.increment():
                # 40-bit wrap: reset every stamp; the caller already issued
                # a machine-wide flush under the version_wrap reason.
                for obs in self.observers:
                    obs("counter_wrap", request, (), ())
        for obs in self.observers:
            obs("initiate", request, tuple(immediate), tuple(lazy))
        return ShootdownReceipt(len(immediate), len(lazy), dropped)

    def has_deferred(self, core: int) -> bool:
        return core in self.deferred

    def on_user_return(self, core: int) -> int:
        """Coalesce and execute this core's deferred flushes (at most one)."""
        pending = self.deferred.pop(core, None)
        if pending is None:
            return 0
        tlb = self.tlbs[core]
        if pending.full:
            dropped = tlb.flush_full()
        else:
            dropped = tlb.flush_range(pending.pages)
        # Each deferred request counts as received when actually executed.
        self.metrics.shootdowns_received += pending.requests
        return dropped
