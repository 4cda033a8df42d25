"""Page-cache eviction daemon with min/low/high watermarks.

Ordinary pages go in 32-page batches, one shootdown per batch. Pages inside
a recycling context are never touched while free memory stays above the min
watermark; once it reaches min, one huge batch evicts back to high with a
single shootdown.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

from .engine import MemoryExhausted, ScenarioError
from .shootdown import ShootdownRequest

EVICT_BATCH = 32


@dataclass(frozen=True)
class Watermarks:
    min: int
    low: int
    high: int

    def __post_init__(self):
        if not 0 < self.min < self.low < self.high:
            raise ScenarioError(f"watermarks must satisfy 0 < min < low < high, got {self}")

    @classmethod
    def for_frames(cls, total_frames: int) -> "Watermarks":
        # Linux-like proportions: 2% / 4% / 8%.
        return cls(max(1, total_frames * 2 // 100),
                   max(2, total_frames * 4 // 100),
                   max(3, total_frames * 8 // 100))


class Kswapd:
    def __init__(self, machine, marks: Watermarks, core: int):
        if marks.high >= machine.phys.total_frames:
            raise ScenarioError("high watermark must be below total frames")
        self.machine = machine
        self.marks = marks
        self.core = core
        self.fifo: deque[tuple[int, int]] = deque()   # (fid, off), insertion order
        self.sleeping = True
        self.blocked_until_min = False
        self.on_wake: Optional[Callable[[], None]] = None
        self.batch_log: list[tuple[str, int, int]] = []   # (kind, evicted, free_before)
        machine.kswapd = self

    # -- pressure hooks ------------------------------------------------------

    def note_cached(self, fid: int, off: int) -> None:
        self.fifo.append((fid, off))

    def should_wake(self, free: int) -> bool:
        return free < self.marks.low

    def notice_pressure(self, free: int) -> None:
        if self.on_wake is None:
            return
        if self.blocked_until_min:
            if free <= self.marks.min:
                self.blocked_until_min = False
                if self.sleeping:
                    self.sleeping = False
                    self.on_wake()
        elif self.sleeping and self.should_wake(free):
            self.sleeping = False
            self.on_wake()

    # -- eviction ------------------------------------------------------------

    def _entry(self, fid: int, off: int):
        return self.machine.files[fid].cache.get(off)

    def _tracked(self, frame: int) -> bool:
        return (self.machine.tracking_hooks
                and self.machine.phys.get_tracking(frame).recycle)

    def reclaim_step(self, core: Optional[int] = None) -> int:
        """One daemon step; returns pages evicted (0 means sleep or blocked)."""
        core = self.core if core is None else core
        free = self.machine.phys.free_frames
        if free >= self.marks.high:
            return 0
        if free > self.marks.min:
            evicted = self.scan_and_evict(core)
            if evicted == 0:
                # Only recycling pages left in the band: defer to min.
                self.blocked_until_min = True
            return evicted
        if any(self._tracked(e.frame) for e in self._live_entries()):
            return self.evict_fpr_huge_batch(core)
        evicted = self.scan_and_evict(core)
        if evicted == 0:
            raise MemoryExhausted("below min watermark with nothing evictable")
        return evicted

    def _live_entries(self):
        for fid, off in self.fifo:
            entry = self._entry(fid, off)
            if entry is not None:
                yield entry

    def scan_and_evict(self, core: int) -> int:
        """Evict up to one batch of the oldest non-recycling pages."""
        free_before = self.machine.phys.free_frames
        victims: list[tuple[int, int]] = []
        retained: list[tuple[int, int]] = []
        while self.fifo and len(victims) < EVICT_BATCH:
            fid, off = self.fifo.popleft()
            entry = self._entry(fid, off)
            if entry is None:
                continue
            if self._tracked(entry.frame):
                retained.append((fid, off))
                continue
            victims.append((fid, off))
        for item in reversed(retained):
            self.fifo.appendleft(item)
        if not victims:
            return 0
        evicted = self._evict(core, victims)
        self.machine.metrics.evictions_normal += evicted
        self.batch_log.append(("scan", evicted, free_before))
        return evicted

    def evict_fpr_huge_batch(self, core: int) -> int:
        """Single huge batch from min back up to high, one shootdown total."""
        free_before = self.machine.phys.free_frames
        need = self.marks.high - free_before
        victims: list[tuple[int, int]] = []
        while self.fifo and len(victims) < need:
            fid, off = self.fifo.popleft()
            if self._entry(fid, off) is None:
                continue
            victims.append((fid, off))
        if not victims:
            raise MemoryExhausted("below min watermark with nothing evictable")
        evicted = self._evict(core, victims)
        self.machine.metrics.evictions_huge += evicted
        self.machine.metrics.huge_batches += 1
        self.batch_log.append(("huge", evicted, free_before))
        return evicted

    def _evict(self, core: int, victims: list[tuple[int, int]]) -> int:
        """Write back, unmap everywhere, one batch shootdown, then free."""
        mc = self.machine
        frames: list[int] = []
        affected: dict[int, object] = {}
        any_mapped = False
        for fid, off in victims:
            entry = mc.files[fid].cache[off]
            if entry.dirty:
                mc._charge(core, mc._device_cost(fid, write=True))
                mc.metrics.writebacks += 1
                entry.dirty = False
            for pid, va in sorted(mc.rmap.get((fid, off), ())):
                space = mc.spaces[pid]
                del space.page_table[va]
                mc.checker.pte_remove(pid, va)
                affected[pid] = space
                any_mapped = True
            mc.rmap.pop((fid, off), None)
            del mc.files[fid].cache[off]
            frames.append(entry.frame)
        if any_mapped:
            # Batched reclaim flush drops whole TLBs on every mapping core.
            mc.shootdowns.initiate(ShootdownRequest(
                initiator=core,
                targets=mc.shootdowns.mask_for(affected.values()),
                scope_full=True, reason="eviction"))
        for frame in frames:
            mc.release_frame(core, frame)
        mc.trace(core, "evict", f"pages={len(frames)}")
        return len(frames)
