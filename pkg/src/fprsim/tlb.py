"""Per-core translation lookaside buffer with FIFO replacement.

Lookups never consult the page table; a hit returns whatever was cached,
which is exactly what makes stale entries observable to the checker.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

DEFAULT_CAPACITY = 2048


@dataclass
class TlbEntry:
    proc: int
    va: int           # page-granular virtual address
    pfn: int
    writable: bool
    insertion_tick: int
    # Checker-owned snapshot taken at insert time; the engine never reads it.
    origin_ctx: int = 0
    origin_identity: tuple = field(default=())


class Tlb:
    """One core's translation cache. At most one entry per (proc, va)."""

    def __init__(self, capacity: int = DEFAULT_CAPACITY, evict_policy: str = "fifo"):
        if capacity < 1:
            raise ValueError("TLB capacity must be positive")
        if evict_policy != "fifo":
            raise ValueError(f"unsupported replacement policy {evict_policy!r}")
        self.capacity = capacity
        self._entries: "OrderedDict[tuple[int, int], TlbEntry]" = OrderedDict()
        self.hits = 0
        self.misses = 0
        self.full_flushes = 0
        self.range_flushes = 0
        self.entries_dropped_by_flush = 0

    def __len__(self) -> int:
        return len(self._entries)

    def lookup(self, proc: int, va: int) -> Optional[TlbEntry]:
        entry = self._entries.get((proc, va))
        if entry is None:
            self.misses += 1
            return None
        self.hits += 1
        return entry

    def peek(self, proc: int, va: int) -> Optional[TlbEntry]:
        """Inspect without touching hit/miss counters (checker/test use)."""
        return self._entries.get((proc, va))

    def insert(self, entry: TlbEntry) -> None:
        key = (entry.proc, entry.va)
        if key in self._entries:
            # Re-insert counts as a fresh insertion for FIFO purposes.
            del self._entries[key]
        elif len(self._entries) >= self.capacity:
            self._entries.popitem(last=False)
        self._entries[key] = entry

    def flush_full(self) -> int:
        dropped = len(self._entries)
        self._entries.clear()
        self.full_flushes += 1
        self.entries_dropped_by_flush += dropped
        return dropped

    def flush_range(self, pairs) -> int:
        """Remove exactly the listed (proc, va) pairs; others are retained."""
        dropped = 0
        for key in pairs:
            if self._entries.pop(key, None) is not None:
                dropped += 1
        self.range_flushes += 1
        self.entries_dropped_by_flush += dropped
        return dropped
