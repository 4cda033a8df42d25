"""Physical frame management: buddy allocator, per-CPU page lists, and the
8-byte per-frame tracking word that records recycling state.

Tracking word layout (64 bits, low to high):
  bit 0      recycle flag (tracking active; set iff context_id != 0)
  bit 1      always-shootdown flag (buddies with different ids were merged)
  bits 2-23  22-bit recycling context id
  bits 24-63 40-bit version stamp
"""
from __future__ import annotations

from dataclasses import dataclass

from .engine import EngineBug, MemoryExhausted

MAX_ORDER = 11               # Linux convention: orders 0..10
PCPU_BATCH = 32              # frames pulled from the buddy per refill
PCPU_HIGH_WATER = 2 * PCPU_BATCH

ID_BITS = 22
VERSION_BITS = 40
ID_MASK = (1 << ID_BITS) - 1
VERSION_MASK = (1 << VERSION_BITS) - 1

FLAG_RECYCLE = 0x1
FLAG_ALWAYS_SHOOTDOWN = 0x2

# Frame lifecycle states.
ST_BUDDY = 0
ST_PCPU = 1
ST_ALLOCATED = 2


@dataclass(frozen=True)
class TrackingWord:
    context_id: int = 0
    version: int = 0
    always_shootdown: bool = False

    def __post_init__(self):
        if not 0 <= self.context_id <= ID_MASK:
            raise ValueError(f"context_id {self.context_id} out of 22-bit range")
        if not 0 <= self.version <= VERSION_MASK:
            raise ValueError(f"version {self.version} out of 40-bit range")

    @property
    def recycle(self) -> bool:
        # Zero id is the "no recycling expected" sentinel.
        return self.context_id != 0

    def pack(self) -> int:
        word = 0
        if self.recycle:
            word |= FLAG_RECYCLE
        if self.always_shootdown:
            word |= FLAG_ALWAYS_SHOOTDOWN
        word |= self.context_id << 2
        word |= self.version << 24
        return word

    @classmethod
    def unpack(cls, word: int) -> "TrackingWord":
        return cls(
            context_id=(word >> 2) & ID_MASK,
            version=(word >> 24) & VERSION_MASK,
            always_shootdown=bool(word & FLAG_ALWAYS_SHOOTDOWN),
        )


UNTRACKED = TrackingWord()


def merge_tracking(a: TrackingWord, b: TrackingWord) -> TrackingWord:
    """Tracking word for a merged buddy pair.

    One tracked input: the merged block inherits it. Both tracked with equal
    ids: inherit, version = max. Different ids: keep the lower buddy's id,
    set always-shootdown, version = max.
    """
    if not a.recycle and not b.recycle:
        return UNTRACKED
    if a.recycle and not b.recycle:
        return a
    if b.recycle and not a.recycle:
        return b
    version = max(a.version, b.version)
    always = a.always_shootdown or b.always_shootdown or a.context_id != b.context_id
    return TrackingWord(a.context_id, version, always)


class BuddyAllocator:
    """Power-of-two allocator over frames [0, total). Eagerly merges buddies.

    Free blocks are keyed by start frame; each free list picks the lowest
    start first so allocation order is deterministic.
    """

    def __init__(self, total_frames: int, max_order: int = MAX_ORDER):
        if total_frames < 1:
            raise ValueError("total_frames must be positive")
        if not 1 <= max_order <= 30:
            raise ValueError("max_order out of range")
        self.total_frames = total_frames
        self.max_order = max_order
        self.free_lists: list[set[int]] = [set() for _ in range(max_order)]
        self._block_order: dict[int, int] = {}   # start -> order, free blocks only
        self.free_frames = 0
        # Seed with maximal aligned blocks covering [0, total).
        start = 0
        while start < total_frames:
            order = max_order - 1
            while order > 0 and (start % (1 << order) != 0 or start + (1 << order) > total_frames):
                order -= 1
            self._insert_free(start, order)
            start += 1 << order

    def _insert_free(self, start: int, order: int) -> None:
        self.free_lists[order].add(start)
        self._block_order[start] = order
        self.free_frames += 1 << order

    def _remove_free(self, start: int, order: int) -> None:
        self.free_lists[order].discard(start)
        del self._block_order[start]
        self.free_frames -= 1 << order

    def alloc_block(self, order: int, on_split=None) -> int:
        """Take a free block of the given order, splitting larger ones.

        on_split(parent_start, child_order) is called for each split so the
        owner can propagate tracking data to both halves.
        """
        if order >= self.max_order:
            raise EngineBug(f"order {order} too large")
        cur = order
        while cur < self.max_order and not self.free_lists[cur]:
            cur += 1
        if cur == self.max_order:
            raise MemoryExhausted(f"no free block of order >= {order}")
        start = min(self.free_lists[cur])
        self._remove_free(start, cur)
        while cur > order:
            cur -= 1
            if on_split is not None:
                on_split(start, cur)
            self._insert_free(start + (1 << cur), cur)
        return start

    def free_block(self, start: int, order: int, on_merge=None) -> None:
        """Return a block, merging with its buddy recursively while possible.

        on_merge(a_start, b_start, order, merged_start) runs per merge step.
        """
        if start in self._block_order:
            raise EngineBug(f"double free of block {start}")
        while order < self.max_order - 1:
            buddy = start ^ (1 << order)
            if self._block_order.get(buddy) != order or buddy + (1 << order) > self.total_frames:
                break
            self._remove_free(buddy, order)
            merged = min(start, buddy)
            if on_merge is not None:
                on_merge(start, buddy, order, merged)
            start = merged
            order += 1
        self._insert_free(start, order)

    def free_set(self) -> set[int]:
        """All free frames, expanded from the block map (test oracle hook)."""
        out: set[int] = set()
        for start, order in self._block_order.items():
            out.update(range(start, start + (1 << order)))
        return out


class PhysicalMemory:
    """Buddy + per-CPU LIFO lists + flat tracking-word array.

    The per-CPU lists are what produce recycling: a page freed on a core is
    the first one handed back out on that core.
    """

    def __init__(self, total_frames: int, num_cores: int,
                 batch: int = PCPU_BATCH, high_water: int = PCPU_HIGH_WATER):
        self.buddy = BuddyAllocator(total_frames)
        self.total_frames = total_frames
        self.batch = batch
        self.high_water = high_water
        self.pcpu: list[list[int]] = [[] for _ in range(num_cores)]
        self.tracking: list[int] = [0] * total_frames   # packed TrackingWord per frame
        self.state: list[int] = [ST_BUDDY] * total_frames
        self.allocated = 0

    # -- tracking --------------------------------------------------------

    def get_tracking(self, frame: int) -> TrackingWord:
        return TrackingWord.unpack(self.tracking[frame])

    def set_tracking(self, frame: int, word: TrackingWord) -> None:
        self.tracking[frame] = word.pack()

    def _on_split(self, parent_start: int, child_order: int) -> None:
        # Both halves inherit the parent's tracking data.
        self.tracking[parent_start + (1 << child_order)] = self.tracking[parent_start]

    def _on_merge(self, a_start: int, b_start: int, order: int, merged_start: int) -> None:
        lo, hi = min(a_start, b_start), max(a_start, b_start)
        word = merge_tracking(TrackingWord.unpack(self.tracking[lo]),
                              TrackingWord.unpack(self.tracking[hi]))
        self.tracking[merged_start] = word.pack()

    # -- free-frame accounting -------------------------------------------

    @property
    def free_frames(self) -> int:
        return self.buddy.free_frames + sum(len(lst) for lst in self.pcpu)

    # -- fast path --------------------------------------------------------

    def alloc_page(self, core: int) -> int:
        """Order-0 allocation from the core's list (LIFO), refilling on empty.

        Tracking is not touched here; the recycling decision happens at the
        caller via the allocation-time policy.
        """
        lst = self.pcpu[core]
        if not lst:
            self.refill_percpu(core)
            lst = self.pcpu[core]
        frame = lst.pop()
        self.state[frame] = ST_ALLOCATED
        self.allocated += 1
        return frame

    def free_page(self, core: int, frame: int) -> None:
        if self.state[frame] != ST_ALLOCATED:
            raise EngineBug(f"double free of frame {frame}")
        self.state[frame] = ST_PCPU
        self.allocated -= 1
        lst = self.pcpu[core]
        lst.append(frame)
        if len(lst) > self.high_water:
            # Drain the cold (oldest) end back into the buddy.
            overflow = lst[: self.batch]
            del lst[: self.batch]
            for f in overflow:
                self.state[f] = ST_BUDDY
                self.buddy.free_block(f, 0, self._on_merge)

    def refill_percpu(self, core: int) -> int:
        """Slow path: move one batch of order-0 frames from the buddy.

        When the buddy is empty, pages are taken from other cores' lists
        instead (the last resort of the real fast-path allocator).
        """
        lst = self.pcpu[core]
        moved = 0
        want = min(self.batch, self.buddy.free_frames)
        while moved < want:
            frame = self.buddy.alloc_block(0, self._on_split)
            self.state[frame] = ST_PCPU
            lst.append(frame)
            moved += 1
        if moved == 0:
            moved = self._steal_percpu(core)
        if moved == 0:
            raise MemoryExhausted("no free frames in buddy or any per-CPU list")
        return moved

    def _steal_percpu(self, core: int) -> int:
        donor = -1
        best = 0
        for c, other in enumerate(self.pcpu):
            if c != core and len(other) > best:
                donor, best = c, len(other)
        if donor < 0:
            return 0
        take = max(1, best // 2)
        stolen = self.pcpu[donor][:take]
        del self.pcpu[donor][:take]
        self.pcpu[core].extend(stolen)
        return take
