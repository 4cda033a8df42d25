"""Per-process virtual memory structures: VMAs, page tables, files, cache.

All addresses are page-granular (page size 4096 bytes); a Va here is a
virtual page number and a Pfn a physical frame number.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .engine import ScenarioError

VA_FLOOR = 0x100                 # first page the kernel hands out
DEFAULT_VA_CEILING = 1 << 36     # wrap point for the next-va hint (pages)

ANON = "anon"
FILE_SHARED = "file_shared"
FILE_PRIVATE = "file_private"


@dataclass
class Vma:
    start: int
    length: int                  # pages
    backing: str                 # ANON / FILE_SHARED / FILE_PRIVATE
    file_id: int = 0
    file_offset: int = 0         # pages into the file
    fpr: bool = False
    mmap_id: int = 0             # per-process mmap counter value

    def __post_init__(self):
        if self.length < 1:
            raise ScenarioError("mapping length must be >= 1 page")

    @property
    def end(self) -> int:
        return self.start + self.length

    def contains(self, va: int) -> bool:
        return self.start <= va < self.end

    def file_page(self, va: int) -> tuple[int, int]:
        return self.file_id, self.file_offset + (va - self.start)


@dataclass
class Pte:
    pfn: int
    writable: bool
    # True when the frame belongs to this process (anon or COW copy) rather
    # than to the page cache.
    anon: bool


class AddressSpace:
    """One process: VMAs, page table, next-va hint, cpu mask."""

    def __init__(self, pid: int, parent_pid: int = 0, uid: int = 1,
                 va_ceiling: int = DEFAULT_VA_CEILING):
        if pid <= 0:
            raise ScenarioError("pid 0 is reserved")
        self.pid = pid
        self.parent_pid = parent_pid
        self.uid = uid
        self.vmas: dict[int, Vma] = {}          # keyed by start page
        self.page_table: dict[int, Pte] = {}
        self.next_va_hint = VA_FLOOR
        self.va_ceiling = va_ceiling
        self.cpu_mask: set[int] = set()
        self.mmap_counter = 0
        self.alive = True
        # Pages unmapped from FPR mappings without a flush: candidate stale
        # aliases that a MAP_FIXED request must shoot down first.
        self.fpr_shadow: set[int] = set()

    # -- lookup ------------------------------------------------------------

    def vma_at(self, va: int) -> Optional[Vma]:
        for vma in self.vmas.values():
            if vma.contains(va):
                return vma
        return None

    def overlaps(self, start: int, length: int) -> bool:
        end = start + length
        return any(vma.start < end and start < vma.end for vma in self.vmas.values())

    # -- va assignment -------------------------------------------------------

    def choose_va(self, length: int, va_iteration: bool) -> tuple[int, bool]:
        """Pick a start page for a new mapping; returns (va, hint_wrapped).

        With va iteration the search starts at the monotone hint so freed
        addresses are not handed out again until the hint wraps; without it
        the kernel reuses the lowest free range (first fit from the floor).
        """
        wrapped = False
        if va_iteration:
            start = self._first_fit(max(self.next_va_hint, VA_FLOOR), length)
            if start + length > self.va_ceiling:
                wrapped = True
                start = self._first_fit(VA_FLOOR, length)
                if start + length > self.va_ceiling:
                    raise ScenarioError("virtual address space exhausted")
            self.next_va_hint = start + length
        else:
            start = self._first_fit(VA_FLOOR, length)
            if start + length > self.va_ceiling:
                raise ScenarioError("virtual address space exhausted")
        return start, wrapped

    def _first_fit(self, from_va: int, length: int) -> int:
        candidate = from_va
        for vma in sorted(self.vmas.values(), key=lambda v: v.start):
            if vma.end <= candidate:
                continue
            if vma.start >= candidate + length:
                break
            candidate = vma.end
        return candidate

    def add_vma(self, vma: Vma) -> None:
        if self.overlaps(vma.start, vma.length):
            raise ScenarioError(f"mapping overlap at page {vma.start:#x}")
        self.vmas[vma.start] = vma

    def remove_vma(self, start: int) -> Vma:
        return self.vmas.pop(start)


@dataclass
class CacheEntry:
    frame: int
    dirty: bool = False
    mapcount: int = 0


class FileObject:
    """A file (or block device) with its resident page-cache pages."""

    def __init__(self, file_id: int, size_pages: int, device: str = "nullblk"):
        self.file_id = file_id
        self.size_pages = size_pages
        self.device = device
        self.cache: dict[int, CacheEntry] = {}   # offset -> entry

    def cached(self, offset: int) -> Optional[CacheEntry]:
        return self.cache.get(offset)
