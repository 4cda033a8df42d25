"""The simulated kernel: processes, mmap/munmap, faults, accesses, fork,
migration, and the recycling-aware release/allocation paths.

A Machine is synchronous: every operation runs to completion when called
and charges tick costs through an injected hook, so the same model drives
both the event engine and the checker's direct-execution explorer.
"""
from __future__ import annotations

from typing import Optional

from .allocator import PhysicalMemory, TrackingWord
from .checker import ShadowChecker
from .engine import CostModel, MemoryExhausted, ScenarioError
from .fpr import AllocAction, RecyclingPolicy
from .metrics import Metrics
from .shootdown import (FULL_FLUSH_THRESHOLD, GlobalCounter,
                        ShootdownController, ShootdownRequest)
from .tlb import Tlb, TlbEntry
from .vmem import (ANON, FILE_PRIVATE, FILE_SHARED, AddressSpace, CacheEntry,
                   FileObject, Pte, Vma)

DEFAULT_DEVICES = {
    # name -> (read ticks, write ticks); ratios approximate real media with
    # compute_op = 1 tick.
    "nullblk": (0, 0),
    "pmem": (300, 300),
    "optane": (10_000, 10_000),
    "nvme": (80_000, 80_000),
}


class Machine:
    def __init__(self, num_cores: int, total_frames: int,
                 costs: Optional[CostModel] = None,
                 policy: Optional[RecyclingPolicy] = None,
                 va_iteration: bool = True,
                 tracking_hooks: bool = True,
                 tlb_capacity: int = 2048,
                 devices: Optional[dict] = None,
                 va_ceiling: Optional[int] = None,
                 pcpu_batch: Optional[int] = None,
                 pcpu_high: Optional[int] = None,
                 flush_threshold: int = FULL_FLUSH_THRESHOLD,
                 counter_wrap_at: Optional[int] = None):
        self.num_cores = num_cores
        self.costs = costs or CostModel()
        self.policy = policy or RecyclingPolicy()
        self.va_iteration = va_iteration
        # With hooks off the allocator's tracking words are never written and
        # every release takes the default path (transparency baseline).
        self.tracking_hooks = tracking_hooks
        self.va_ceiling = va_ceiling
        self.devices = dict(DEFAULT_DEVICES)
        if devices:
            self.devices.update(devices)

        phys_kw = {}
        if pcpu_batch is not None:
            phys_kw["batch"] = pcpu_batch
        if pcpu_high is not None:
            phys_kw["high_water"] = pcpu_high
        self.phys = PhysicalMemory(total_frames, num_cores, **phys_kw)
        self.tlbs = [Tlb(tlb_capacity) for _ in range(num_cores)]
        self.metrics = Metrics()
        self.checker = ShadowChecker(self.metrics, self.phys)
        self.core_in_kernel = [False] * num_cores
        self.flush_threshold = flush_threshold
        counter_kw = {"wrap_at": counter_wrap_at} if counter_wrap_at else {}
        self.counter = GlobalCounter(**counter_kw)
        self.shootdowns = ShootdownController(
            self.tlbs, lambda c: self.core_in_kernel[c], self._charge_hook,
            self.costs, self.metrics, self.counter)
        self.shootdowns.observers.append(self._on_shootdown_event)

        self.spaces: dict[int, AddressSpace] = {}
        self.files: dict[int, FileObject] = {}
        self.rmap: dict[tuple[int, int], set[tuple[int, int]]] = {}  # (fid, off) -> {(pid, va)}
        self._next_pid = 1
        self._next_fid = 1

        self._charge = lambda core, ticks: None
        self.kswapd = None            # attached by kswapd.Kswapd
        self.trace = lambda core, kind, details="": None
        self.now = lambda: 0

    # -- wiring -------------------------------------------------------------

    def bind_engine(self, engine) -> None:
        self._charge = engine.charge
        self.trace = engine.trace
        self.now = lambda: engine.now

    def _charge_hook(self, core: int, ticks: int) -> None:
        self._charge(core, ticks)

    def set_core_phase(self, core: int, in_kernel: bool) -> None:
        self.core_in_kernel[core] = in_kernel

    def _on_shootdown_event(self, kind: str, request, immediate, lazy) -> None:
        if kind != "counter_wrap" or not self.tracking_hooks:
            return
        # 40-bit version wrap: the wrapping shootdown was machine-wide, so
        # every stale entry is gone; restart all stamps from zero.
        for frame in range(self.phys.total_frames):
            word = self.phys.get_tracking(frame)
            if word.version:
                self.phys.set_tracking(frame, TrackingWord(
                    word.context_id, 0, word.always_shootdown))

    # -- processes and files -------------------------------------------------

    def create_process(self, parent_pid: int = 0, uid: int = 1) -> int:
        pid = self._next_pid
        self._next_pid += 1
        kwargs = {"va_ceiling": self.va_ceiling} if self.va_ceiling else {}
        self.spaces[pid] = AddressSpace(pid, parent_pid, uid, **kwargs)
        return pid

    def attach_core(self, pid: int, core: int) -> None:
        self.spaces[pid].cpu_mask.add(core)

    def create_file(self, size_pages: int, device: str = "nullblk") -> int:
        if device not in self.devices:
            raise ScenarioError(f"unknown device profile {device!r}")
        fid = self._next_fid
        self._next_fid += 1
        self.files[fid] = FileObject(fid, size_pages, device)
        return fid

    def _device_cost(self, fid: int, write: bool) -> int:
        read, wr = self.devices[self.files[fid].device]
        return wr if write else read

    # -- context derivation ----------------------------------------------------

    def vma_context(self, space: AddressSpace, vma: Vma) -> int:
        if not self.tracking_hooks or not vma.fpr:
            return 0
        return self.policy.derive_context_id(
            space.pid, space.parent_pid, space.uid, vma.mmap_id, vma.fpr)

    # -- allocation with recycling decision -------------------------------------

    def alloc_frame(self, core: int, ctx: int, identity: tuple) -> int:
        try:
            frame = self.phys.alloc_page(core)
        except MemoryExhausted:
            self._direct_reclaim(core)
            frame = self.phys.alloc_page(core)
        if self.tracking_hooks:
            word = self.phys.get_tracking(frame)
            decision = self.policy.decide_on_alloc(word, ctx, self.counter.value)
            if decision.action is AllocAction.GLOBAL_SHOOTDOWN:
                self.shootdowns.initiate(ShootdownRequest(
                    initiator=core, targets=frozenset(range(self.num_cores)),
                    scope_full=True, reason="fpr_context_exit"))
            self.phys.set_tracking(frame, decision.new_tracking)
        self.checker.frame_alloc(frame, identity, self._frame_ctx(frame))
        self._pressure_check()
        return frame

    def _frame_ctx(self, frame: int) -> int:
        return self.phys.get_tracking(frame).context_id

    def release_frame(self, core: int, frame: int) -> bool:
        """Free a frame through the recycling release rule.

        Returns True when the default (send) path applies; tracked frames
        skip and get the current counter stamped into their version.
        """
        send = True
        if self.tracking_hooks:
            word = self.phys.get_tracking(frame)
            send, new_word = self.policy.decide_on_unmap(word, self.counter.value)
            self.phys.set_tracking(frame, new_word)
        self.checker.frame_free(frame, self._frame_ctx(frame))
        self.phys.free_page(core, frame)
        self._pressure_check()
        return send

    def _pressure_check(self) -> None:
        if self.kswapd is not None:
            self.kswapd.notice_pressure(self.phys.free_frames)

    def _direct_reclaim(self, core: int) -> None:
        if self.kswapd is None:
            raise MemoryExhausted("out of frames and no reclaim daemon configured")
        while self.phys.free_frames == 0:
            if self.kswapd.reclaim_step(core) == 0:
                raise MemoryExhausted("nothing left to evict")

    # -- mmap / munmap ---------------------------------------------------------

    def sys_mmap(self, pid: int, core: int, length: int, backing: str = ANON,
                 fid: int = 0, offset: int = 0, fpr: bool = False,
                 fixed_va: Optional[int] = None) -> int:
        space = self.spaces[pid]
        self._charge(core, self.costs.syscall_overhead)
        if backing != ANON:
            if fid not in self.files:
                raise ScenarioError(f"no such file {fid}")
            if offset + length > self.files[fid].size_pages:
                raise ScenarioError("mapping extends past end of file")
        if fixed_va is not None:
            if space.overlaps(fixed_va, length):
                raise ScenarioError(f"fixed mapping overlaps a live vma at {fixed_va:#x}")
            stale = sorted(v for v in space.fpr_shadow
                           if fixed_va <= v < fixed_va + length)
            if stale:
                # Comply with the forced address: flush the stale aliases.
                self.shootdowns.initiate(ShootdownRequest(
                    initiator=core, targets=frozenset(space.cpu_mask),
                    scope_full=False, pages=tuple((pid, v) for v in stale),
                    reason="fixed_addr", threshold=self.flush_threshold))
                space.fpr_shadow.difference_update(stale)
            start = fixed_va
        else:
            start, wrapped = space.choose_va(length, self.va_iteration)
            if wrapped:
                self.shootdowns.initiate(ShootdownRequest(
                    initiator=core, targets=frozenset(space.cpu_mask),
                    scope_full=True, reason="hint_wrap"))
                space.fpr_shadow.clear()
        vma = Vma(start, length, backing, fid, offset,
                  fpr=fpr and self.policy.enabled, mmap_id=space.mmap_counter)
        space.mmap_counter += 1
        space.add_vma(vma)
        self.trace(core, "mmap", f"pid={pid} va={start:#x} len={length} fpr={int(vma.fpr)}")
        return start

    def sys_munmap(self, pid: int, core: int, va: int,
                   length: Optional[int] = None) -> None:
        space = self.spaces[pid]
        self._charge(core, self.costs.syscall_overhead)
        vma = space.vmas.get(va)
        if vma is None or (length is not None and length != vma.length):
            raise ScenarioError(
                f"munmap must cover exactly one vma (pid={pid} va={va:#x})")
        self._teardown_vma(space, core, vma, batch=None)
        self.trace(core, "munmap", f"pid={pid} va={va:#x} len={vma.length}")

    def _teardown_vma(self, space: AddressSpace, core: int, vma: Vma,
                      batch: Optional[dict]) -> None:
        """Remove one vma. With batch=None the shootdown/free happens here;
        otherwise releases accumulate into the caller's batch (process exit).
        """
        own = batch is None
        acc = batch if batch is not None else {"pages": [], "frees": [], "local": []}
        for va_p in range(vma.start, vma.end):
            pte = space.page_table.get(va_p)
            if pte is None:
                continue
            del space.page_table[va_p]
            self.checker.pte_remove(space.pid, va_p)
            acc["local"].append((space.pid, va_p))
            if pte.anon:
                send = self._release_decision(space, va_p, pte.pfn, acc)
                acc["frees"].append((pte.pfn, send))
            else:
                fid, off = vma.file_page(va_p)
                self._unmap_cache_page(space, core, va_p, pte.pfn, fid, off, acc)
        space.remove_vma(vma.start)
        if own:
            self._flush_release_batch(space, core, acc, reason="munmap")

    def _release_decision(self, space: AddressSpace, va_p: int, frame: int,
                          acc: dict) -> bool:
        send = True
        if self.tracking_hooks:
            word = self.phys.get_tracking(frame)
            send, new_word = self.policy.decide_on_unmap(word, self.counter.value)
            self.phys.set_tracking(frame, new_word)
        if send:
            acc["pages"].append((space.pid, va_p))
        else:
            self.metrics.shootdowns_skipped_fpr += 1
            space.fpr_shadow.add(va_p)
        return send

    def _unmap_cache_page(self, space: AddressSpace, core: int, va_p: int,
                          frame: int, fid: int, off: int, acc: dict) -> None:
        entry = self.files[fid].cache[off]
        self.rmap[(fid, off)].discard((space.pid, va_p))
        entry.mapcount -= 1
        if entry.mapcount > 0:
            # Frame stays cached and mapped elsewhere; only our stale TLB
            # entries matter. Skip rule still keys on the tracking id.
            skip = self.tracking_hooks and self.phys.get_tracking(frame).recycle
            if skip:
                self.metrics.shootdowns_skipped_fpr += 1
                space.fpr_shadow.add(va_p)
            else:
                acc["pages"].append((space.pid, va_p))
            return
        if entry.dirty:
            self._charge(core, self._device_cost(fid, write=True))
            self.metrics.writebacks += 1
            entry.dirty = False
        del self.files[fid].cache[off]
        del self.rmap[(fid, off)]
        send = self._release_decision(space, va_p, frame, acc)
        acc["frees"].append((frame, send))

    def _flush_release_batch(self, space: AddressSpace, core: int, acc: dict,
                             reason: str) -> None:
        # The unmapping core always drops its own translations for the whole
        # range; only the remote broadcast is subject to the skip decision.
        if acc["local"]:
            if len(acc["local"]) > self.flush_threshold:
                self.tlbs[core].flush_full()
            else:
                self.tlbs[core].flush_range(acc["local"])
        if acc["pages"]:
            self.shootdowns.initiate(ShootdownRequest(
                initiator=core, targets=frozenset(space.cpu_mask) - {core},
                scope_full=False, pages=tuple(acc["pages"]), reason=reason,
                threshold=self.flush_threshold))
        for frame, _send in acc["frees"]:
            self.checker.frame_free(frame, self._frame_ctx(frame))
            self.phys.free_page(core, frame)
        if acc["frees"]:
            self._pressure_check()

    def sys_exit(self, pid: int, core: int) -> None:
        """Tear down every mapping with one batched release."""
        space = self.spaces[pid]
        acc = {"pages": [], "frees": [], "local": []}
        for start in sorted(space.vmas):
            self._teardown_vma(space, core, space.vmas[start], batch=acc)
        self._flush_release_batch(space, core, acc, reason="munmap")
        space.alive = False
        self.trace(core, "exit", f"pid={pid}")

    # -- faults and accesses ------------------------------------------------------

    def _install_pte(self, space: AddressSpace, core: int, va: int, frame: int,
                     writable: bool, anon: bool, fid: int = 0, off: int = 0) -> Pte:
        pte = Pte(frame, writable, anon)
        space.page_table[va] = pte
        self.checker.pte_install(space.pid, va, frame)
        if not anon:
            self.rmap.setdefault((fid, off), set()).add((space.pid, va))
        return pte

    def _tlb_insert(self, core: int, pid: int, va: int, pte: Pte) -> TlbEntry:
        entry = TlbEntry(pid, va, pte.pfn, pte.writable, insertion_tick=self.now(),
                         origin_ctx=self._frame_ctx(pte.pfn),
                         origin_identity=self.checker.identity_of(pte.pfn))
        self.tlbs[core].insert(entry)
        return entry

    def page_fault(self, pid: int, core: int, va: int, is_write: bool) -> Optional[Pte]:
        """Demand fault. Returns the installed PTE, or None on segfault."""
        space = self.spaces[pid]
        vma = space.vma_at(va)
        if vma is None:
            self.metrics.segfaults += 1
            self.trace(core, "segfault", f"pid={pid} va={va:#x}")
            return None
        self.metrics.page_faults += 1
        self._charge(core, self.costs.page_fault_service)
        ctx = self.vma_context(space, vma)

        if vma.backing == ANON:
            frame = self.alloc_frame(core, ctx, ("anon", pid))
            return self._install_pte(space, core, va, frame, writable=True, anon=True)

        fid, off = vma.file_page(va)
        if vma.backing == FILE_PRIVATE and is_write:
            # Private write: load straight into a process-private copy.
            self._charge(core, self._device_cost(fid, write=False))
            frame = self.alloc_frame(core, ctx, ("anon", pid))
            self.metrics.cow_faults += 1
            return self._install_pte(space, core, va, frame, writable=True, anon=True)

        entry = self.files[fid].cached(off)
        if entry is None:
            self._charge(core, self._device_cost(fid, write=False))
            frame = self.alloc_frame(core, ctx, ("pcache", fid, off))
            entry = CacheEntry(frame)
            self.files[fid].cache[off] = entry
            if self.kswapd is not None:
                self.kswapd.note_cached(fid, off)
        entry.mapcount += 1
        writable = vma.backing == FILE_SHARED
        if writable and is_write:
            entry.dirty = True
        return self._install_pte(space, core, va, entry.frame, writable,
                                 anon=False, fid=fid, off=off)

    def _cow_break(self, pid: int, core: int, va: int, old: Pte) -> Pte:
        """Write to a read-only private page: copy into a fresh frame and
        flush the old translation everywhere (the page table changes while
        mapped, so this can never be skipped)."""
        space = self.spaces[pid]
        vma = space.vma_at(va)
        self.metrics.cow_faults += 1
        self.metrics.page_faults += 1
        self._charge(core, self.costs.page_fault_service)
        frame = self.alloc_frame(core, self.vma_context(space, vma), ("anon", pid))
        self.checker.content_copy(old.pfn, frame)
        fid, off = vma.file_page(va)
        entry = self.files[fid].cache[off]
        entry.mapcount -= 1
        self.rmap[(fid, off)].discard((pid, va))
        del space.page_table[va]
        self.checker.pte_remove(pid, va)
        self.shootdowns.initiate(ShootdownRequest(
            initiator=core, targets=frozenset(space.cpu_mask),
            scope_full=False, pages=((pid, va),), reason="migration",
            threshold=self.flush_threshold))
        return self._install_pte(space, core, va, frame, writable=True, anon=True)

    def mem_access(self, pid: int, core: int, va: int, is_write: bool = False) -> str:
        """One user-space memory access; returns the checker's outcome class."""
        if self.shootdowns.has_deferred(core):
            # A core never runs a user access with a pending deferred flush.
            self.shootdowns.on_user_return(core)
        space = self.spaces[pid]
        tlb = self.tlbs[core]
        entry = tlb.lookup(pid, va)
        if entry is not None and (not is_write or entry.writable):
            outcome = self.checker.classify(core, pid, va, entry.pfn, "tlb_hit",
                                            entry, space.page_table.get(va))
            self._note_write(space, va, entry.pfn, is_write)
            return outcome

        self._charge(core, self.costs.tlb_miss_walk)
        pte = space.page_table.get(va)
        if pte is not None and is_write and not pte.writable:
            pte = self._cow_break(pid, core, va, pte)
        elif pte is None:
            pte = self.page_fault(pid, core, va, is_write)
            if pte is None:
                return "segfault"
        new_entry = self._tlb_insert(core, pid, va, pte)
        outcome = self.checker.classify(core, pid, va, pte.pfn, "walk",
                                        new_entry, pte)
        self._note_write(space, va, pte.pfn, is_write)
        return outcome

    def _note_write(self, space: AddressSpace, va: int, pfn: int, is_write: bool) -> None:
        if not is_write:
            return
        self.checker.content_write(pfn)
        pte = space.page_table.get(va)
        if pte is not None and pte.pfn == pfn and not pte.anon:
            vma = space.vma_at(va)
            if vma is not None and vma.backing == FILE_SHARED:
                fid, off = vma.file_page(va)
                entry = self.files[fid].cached(off)
                if entry is not None and entry.frame == pfn:
                    entry.dirty = True

    # -- fork -------------------------------------------------------------------

    def sys_fork(self, parent_pid: int, core: int, uid: Optional[int] = None) -> int:
        """Duplicate the address space. Shared file pages are shared; private
        and anonymous pages re-fault in the child. Under per-process or
        per-mmap schemes the parent's recycling pages get one shootdown
        before parent and child count as separate contexts."""
        parent = self.spaces[parent_pid]
        self._charge(core, self.costs.syscall_overhead)
        child_pid = self.create_process(parent_pid,
                                        parent.uid if uid is None else uid)
        child = self.spaces[child_pid]
        child.mmap_counter = parent.mmap_counter
        child.next_va_hint = parent.next_va_hint
        fpr_pages: list[tuple[int, int]] = []
        for start in sorted(parent.vmas):
            vma = parent.vmas[start]
            child.add_vma(Vma(vma.start, vma.length, vma.backing, vma.file_id,
                              vma.file_offset, vma.fpr, vma.mmap_id))
            for va_p in range(vma.start, vma.end):
                pte = parent.page_table.get(va_p)
                if pte is None:
                    continue
                if vma.fpr:
                    fpr_pages.append((parent_pid, va_p))
                if not pte.anon and vma.backing == FILE_SHARED:
                    fid, off = vma.file_page(va_p)
                    self.files[fid].cache[off].mapcount += 1
                    self._install_pte(child, core, va_p, pte.pfn, pte.writable,
                                      anon=False, fid=fid, off=off)
        if (self.tracking_hooks and fpr_pages
                and self.policy.scheme.value in ("per-process", "per-mmap")):
            self.shootdowns.initiate(ShootdownRequest(
                initiator=core, targets=frozenset(parent.cpu_mask),
                scope_full=False, pages=tuple(fpr_pages), reason="fork_exit",
                threshold=self.flush_threshold))
        self.trace(core, "fork", f"parent={parent_pid} child={child_pid}")
        return child_pid

    # -- migration ------------------------------------------------------------------

    def migrate_page(self, pid: int, core: int, va: int) -> int:
        """Move one mapped page to a fresh frame (generic NUMA-style hook)."""
        space = self.spaces[pid]
        pte = space.page_table.get(va)
        if pte is None:
            raise ScenarioError(f"migrate of unmapped page {va:#x}")
        src = pte.pfn
        vma = space.vma_at(va)
        # The target is reallocated *into the source page's context*: it will
        # carry the source's tracking data, so leaving its own old context
        # must be decided against the context it is about to join.
        src_word = self.phys.get_tracking(src)
        ctx = src_word.context_id if self.tracking_hooks else 0
        dst = self.alloc_frame(core, ctx, self.checker.identity_of(src))
        if self.tracking_hooks and src_word.recycle:
            self.phys.set_tracking(dst, src_word)
        self.checker.frame_migrate(src, dst, self._frame_ctx(dst))

        moved: list[tuple[int, int]] = []
        affected = [space]
        if pte.anon:
            space.page_table[va] = Pte(dst, pte.writable, True)
            self.checker.pte_move(pid, va, dst)
            moved.append((pid, va))
        else:
            fid, off = vma.file_page(va)
            entry = self.files[fid].cache[off]
            entry.frame = dst
            for m_pid, m_va in sorted(self.rmap[(fid, off)]):
                m_space = self.spaces[m_pid]
                m_pte = m_space.page_table[m_va]
                m_space.page_table[m_va] = Pte(dst, m_pte.writable, False)
                self.checker.pte_move(m_pid, m_va, dst)
                moved.append((m_pid, m_va))
                if m_space is not space:
                    affected.append(m_space)
        self.shootdowns.initiate(ShootdownRequest(
            initiator=core, targets=self.shootdowns.mask_for(affected),
            scope_full=False, pages=tuple(moved), reason="migration",
            threshold=self.flush_threshold))
        # Source frame drains through the standard release path (stamped
        # like an evicted page); the migration flush above covered it.
        if self.tracking_hooks:
            _send, new_word = self.policy.decide_on_unmap(
                self.phys.get_tracking(src), self.counter.value)
            self.phys.set_tracking(src, new_word)
        self.checker.frame_free(src, self._frame_ctx(src))
        self.phys.free_page(core, src)
        self._pressure_check()
        return dst
