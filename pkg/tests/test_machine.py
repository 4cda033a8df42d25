import pytest

from fprsim.engine import CostModel, ScenarioError
from fprsim.fpr import ContextScheme, RecyclingPolicy
from fprsim.machine import Machine
from fprsim.vmem import ANON, FILE_PRIVATE, FILE_SHARED, VA_FLOOR


class ChargeLog:
    def __init__(self):
        self.items = []
        self.now = 0

    def charge(self, core, ticks):
        self.items.append((core, ticks))

    def trace(self, core, kind, details=""):
        pass

    def total(self, core=None):
        return sum(t for c, t in self.items if core is None or c == core)


def machine(cores=4, frames=256, scheme=ContextScheme.PER_PROCESS, **kw):
    mc = Machine(cores, frames, policy=RecyclingPolicy(scheme=scheme), **kw)
    log = ChargeLog()
    mc.bind_engine(log)
    return mc, log


def one_proc(mc, cores):
    pid = mc.create_process()
    for c in cores:
        mc.attach_core(pid, c)
    return pid


# -- mmap ----------------------------------------------------------------------


def test_mmap_va_iteration_strictly_increases():
    mc, _ = machine()
    pid = one_proc(mc, [0])
    a = mc.sys_mmap(pid, 0, 1, ANON)
    mc.sys_munmap(pid, 0, a)
    b = mc.sys_mmap(pid, 0, 1, ANON)
    assert b > a


def test_mmap_reuses_va_without_iteration():
    mc, _ = machine(va_iteration=False)
    pid = one_proc(mc, [0])
    a = mc.sys_mmap(pid, 0, 1, ANON)
    mc.sys_munmap(pid, 0, a)
    b = mc.sys_mmap(pid, 0, 1, ANON)
    assert b == a


def test_no_va_reassigned_between_wraps():
    mc, _ = machine(frames=512)
    pid = one_proc(mc, [0])
    seen = set()
    for i in range(200):
        va = mc.sys_mmap(pid, 0, 1 + i % 3, ANON)
        span = set(range(va, va + 1 + i % 3))
        assert not (span & seen)
        seen |= span
        if i % 2 == 0:
            mc.sys_munmap(pid, 0, va)


def test_fixed_addr_over_fpr_unmapped_range_sends_comply_shootdown():
    mc, _ = machine()
    pid = one_proc(mc, [0, 1])
    va = mc.sys_mmap(pid, 0, 1, ANON, fpr=True)
    mc.mem_access(pid, 0, va)
    mc.sys_munmap(pid, 0, va)           # skipped: stale alias recorded
    assert va in mc.spaces[pid].fpr_shadow
    sent_before = mc.metrics.shootdowns_sent
    got = mc.sys_mmap(pid, 0, 1, ANON, fixed_va=va)
    assert got == va
    assert mc.metrics.shootdowns_sent == sent_before + 1
    assert mc.metrics.shootdowns_other == 1   # fixed_addr reason
    assert va not in mc.spaces[pid].fpr_shadow


def test_fixed_addr_overlap_with_live_vma_rejected():
    mc, _ = machine()
    pid = one_proc(mc, [0])
    va = mc.sys_mmap(pid, 0, 2, ANON)
    with pytest.raises(ScenarioError):
        mc.sys_mmap(pid, 0, 1, ANON, fixed_va=va + 1)


def test_hint_wrap_flushes_and_restarts_at_floor():
    mc, _ = machine(va_ceiling=VA_FLOOR + 8)
    pid = one_proc(mc, [0, 1])
    vas = [mc.sys_mmap(pid, 0, 2, ANON) for _ in range(3)]
    for va in vas:
        mc.sys_munmap(pid, 0, va)
    full_before = mc.tlbs[1].full_flushes
    wrapped = mc.sys_mmap(pid, 0, 4, ANON)   # hint at floor+6, needs 4 > ceiling
    assert wrapped == VA_FLOOR
    assert mc.metrics.shootdowns_other >= 1
    assert mc.tlbs[1].full_flushes == full_before + 1


# -- munmap ---------------------------------------------------------------------


def test_baseline_munmap_one_batch_three_remote_ipis():
    mc, log = machine(cores=4)
    pid = one_proc(mc, [0, 1, 2, 3])
    va = mc.sys_mmap(pid, 0, 1, ANON)
    mc.mem_access(pid, 0, va)
    log.items.clear()
    mc.sys_munmap(pid, 0, va)
    m = mc.metrics
    assert m.shootdowns_sent == 1
    assert m.shootdowns_received == 3
    receives = [c for c, t in log.items if t == mc.costs.ipi_receive]
    assert sorted(receives) == [1, 2, 3]


def test_fpr_munmap_skips_shootdown_entirely():
    mc, _ = machine(cores=4)
    pid = one_proc(mc, [0, 1, 2, 3])
    for _ in range(5):
        va = mc.sys_mmap(pid, 0, 1, ANON, fpr=True)
        mc.mem_access(pid, 0, va)
        mc.sys_munmap(pid, 0, va)
    assert mc.metrics.shootdowns_sent == 0
    assert mc.metrics.shootdowns_skipped_fpr == 5


def test_munmap_never_faulted_mapping_no_shootdown_no_free():
    mc, _ = machine()
    pid = one_proc(mc, [0])
    free_before = mc.phys.free_frames
    va = mc.sys_mmap(pid, 0, 4, ANON)
    mc.sys_munmap(pid, 0, va)
    assert mc.metrics.shootdowns_sent == 0
    assert mc.phys.free_frames == free_before


def test_munmap_unmapped_range_errors():
    mc, _ = machine()
    pid = one_proc(mc, [0])
    with pytest.raises(ScenarioError):
        mc.sys_munmap(pid, 0, 0x500)


def test_partial_munmap_rejected():
    mc, _ = machine()
    pid = one_proc(mc, [0])
    va = mc.sys_mmap(pid, 0, 4, ANON)
    with pytest.raises(ScenarioError):
        mc.sys_munmap(pid, 0, va, length=2)


def test_munmap_frees_frames_for_recycling():
    mc, _ = machine()
    pid = one_proc(mc, [0])
    va = mc.sys_mmap(pid, 0, 1, ANON, fpr=True)
    mc.mem_access(pid, 0, va)
    frame = mc.spaces[pid].page_table[va].pfn
    mc.sys_munmap(pid, 0, va)
    vb = mc.sys_mmap(pid, 0, 1, ANON, fpr=True)
    mc.mem_access(pid, 0, vb)
    assert mc.spaces[pid].page_table[vb].pfn == frame


# -- faults and accesses -----------------------------------------------------------


def test_access_costs_follow_cost_model():
    mc, log = machine()
    pid = one_proc(mc, [0])
    va = mc.sys_mmap(pid, 0, 1, ANON)
    log.items.clear()
    mc.mem_access(pid, 0, va)      # miss + fault on nullblk-free anon
    cm = CostModel()
    assert log.total() == cm.tlb_miss_walk + cm.page_fault_service
    log.items.clear()
    mc.mem_access(pid, 0, va)      # TLB hit: free
    assert log.total() == 0


def test_miss_with_pte_costs_only_walk():
    mc, log = machine()
    pid = one_proc(mc, [0, 1])
    va = mc.sys_mmap(pid, 0, 1, ANON)
    mc.mem_access(pid, 0, va)
    log.items.clear()
    out = mc.mem_access(pid, 1, va)   # other core: walk, no fault
    assert out == "fresh"
    assert log.total() == CostModel().tlb_miss_walk


def test_device_read_charged_on_cache_miss():
    mc, log = machine(devices={"optane": (10_000, 10_000)})
    pid = one_proc(mc, [0])
    fid = mc.create_file(8, "optane")
    va = mc.sys_mmap(pid, 0, 1, FILE_SHARED, fid, 0)
    log.items.clear()
    mc.mem_access(pid, 0, va)
    cm = CostModel()
    assert log.total() == cm.tlb_miss_walk + cm.page_fault_service + 10_000


def test_page_cache_shared_across_mappings():
    mc, _ = machine()
    pid = one_proc(mc, [0])
    fid = mc.create_file(8)
    va1 = mc.sys_mmap(pid, 0, 1, FILE_SHARED, fid, 3)
    va2 = mc.sys_mmap(pid, 0, 1, FILE_SHARED, fid, 3)
    mc.mem_access(pid, 0, va1)
    faults_before = mc.metrics.page_faults
    mc.mem_access(pid, 0, va2)
    assert mc.metrics.page_faults == faults_before + 1   # fault, but cache hit
    assert mc.spaces[pid].page_table[va1].pfn == mc.spaces[pid].page_table[va2].pfn


def test_private_write_cow_leaves_original_untouched():
    mc, _ = machine()
    pid = one_proc(mc, [0])
    fid = mc.create_file(8)
    shared = mc.sys_mmap(pid, 0, 1, FILE_SHARED, fid, 0)
    private = mc.sys_mmap(pid, 0, 1, FILE_PRIVATE, fid, 0)
    mc.mem_access(pid, 0, shared)
    cache_frame = mc.spaces[pid].page_table[shared].pfn
    stamp_before = mc.checker.content_version[cache_frame]
    mc.mem_access(pid, 0, private)               # read: shares the cache frame
    assert mc.spaces[pid].page_table[private].pfn == cache_frame
    mc.mem_access(pid, 0, private, is_write=True)  # COW break
    new_frame = mc.spaces[pid].page_table[private].pfn
    assert new_frame != cache_frame
    assert mc.checker.content_version[cache_frame] == stamp_before
    assert mc.metrics.cow_faults == 1


def test_cow_break_flushes_old_translation_everywhere():
    mc, _ = machine()
    pid = one_proc(mc, [0, 1])
    fid = mc.create_file(4)
    private = mc.sys_mmap(pid, 0, 1, FILE_PRIVATE, fid, 0)
    mc.mem_access(pid, 0, private)
    mc.mem_access(pid, 1, private)     # core 1 caches the read-only mapping
    mc.mem_access(pid, 0, private, is_write=True)
    out = mc.mem_access(pid, 1, private)
    assert out == "fresh"              # stale entry was flushed, re-walked


def test_shared_write_marks_dirty_and_writes_back_once():
    mc, log = machine(devices={"pmem": (300, 300)})
    pid = one_proc(mc, [0])
    fid = mc.create_file(4, "pmem")
    va = mc.sys_mmap(pid, 0, 1, FILE_SHARED, fid, 0)
    mc.mem_access(pid, 0, va, is_write=True)
    log.items.clear()
    mc.sys_munmap(pid, 0, va)
    assert mc.metrics.writebacks == 1
    assert (0, 300) in log.items       # one device write


def test_segfault_outside_any_vma():
    mc, _ = machine()
    pid = one_proc(mc, [0])
    out = mc.mem_access(pid, 0, 0x9999)
    assert out == "segfault"
    assert mc.metrics.segfaults == 1


def test_stale_hit_after_in_context_recycle_is_benign():
    mc, _ = machine(cores=2)
    pid = one_proc(mc, [0, 1])
    va = mc.sys_mmap(pid, 0, 1, ANON, fpr=True)
    mc.mem_access(pid, 0, va)
    mc.mem_access(pid, 1, va)          # core 1 now caches the translation
    mc.sys_munmap(pid, 0, va)          # skipped: core 1 entry goes stale
    out = mc.mem_access(pid, 1, va)
    assert out == "benign_stale"
    assert mc.metrics.accesses_benign_stale == 1
    assert mc.metrics.security_violations == 0


def test_cpu_mask_monotone():
    mc, _ = machine()
    pid = one_proc(mc, [0])
    assert mc.spaces[pid].cpu_mask == {0}
    mc.attach_core(pid, 2)
    assert mc.spaces[pid].cpu_mask == {0, 2}


# -- fork ---------------------------------------------------------------------------


def fork_rig(scheme):
    mc, _ = machine(cores=4, scheme=scheme)
    pid = one_proc(mc, [0, 1])
    va = mc.sys_mmap(pid, 0, 10, ANON, fpr=True)
    for i in range(10):
        mc.mem_access(pid, 0, va + i)
    return mc, pid


def test_fork_per_parent_scheme_no_shootdown():
    mc, pid = fork_rig(ContextScheme.PER_PARENT)
    sent = mc.metrics.shootdowns_sent
    child = mc.sys_fork(pid, 0)
    assert mc.metrics.shootdowns_sent == sent
    assert mc.spaces[child].parent_pid == pid


def test_fork_per_process_scheme_single_shootdown():
    mc, pid = fork_rig(ContextScheme.PER_PROCESS)
    sent = mc.metrics.shootdowns_sent
    mc.sys_fork(pid, 0)
    assert mc.metrics.shootdowns_sent == sent + 1


def test_fork_without_fpr_mappings_no_shootdown():
    mc, _ = machine(scheme=ContextScheme.PER_PROCESS)
    pid = one_proc(mc, [0])
    va = mc.sys_mmap(pid, 0, 4, ANON)
    mc.mem_access(pid, 0, va)
    sent = mc.metrics.shootdowns_sent
    mc.sys_fork(pid, 0)
    assert mc.metrics.shootdowns_sent == sent


def test_fork_shares_file_pages():
    mc, _ = machine()
    pid = one_proc(mc, [0])
    fid = mc.create_file(4)
    va = mc.sys_mmap(pid, 0, 1, FILE_SHARED, fid, 0)
    mc.mem_access(pid, 0, va)
    child = mc.sys_fork(pid, 0)
    mc.attach_core(child, 1)
    assert mc.spaces[child].page_table[va].pfn == mc.spaces[pid].page_table[va].pfn
    assert mc.files[fid].cache[0].mapcount == 2


# -- migration ------------------------------------------------------------------------


def test_migrate_copies_tracking_and_flushes():
    mc, _ = machine()
    pid = one_proc(mc, [0])
    va = mc.sys_mmap(pid, 0, 1, ANON, fpr=True)
    mc.mem_access(pid, 0, va)
    src = mc.spaces[pid].page_table[va].pfn
    src_word = mc.phys.get_tracking(src)
    assert src_word.recycle
    sent = mc.metrics.shootdowns_sent
    dst = mc.migrate_page(pid, 0, va)
    assert dst != src
    assert mc.spaces[pid].page_table[va].pfn == dst
    assert mc.phys.get_tracking(dst).context_id == src_word.context_id
    assert mc.metrics.shootdowns_sent == sent + 1   # the PTE-change flush
    assert mc.mem_access(pid, 0, va) == "fresh"


def test_migrate_untracked_source_keeps_alloc_decision():
    mc, _ = machine()
    pid = one_proc(mc, [0])
    va = mc.sys_mmap(pid, 0, 1, ANON)   # non-FPR: untracked
    mc.mem_access(pid, 0, va)
    dst = mc.migrate_page(pid, 0, va)
    assert not mc.phys.get_tracking(dst).recycle


def test_version_wrap_resets_stamps():
    # Tiny wrap threshold plus tiny per-CPU lists so frames cross contexts
    # through the buddy and bump the counter until it wraps.
    mc = Machine(2, 128, policy=RecyclingPolicy(scheme=ContextScheme.PER_PROCESS),
                 counter_wrap_at=4, pcpu_batch=1, pcpu_high=1)
    log = ChargeLog()
    mc.bind_engine(log)
    pa = one_proc(mc, [0])
    pb = one_proc(mc, [1])
    for _ in range(10):
        for pid, core in ((pa, 0), (pb, 1)):
            va = mc.sys_mmap(pid, core, 2, ANON, fpr=True)
            mc.mem_access(pid, core, va)
            mc.mem_access(pid, core, va + 1)
            mc.sys_munmap(pid, core, va)
    assert mc.counter.wraps >= 1
    stamps = [mc.phys.get_tracking(f).version for f in range(128)
              if mc.phys.get_tracking(f).recycle]
    assert max(stamps) <= mc.counter.value


def test_flush_threshold_configurable():
    mc, _ = machine(cores=2, flush_threshold=2)
    pid = one_proc(mc, [0, 1])
    va = mc.sys_mmap(pid, 0, 3, ANON)
    for i in range(3):
        mc.mem_access(pid, 1, va + i)
    mc.sys_munmap(pid, 0, va)       # 3 pages > threshold 2: full remote flush
    assert mc.tlbs[1].full_flushes == 1


def test_migrate_dst_leaving_other_context_shoots_then_copies():
    # The destination frame is tracked in another context with a current
    # stamp: its allocation fires one global shootdown, then the source
    # tracking lands on it.
    mc, _ = machine(cores=2)
    pid_a = one_proc(mc, [0])
    pid_b = one_proc(mc, [1])
    va_a = mc.sys_mmap(pid_a, 0, 1, ANON, fpr=True)
    mc.mem_access(pid_a, 0, va_a)
    mc.sys_munmap(pid_a, 0, va_a)       # frame freed, stamped, ctx A, on core 0
    va_b = mc.sys_mmap(pid_b, 1, 1, ANON, fpr=True)
    mc.mem_access(pid_b, 1, va_b)
    exits = mc.metrics.fpr_context_exit_shootdowns
    dst = mc.migrate_page(pid_b, 0, va_b)   # dst allocated from core 0's list
    assert mc.metrics.fpr_context_exit_shootdowns == exits + 1
    assert mc.phys.get_tracking(dst).context_id == \
        mc.phys.get_tracking(mc.spaces[pid_b].page_table[va_b].pfn).context_id
