import pytest

from fprsim.checker import compare_with_reference
from fprsim.checks import aba_exploration, baseline_equivalence
from fprsim.engine import EngineBug
from fprsim.fpr import ContextScheme, RecyclingPolicy
from fprsim.machine import Machine
from fprsim.vmem import ANON, FILE_SHARED
from fprsim.workloads import build_case, run_scenario


def mc2():
    mc = Machine(2, 128, policy=RecyclingPolicy(scheme=ContextScheme.PER_PROCESS))
    pid = mc.create_process()
    mc.attach_core(pid, 0)
    mc.attach_core(pid, 1)
    return mc, pid


def test_walk_resolved_access_is_fresh():
    mc, pid = mc2()
    va = mc.sys_mmap(pid, 0, 1, ANON)
    assert mc.mem_access(pid, 0, va) == "fresh"
    assert mc.metrics.accesses_fresh == 1


def test_hit_matching_page_table_is_fresh():
    mc, pid = mc2()
    va = mc.sys_mmap(pid, 0, 1, ANON)
    mc.mem_access(pid, 0, va)
    assert mc.mem_access(pid, 0, va) == "fresh"


def test_stale_alias_interleaving_is_aba_without_va_iteration():
    # The two-thread mmap-munmap interleaving: with address reuse, the second
    # thread's cached translation silently resolves to the wrong frame.
    mc = Machine(2, 128, policy=RecyclingPolicy(scheme=ContextScheme.PER_PROCESS),
                 va_iteration=False)
    pid = mc.create_process()
    mc.attach_core(pid, 0)
    mc.attach_core(pid, 1)
    fid = mc.create_file(4)
    helper = mc.sys_mmap(pid, 1, 1, FILE_SHARED, fid, 1)
    mc.mem_access(pid, 1, helper)                       # pre-cache offset 1
    f1 = mc.sys_mmap(pid, 0, 1, FILE_SHARED, fid, 0, fpr=True)
    mc.mem_access(pid, 0, f1)
    mc.mem_access(pid, 1, f1)                           # T2 caches f1's page
    mc.sys_munmap(pid, 0, f1)                           # skipped remotely
    f2 = mc.sys_mmap(pid, 0, 1, FILE_SHARED, fid, 1, fpr=True)
    assert f2 == f1                                     # address reuse
    mc.mem_access(pid, 0, f2)                           # faults to the cached frame
    out = mc.mem_access(pid, 1, f2)                     # stale hit, wrong frame
    assert out == "aba_violation"
    assert mc.metrics.aba_violations == 1


def test_security_violation_when_context_exit_suppressed():
    mc = Machine(2, 64,
                 policy=RecyclingPolicy(scheme=ContextScheme.PER_PROCESS,
                                        suppress_context_exit=True),
                 pcpu_batch=2, pcpu_high=4)
    pid_a = mc.create_process()
    mc.attach_core(pid_a, 0)
    mc.attach_core(pid_a, 1)
    pid_b = mc.create_process()
    mc.attach_core(pid_b, 1)
    va = mc.sys_mmap(pid_a, 0, 1, ANON, fpr=True)
    mc.mem_access(pid_a, 0, va)
    mc.mem_access(pid_a, 1, va)          # sibling core caches it
    frame = mc.spaces[pid_a].page_table[va].pfn
    mc.sys_munmap(pid_a, 0, va)          # skip: core 1 keeps the stale entry
    # Drain core 0's list into the buddy and let B on core 1 grab the frame.
    spill = [mc.phys.alloc_page(0) for _ in range(8)]
    for f in spill:
        mc.phys.free_page(0, f)
    vb = mc.sys_mmap(pid_b, 1, 1, ANON, fpr=True)
    got = None
    while got != frame:
        mc.mem_access(pid_b, 1, vb)
        got = mc.spaces[pid_b].page_table[vb].pfn
        if got != frame:
            mc.sys_munmap(pid_b, 1, vb)
            vb = mc.sys_mmap(pid_b, 1, 1, ANON, fpr=True)
    out = mc.mem_access(pid_a, 1, va)    # stale entry over B's page
    assert out == "security_violation"
    assert mc.metrics.security_violations == 1


def test_shadow_detects_double_ownership():
    mc, pid = mc2()
    va = mc.sys_mmap(pid, 0, 1, ANON)
    mc.mem_access(pid, 0, va)
    frame = mc.spaces[pid].page_table[va].pfn
    with pytest.raises(EngineBug):
        mc.checker.frame_alloc(frame, ("anon", pid), 0)


def test_shadow_tracks_alloc_free_cycle():
    mc, pid = mc2()
    va = mc.sys_mmap(pid, 0, 1, ANON)
    mc.mem_access(pid, 0, va)
    frame = mc.spaces[pid].page_table[va].pfn
    assert mc.checker.owner[frame][0] == "owned"
    mc.sys_munmap(pid, 0, va)
    assert mc.checker.owner[frame][0] == "free"


def test_shadow_detects_double_pte_install():
    mc, pid = mc2()
    va = mc.sys_mmap(pid, 0, 1, ANON)
    mc.mem_access(pid, 0, va)
    with pytest.raises(EngineBug):
        mc.checker.pte_install(pid, va, 7)


# -- explorer ---------------------------------------------------------------------


def test_explorer_finds_aba_without_va_iteration():
    result = aba_exploration(va_iteration=False)
    assert result["aba_violations"] >= 1
    assert result["aba_orders"]


def test_explorer_clean_with_va_iteration():
    result = aba_exploration(va_iteration=True)
    assert result["orders"] > 0
    assert result["aba_violations"] == 0
    assert result["security_violations"] == 0


def test_explorer_covers_all_feasible_orders():
    # Two scripts of 5 and 2 steps: C(7,2)=21 sequences, minus those whose
    # guards (mapping existence) fail.
    result = aba_exploration(va_iteration=False)
    assert result["orders"] + result["infeasible"] == 21


# -- baseline reference comparison ----------------------------------------------------


def test_reference_comparison_on_baseline_scenarios():
    for name, report in baseline_equivalence(seed=3):
        assert report["ok"], (name, report)


def test_reference_comparison_case2_receive_count():
    # 1 io thread + 3 always-user compute threads: every munmap batch
    # delivers exactly 3 IPIs, so received == 3 * munmap batches.
    scn = build_case(2, n=3, loops=250, fpr=False, seed=2)
    _rec, sim = run_scenario(scn)
    m = sim.machine.metrics
    assert m.shootdowns_munmap == 250
    assert m.shootdowns_received == 3 * 250
    report = compare_with_reference(sim.log, sim.machine)
    assert report["ok"]


def test_reference_comparison_flags_divergence():
    scn = build_case(2, n=2, loops=50, fpr=False, seed=2)
    _rec, sim = run_scenario(scn)
    sim.machine.metrics.shootdowns_received += 1   # corrupt a counter
    report = compare_with_reference(sim.log, sim.machine)
    assert not report["ok"]
