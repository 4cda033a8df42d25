from fprsim.engine import CostModel
from fprsim.metrics import Metrics
from fprsim.shootdown import (FULL_FLUSH_THRESHOLD, GlobalCounter,
                              ShootdownController, ShootdownRequest)
from fprsim.tlb import Tlb, TlbEntry


class Rig:
    def __init__(self, cores=4):
        self.tlbs = [Tlb() for _ in range(cores)]
        self.in_kernel = [False] * cores
        self.costs = CostModel()
        self.metrics = Metrics()
        self.charges = []
        self.ctrl = ShootdownController(
            self.tlbs, lambda c: self.in_kernel[c],
            lambda c, t: self.charges.append((c, t)), self.costs, self.metrics)

    def fill(self, core, proc, vas):
        for va in vas:
            self.tlbs[core].insert(TlbEntry(proc, va, va + 100, True, 0))


def test_all_user_targets_receive_ipis():
    rig = Rig(4)
    for core in range(4):
        rig.fill(core, 1, [0x10])
    receipt = rig.ctrl.initiate(ShootdownRequest(
        initiator=0, targets=frozenset({0, 1, 2, 3}), scope_full=False,
        pages=((1, 0x10),), reason="munmap"))
    # 3 remote IPIs, one local flush, no IPI to self.
    assert receipt.ipis_sent == 3
    assert receipt.dropped_entries == 4
    assert rig.metrics.shootdowns_received == 3
    receives = [c for c, t in rig.charges if t == rig.costs.ipi_receive]
    assert sorted(receives) == [1, 2, 3]
    # Initiator paid initiate cost plus the per-ack wait for 3 targets.
    init_cost = rig.costs.ipi_initiate + 3 * rig.costs.ipi_ack_wait
    assert (0, init_cost) in rig.charges


def test_kernel_mode_target_defers_without_cost():
    rig = Rig(2)
    rig.fill(1, 1, [0x10])
    rig.in_kernel[1] = True
    receipt = rig.ctrl.initiate(ShootdownRequest(
        initiator=0, targets=frozenset({1}), scope_full=False,
        pages=((1, 0x10),), reason="munmap"))
    assert receipt.ipis_sent == 0 and receipt.deferred == 1
    assert rig.charges == []                       # nobody paid anything
    assert rig.tlbs[1].peek(1, 0x10) is not None   # flush deferred
    assert rig.metrics.shootdowns_received == 0
    # Flush executes at user return and then counts as received.
    dropped = rig.ctrl.on_user_return(1)
    assert dropped == 1
    assert rig.tlbs[1].peek(1, 0x10) is None
    assert rig.metrics.shootdowns_received == 1


def test_user_return_coalesces_deferred_flushes():
    rig = Rig(2)
    rig.in_kernel[1] = True
    rig.fill(1, 1, [1, 2, 3, 9])
    for va in (1, 2, 3):
        rig.ctrl.initiate(ShootdownRequest(
            initiator=0, targets=frozenset({1}), scope_full=False,
            pages=((1, va),), reason="munmap"))
    flushes_before = rig.tlbs[1].range_flushes
    rig.ctrl.on_user_return(1)
    # One combined range flush covering all three deferred requests.
    assert rig.tlbs[1].range_flushes == flushes_before + 1
    assert len(rig.tlbs[1]) == 1
    assert rig.metrics.shootdowns_received == 3


def test_deferred_full_dominates_ranges():
    rig = Rig(2)
    rig.in_kernel[1] = True
    rig.fill(1, 1, [1, 2, 3])
    rig.ctrl.initiate(ShootdownRequest(0, frozenset({1}), False, ((1, 1),), "munmap"))
    rig.ctrl.initiate(ShootdownRequest(0, frozenset({1}), True, (), "eviction"))
    rig.ctrl.on_user_return(1)
    assert len(rig.tlbs[1]) == 0
    assert rig.tlbs[1].full_flushes == 1


def test_user_return_without_deferral_is_noop():
    rig = Rig(2)
    assert rig.ctrl.on_user_return(1) == 0
    assert rig.metrics.shootdowns_received == 0


def test_wide_range_escalates_to_full_flush():
    rig = Rig(2)
    rig.fill(1, 1, list(range(50)))
    pages = tuple((1, va) for va in range(40))
    req = ShootdownRequest(0, frozenset({1}), False, pages, "munmap")
    assert req.scope_full  # 40 > 33 becomes a full flush
    rig.ctrl.initiate(req)
    assert len(rig.tlbs[1]) == 0
    assert rig.tlbs[1].full_flushes == 1
    under = ShootdownRequest(0, frozenset({1}), False,
                             tuple((1, v) for v in range(FULL_FLUSH_THRESHOLD)),
                             "munmap")
    assert not under.scope_full


def test_mask_for_merges_cpu_masks():
    class Space:
        def __init__(self, mask):
            self.cpu_mask = mask

    assert ShootdownController.mask_for([Space({0, 1})]) == frozenset({0, 1})
    assert ShootdownController.mask_for([Space({0}), Space({2})]) == frozenset({0, 2})
    assert ShootdownController.mask_for([]) == frozenset()


def test_global_counter_increments_only_for_global_reasons():
    rig = Rig(2)
    assert rig.ctrl.counter.value == 1
    rig.ctrl.initiate(ShootdownRequest(0, frozenset({1}), True, (), "munmap"))
    rig.ctrl.initiate(ShootdownRequest(0, frozenset({1}), True, (), "eviction"))
    rig.ctrl.initiate(ShootdownRequest(0, frozenset({1}), True, (), "hint_wrap"))
    assert rig.ctrl.counter.value == 1
    rig.ctrl.initiate(ShootdownRequest(0, frozenset({1}), True, (), "fpr_context_exit"))
    assert rig.ctrl.counter.value == 2


def test_counter_wrap_resets():
    c = GlobalCounter(wrap_at=5)
    for _ in range(3):
        c.increment()
    assert c.value == 4
    assert c.increment() is True
    assert c.value == 1 and c.wraps == 1


def test_reason_accounting():
    rig = Rig(2)
    rig.ctrl.initiate(ShootdownRequest(0, frozenset({1}), True, (), "eviction"))
    rig.ctrl.initiate(ShootdownRequest(0, frozenset({1}), True, (), "fpr_context_exit"))
    rig.ctrl.initiate(ShootdownRequest(0, frozenset({1}), True, (), "migration"))
    m = rig.metrics
    assert m.shootdowns_sent == 3
    assert m.shootdowns_eviction == 1
    assert m.fpr_context_exit_shootdowns == 1
    assert m.shootdowns_other == 1
