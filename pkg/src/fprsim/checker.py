"""Shadow-model oracle: ground-truth ownership history and classification
of every resolved access as fresh, benign-stale, ABA, or security violation.

The shadow mirrors engine mutations through explicit record hooks and is
never consulted by the engine itself. It also hosts the baseline reference
comparison and the bounded interleaving explorer.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .engine import EngineBug

MAX_DETAILED_VIOLATIONS = 100


@dataclass
class Violation:
    kind: str
    core: int
    proc: int
    va: int
    pfn: int
    detail: str


class ShadowChecker:
    """Observation-only mirror of frame ownership and page-table state."""

    def __init__(self, metrics, phys):
        self.metrics = metrics
        self.phys = phys
        # frame -> ("owned"|"free", identity); identity survives the free so
        # stale hits on a freed frame compare against its last real owner.
        self.owner: dict[int, tuple[str, tuple]] = {}
        self.content_version: dict[int, int] = {}
        self.mapping: dict[tuple[int, int], int] = {}   # (pid, va) -> pfn
        self.violations: list[Violation] = []

    # -- engine mutation mirror ------------------------------------------------

    def frame_alloc(self, frame: int, identity: tuple, ctx: int) -> None:
        state, _ = self.owner.get(frame, ("free", ()))
        if state == "owned":
            raise EngineBug(f"frame {frame} allocated while already owned")
        self.owner[frame] = ("owned", identity)
        self.content_version[frame] = self.content_version.get(frame, 0) + 1

    def frame_free(self, frame: int, ctx: int) -> None:
        state, identity = self.owner.get(frame, ("free", ()))
        if state != "owned":
            raise EngineBug(f"frame {frame} freed while not owned")
        self.owner[frame] = ("free", identity)

    def frame_migrate(self, src: int, dst: int, dst_ctx: int) -> None:
        # Content moves with the page.
        self.content_version[dst] = self.content_version.get(src, 0)
        _state, identity = self.owner.get(src, ("free", ()))
        self.owner[dst] = ("owned", identity)

    def identity_of(self, frame: int) -> tuple:
        return self.owner.get(frame, ("free", ()))[1]

    def pte_install(self, pid: int, va: int, pfn: int) -> None:
        key = (pid, va)
        if key in self.mapping:
            raise EngineBug(f"double PTE install at pid={pid} va={va:#x}")
        self.mapping[key] = pfn

    def pte_remove(self, pid: int, va: int) -> None:
        if self.mapping.pop((pid, va), None) is None:
            raise EngineBug(f"PTE remove of unmapped pid={pid} va={va:#x}")

    def pte_move(self, pid: int, va: int, pfn: int) -> None:
        if (pid, va) not in self.mapping:
            raise EngineBug(f"PTE move of unmapped pid={pid} va={va:#x}")
        self.mapping[(pid, va)] = pfn

    def content_write(self, frame: int) -> None:
        self.content_version[frame] = self.content_version.get(frame, 0) + 1

    def content_copy(self, src: int, dst: int) -> None:
        self.content_version[dst] = self.content_version.get(src, 0)

    # -- classification -----------------------------------------------------------

    def classify(self, core: int, proc: int, va: int, resolved_pfn: int,
                 via: str, entry, pte) -> str:
        """Classify one resolved access.

        Walk-resolved accesses are fresh by construction. A TLB hit is fresh
        when the page table agrees, an ABA violation when it maps the va to a
        different frame, and otherwise stale: benign if the frame still
        belongs to the context or owner the entry was created under, a
        security violation if it has moved on.
        """
        shadow_pfn = self.mapping.get((proc, va))
        if via == "walk":
            if shadow_pfn != resolved_pfn:
                raise EngineBug(f"shadow mapping diverged at pid={proc} va={va:#x}")
            outcome = "fresh"
        elif pte is not None:
            if pte.pfn != shadow_pfn:
                raise EngineBug(f"shadow mapping diverged at pid={proc} va={va:#x}")
            outcome = "fresh" if pte.pfn == resolved_pfn else "aba_violation"
        else:
            outcome = self._classify_stale(resolved_pfn, entry)
        self._count(outcome, core, proc, va, resolved_pfn, via)
        return outcome

    def _classify_stale(self, pfn: int, entry) -> str:
        tracked_ctx = self.phys.get_tracking(pfn).context_id
        if entry.origin_ctx != 0 and tracked_ctx == entry.origin_ctx:
            # Still inside the recycling context the entry was minted under:
            # the documented benign divergence from unmodified semantics.
            return "benign_stale"
        _state, identity = self.owner.get(pfn, ("free", ()))
        if identity == entry.origin_identity:
            return "benign_stale"
        return "security_violation"

    def _count(self, outcome: str, core: int, proc: int, va: int, pfn: int,
               via: str) -> None:
        m = self.metrics
        if outcome == "fresh":
            m.accesses_fresh += 1
        elif outcome == "benign_stale":
            m.accesses_benign_stale += 1
        else:
            if outcome == "aba_violation":
                m.aba_violations += 1
            else:
                m.security_violations += 1
            if len(self.violations) < MAX_DETAILED_VIOLATIONS:
                self.violations.append(Violation(outcome, core, proc, va, pfn, via))


# -- baseline reference comparison ------------------------------------------------


@dataclass
class RequestTrace:
    reason: str
    initiator: int
    targets: tuple
    kernel_cores: tuple
    actual_immediate: tuple
    actual_lazy: tuple


class ShootdownLog:
    """Records every initiate() with the raw mask and phase inputs so the
    target selection can be recomputed independently afterwards."""

    def __init__(self, machine):
        self.machine = machine
        self.records: list[RequestTrace] = []
        machine.shootdowns.observers.append(self._observe)

    def _observe(self, kind: str, request, immediate, lazy) -> None:
        if kind != "initiate":
            return
        kernel = tuple(c for c in range(self.machine.num_cores)
                       if self.machine.core_in_kernel[c])
        self.records.append(RequestTrace(
            request.reason, request.initiator, tuple(sorted(request.targets)),
            kernel, tuple(immediate), tuple(lazy)))


def compare_with_reference(log: ShootdownLog, machine) -> dict:
    """Brute-force recount of shootdown requests and IPI deliveries.

    Expected targets per request: the recorded cpu mask minus the initiator
    minus cores that were in kernel mode. Deferred deliveries count when
    flushed, so still-pending ones are subtracted from the expected total.
    """
    mismatches = []
    expected_received = 0
    for idx, rec in enumerate(log.records):
        expected = tuple(c for c in rec.targets
                         if c != rec.initiator and c not in rec.kernel_cores)
        expected_received += len(expected)
        if expected != rec.actual_immediate:
            mismatches.append({
                "index": idx, "reason": rec.reason,
                "expected_immediate": expected,
                "actual_immediate": rec.actual_immediate,
            })
            break
        expected_received += len(rec.actual_lazy)
    pending = sum(d.requests for d in machine.shootdowns.deferred.values())
    expected_received -= pending
    m = machine.metrics
    report = {
        "ok": (not mismatches
               and m.shootdowns_sent == len(log.records)
               and m.shootdowns_received == expected_received),
        "expected_sent": len(log.records),
        "actual_sent": m.shootdowns_sent,
        "expected_received": expected_received,
        "actual_received": m.shootdowns_received,
        "first_divergence": mismatches[0] if mismatches else None,
    }
    return report


# -- bounded interleaving explorer ---------------------------------------------------


@dataclass
class Step:
    """One atomic thread action; the guard defers steps whose inputs (a
    mapping created by the other thread) do not exist yet."""
    name: str
    run: Callable[[dict], None]
    guard: Callable[[dict], bool] = field(default=lambda env: True)


def _orders(scripts: list[int]) -> list[tuple[int, ...]]:
    out: list[tuple[int, ...]] = []

    def rec(progress: tuple[int, ...], prefix: tuple[int, ...]) -> None:
        if len(prefix) == sum(scripts):
            out.append(prefix)
            return
        for t, total in enumerate(scripts):
            if progress[t] < total:
                nxt = list(progress)
                nxt[t] += 1
                rec(tuple(nxt), prefix + (t,))

    rec(tuple(0 for _ in scripts), ())
    return out


def explore_interleavings(build: Callable[[], tuple], max_events: int = 8) -> dict:
    """Run every feasible interleaving of the given thread scripts.

    build() returns (machine, [script, ...], env) with fresh state; each
    script is a list of Steps executed in program order. Returns aggregate
    outcome counts and the orders that produced violations.
    """
    machine0, scripts0, _env = build()
    lengths = [len(s) for s in scripts0]
    if sum(lengths) > max_events:
        raise ValueError(f"schedule has {sum(lengths)} events, explorer bound is {max_events}")

    totals = {"orders": 0, "infeasible": 0, "aba_violations": 0,
              "security_violations": 0, "aba_orders": [], "security_orders": []}
    for order in _orders(lengths):
        machine, scripts, env = build()
        cursors = [0] * len(scripts)
        feasible = True
        for t in order:
            step = scripts[t][cursors[t]]
            if not step.guard(env):
                feasible = False
                break
            step.run(env)
            cursors[t] += 1
        if not feasible:
            totals["infeasible"] += 1
            continue
        totals["orders"] += 1
        m = machine.metrics
        if m.aba_violations:
            totals["aba_violations"] += m.aba_violations
            totals["aba_orders"].append(order)
        if m.security_violations:
            totals["security_violations"] += m.security_violations
            totals["security_orders"].append(order)
    return totals
