"""Safety property suites: the bounded interleaving exploration of the
stale-mapping (ABA) schedule, baseline-model equivalence against a brute
force shootdown count, and fault-injection mutations proving the shadow
oracle actually detects violations when protections are disabled.
"""
from __future__ import annotations

from typing import Optional

from .checker import Step, compare_with_reference, explore_interleavings
from .fpr import ContextScheme, RecyclingPolicy
from .machine import Machine
from .vmem import FILE_SHARED
from .workloads import Simulation, build_case, build_eviction, build_random

ALL_SCHEMES = tuple(ContextScheme)


# -- ABA interleaving exploration ---------------------------------------------------


def _fig_aba_build(va_iteration: bool):
    """Two threads of one process on two cores, two short-lived mappings.

    The setup pre-caches the file page the second mapping will use, so the
    second fault resolves to a different frame than the recycled one; with
    address reuse enabled (va iteration off) some interleaving leaves a
    stale translation pointing at the old frame while the page table maps
    the new one.
    """

    def build():
        mc = Machine(num_cores=2, total_frames=256,
                     policy=RecyclingPolicy(scheme=ContextScheme.PER_PROCESS),
                     va_iteration=va_iteration)
        pid = mc.create_process()
        mc.attach_core(pid, 0)
        mc.attach_core(pid, 1)
        fid = mc.create_file(4)
        helper = mc.sys_mmap(pid, 1, 1, FILE_SHARED, fid, 1)
        mc.mem_access(pid, 1, helper)          # pre-cache file page 1
        env: dict = {}

        t1 = [
            Step("mmap f1", lambda e: e.__setitem__(
                "f1", mc.sys_mmap(pid, 0, 1, FILE_SHARED, fid, 0, fpr=True))),
            Step("t1 access f1", lambda e: mc.mem_access(pid, 0, e["f1"]),
                 guard=lambda e: "f1" in e),
            Step("munmap f1", lambda e: mc.sys_munmap(pid, 0, e["f1"]),
                 guard=lambda e: "f1" in e),
            Step("mmap f2", lambda e: e.__setitem__(
                "f2", mc.sys_mmap(pid, 0, 1, FILE_SHARED, fid, 1, fpr=True))),
            Step("t1 access f2", lambda e: mc.mem_access(pid, 0, e["f2"]),
                 guard=lambda e: "f2" in e),
        ]
        t2 = [
            Step("t2 access f1", lambda e: mc.mem_access(pid, 1, e["f1"]),
                 guard=lambda e: "f1" in e),
            Step("t2 access f2", lambda e: mc.mem_access(pid, 1, e["f2"]),
                 guard=lambda e: "f2" in e),
        ]
        return mc, [t1, t2], env

    return build


def aba_exploration(va_iteration: bool) -> dict:
    return explore_interleavings(_fig_aba_build(va_iteration), max_events=8)


# -- baseline equivalence --------------------------------------------------------------


def baseline_equivalence_scenarios(seed: int = 1):
    yield "case1", build_case(1, n=2, loops=300, fpr=False, seed=seed)
    yield "case2", build_case(2, n=3, loops=300, fpr=False, seed=seed)
    yield "case5", build_case(5, n=2, loops=200, fpr=False, seed=seed)
    yield "eviction", build_eviction(threads=2, cf=0.5, memory_frames=512,
                                     fpr=False, seed=seed,
                                     limit_ticks=3_000_000)


def baseline_equivalence(seed: int = 1) -> list[tuple[str, dict]]:
    out = []
    for name, scenario in baseline_equivalence_scenarios(seed):
        _record, sim = _run(scenario)
        out.append((name, compare_with_reference(sim.log, sim.machine)))
    return out


def _run(scenario, mutate: Optional[str] = None):
    sim = Simulation(scenario)
    if mutate == "suppress_context_exit":
        sim.machine.policy.suppress_context_exit = True
    elif mutate == "suppress_stamp":
        sim.machine.policy.suppress_stamp = True
    record = sim.run()
    return record, sim


# -- randomized security workloads ----------------------------------------------------


def security_sweep(seeds, events_per_run: int = 55_000, procs: int = 5,
                   mutate: Optional[str] = None, stop_at_first: bool = False) -> dict:
    """Run the randomized multi-process workload over all context schemes.

    Returns aggregate violation counts and total events processed.
    """
    totals = {"security_violations": 0, "aba_violations": 0, "events": 0,
              "runs": 0, "first_violation": None}
    for seed in seeds:
        scheme = ALL_SCHEMES[seed % len(ALL_SCHEMES)]
        scenario = build_random(procs=procs, seed=seed, scheme=scheme,
                                limit_ticks=None, limit_events=events_per_run)
        _record, sim = _run(scenario, mutate)
        m = sim.machine.metrics
        totals["security_violations"] += m.security_violations
        totals["aba_violations"] += m.aba_violations
        totals["events"] += sim.engine.events_processed
        totals["runs"] += 1
        if m.security_violations and totals["first_violation"] is None:
            v = sim.machine.checker.violations[0]
            totals["first_violation"] = {"seed": seed, "scheme": scheme.value,
                                         **vars(v)}
            if stop_at_first:
                break
    return totals


# -- suite driver -------------------------------------------------------------------------


def run_all(seed: int = 1, quick: bool = False) -> list[tuple[str, bool, str]]:
    results = []

    off = aba_exploration(va_iteration=False)
    results.append((
        "aba-explorer-va-iteration-off",
        off["aba_violations"] >= 1,
        f"{off['aba_violations']} stale-alias hits over {off['orders']} interleavings "
        f"(expected >= 1); first order: {off['aba_orders'][:1]}"))
    on = aba_exploration(va_iteration=True)
    results.append((
        "aba-explorer-va-iteration-on",
        on["aba_violations"] == 0 and on["security_violations"] == 0,
        f"{on['aba_violations']} violations over {on['orders']} interleavings (expected 0)"))

    for name, report in baseline_equivalence(seed):
        results.append((
            f"baseline-equivalence-{name}", report["ok"],
            f"sent {report['actual_sent']}/{report['expected_sent']} "
            f"received {report['actual_received']}/{report['expected_received']}"
            + (f" first divergence: {report['first_divergence']}"
               if report["first_divergence"] else "")))

    n_seeds = 4 if quick else 8
    events = 20_000 if quick else 40_000
    intact = security_sweep(range(seed, seed + n_seeds), events)
    results.append((
        "security-intact", intact["security_violations"] == 0,
        f"{intact['security_violations']} security violations over "
        f"{intact['events']} events, {intact['runs']} runs (expected 0)"))

    for mutation in ("suppress_context_exit", "suppress_stamp"):
        hit = security_sweep(range(seed, seed + n_seeds), events,
                             mutate=mutation, stop_at_first=True)
        results.append((
            f"mutation-{mutation.replace('_', '-')}",
            hit["security_violations"] >= 1,
            f"{hit['security_violations']} violations (expected >= 1); "
            f"first: {hit['first_violation']}"))
    return results
