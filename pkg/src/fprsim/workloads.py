"""Scenario builders and thread actors for the bundled microbenchmarks.

Thread shapes: io threads run mmap -> 4k-access -> munmap loops, compute
threads spin on register work, mixed threads alternate the two, and evict
readers random-read a file much larger than memory (with optional per-read
compute scaled by a compute factor and a local page buffer).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .engine import CostModel, Engine, ScenarioError, split_rng
from .checker import ShootdownLog
from .fpr import ContextScheme, RecyclingPolicy
from .kswapd import Kswapd, Watermarks
from .machine import Machine
from .metrics import RunRecord
from .vmem import ANON, FILE_PRIVATE, FILE_SHARED

KERNEL, USER = "kernel", "user"
COMPUTE_QUANTUM = 1000        # ticks of register work per compute event
MIXED_QUANTUM = 10_000        # ops per compute phase of a mixed thread
CF_UNIT = 10_000              # 1 CF = 10K ops


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    read_latency: int
    write_latency: int

    def __post_init__(self):
        if self.read_latency < 0 or self.write_latency < 0:
            raise ScenarioError("device latencies must be >= 0")


DEVICES = {
    "nullblk": DeviceProfile("nullblk", 0, 0),
    "pmem": DeviceProfile("pmem", 300, 300),
    "optane": DeviceProfile("optane", 10_000, 10_000),
    "nvme": DeviceProfile("nvme", 80_000, 80_000),
}

ACCESS_MODES = ("shared_read", "private_write", "shared_write")


@dataclass(frozen=True)
class ThreadSpec:
    kind: str                     # io | compute | mixed | evict_reader | random
    loops: Optional[int] = None   # io iterations; None = until the tick limit
    access_mode: str = "shared_read"
    map_pages: int = 1
    cf: float = 1.0
    pg: int = 0

    def __post_init__(self):
        if self.kind not in ("io", "compute", "mixed", "evict_reader", "random"):
            raise ScenarioError(f"unknown thread kind {self.kind!r}")
        if self.access_mode not in ACCESS_MODES:
            raise ScenarioError(f"unknown access mode {self.access_mode!r}")
        if self.cf < 0 or self.pg < 0:
            raise ScenarioError("cf and pg must be >= 0")


@dataclass(frozen=True)
class Scenario:
    """Pure description of one run; thread i is pinned to core i and the
    eviction daemon gets the last core to itself."""

    name: str
    threads: tuple
    memory_frames: int = 4096
    limit_ticks: Optional[int] = 5_000_000
    limit_events: Optional[int] = None
    fpr: bool = True
    scheme: ContextScheme = ContextScheme.PER_PROCESS
    va_iteration: Optional[bool] = None   # None: follows the fpr switch
    tracking_hooks: bool = True
    device: str = "nullblk"
    seed: int = 1
    file_pages: int = 0                   # eviction scenario mapping size
    mem_ratio: int = 10
    random_procs: int = 5                 # processes; each runs two threads
    pcpu_batch: Optional[int] = None
    pcpu_high: Optional[int] = None
    label: str = ""

    def __post_init__(self):
        if self.device not in DEVICES:
            raise ScenarioError(f"unknown device {self.device!r}")
        if any(t.kind == "evict_reader" for t in self.threads):
            if self.mem_ratio < 10:
                raise ScenarioError("eviction scenarios need a file at least 10x memory")
        if not self.threads:
            raise ScenarioError("scenario needs at least one thread")

    @property
    def cores(self) -> int:
        if self.threads and self.threads[0].kind == "random":
            return 2 * self.random_procs + 1
        return len(self.threads) + 1      # +1: dedicated kswapd core

    def effective_va_iteration(self) -> bool:
        return self.fpr if self.va_iteration is None else self.va_iteration

    def effective_label(self) -> str:
        if self.label:
            return self.label
        if not any(t.kind in ("io", "mixed", "evict_reader", "random") for t in self.threads):
            return "ideal"
        return "fpr" if self.fpr else "baseline"


# -- scenario builders ------------------------------------------------------------


def build_case(case_no: int, n: int, m: int = 0, device: str = "nullblk",
               loops: Optional[int] = None, access_mode: str = "shared_read",
               **kw) -> Scenario:
    """The five mmap-munmap thread combinations plus the ideal-compute run
    (case 0): 1=n io, 2=1 io + n compute, 3=n io + 1 compute,
    4=n io + m compute, 5=n mixed."""
    if n < 1:
        raise ScenarioError("n must be >= 1")
    io = ThreadSpec("io", loops=loops, access_mode=access_mode)
    compute = ThreadSpec("compute")
    if case_no == 0:
        threads = (compute,) * n
    elif case_no == 1:
        threads = (io,) * n
    elif case_no == 2:
        threads = (io,) + (compute,) * n
    elif case_no == 3:
        threads = (io,) * n + (compute,)
    elif case_no == 4:
        if m < 1:
            raise ScenarioError("case 4 needs m >= 1 compute threads")
        threads = (io,) * n + (compute,) * m
    elif case_no == 5:
        threads = (ThreadSpec("mixed", loops=loops, access_mode=access_mode),) * n
    else:
        raise ScenarioError(f"no such case {case_no}")
    name = f"case{case_no}" if case_no else "ideal_compute"
    return Scenario(name=name, threads=threads, device=device, **kw)


def build_eviction(threads: int, cf: float = 1.0, pg: int = 0,
                   device: str = "nullblk", mem_ratio: int = 10,
                   memory_frames: int = 4096, **kw) -> Scenario:
    if threads < 1:
        raise ScenarioError("need at least one reader")
    spec = ThreadSpec("evict_reader", cf=cf, pg=pg)
    file_pages = memory_frames * mem_ratio
    return Scenario(name="eviction", threads=(spec,) * threads,
                    memory_frames=memory_frames, device=device,
                    file_pages=file_pages, mem_ratio=mem_ratio, **kw)


def build_random(procs: int = 5, memory_frames: int = 1024, **kw) -> Scenario:
    """Randomized multi-process workload: two threads per process so a munmap
    on one core leaves stale translations on the sibling, and small per-CPU
    lists so frames flow between processes through the buddy."""
    if procs < 2:
        raise ScenarioError("the randomized workload needs >= 2 processes")
    kw.setdefault("pcpu_batch", 4)
    kw.setdefault("pcpu_high", 8)
    return Scenario(name="random", threads=(ThreadSpec("random"),) * (2 * procs),
                    memory_frames=memory_frames, random_procs=procs, **kw)


SCENARIOS = {
    "case1": ("Case 1: N io threads in mmap-access-munmap loops",
              lambda p: build_case(1, **p)),
    "case2": ("Case 2: 1 io thread + N compute threads",
              lambda p: build_case(2, **p)),
    "case3": ("Case 3: N io threads + 1 compute thread",
              lambda p: build_case(3, **p)),
    "case4": ("Case 4: N io threads + M compute threads",
              lambda p: build_case(4, **p)),
    "case5": ("Case 5: N mixed io+compute threads",
              lambda p: build_case(5, **p)),
    "ideal_compute": ("Case 2 ideal baseline: N compute threads, no io",
                      lambda p: build_case(0, **p)),
    "eviction": ("Random reads over a file 10x memory; kswapd evicts",
                 lambda p: build_eviction(**p)),
    "random": ("Randomized multi-process security workload",
               lambda p: build_random(**p)),
}

DEFAULT_PARAMS = {
    "case1": {"n": 2, "loops": 2000},
    "case2": {"n": 4, "loops": None},
    "case3": {"n": 2, "loops": 2000},
    "case4": {"n": 2, "m": 2, "loops": 2000},
    "case5": {"n": 2, "loops": 1000},
    "ideal_compute": {"n": 4},
    "eviction": {"threads": 4, "cf": 1.0, "pg": 0},
    "random": {"procs": 5},
}


# -- thread actors -----------------------------------------------------------------


class _Actor:
    kind = "?"

    def __init__(self, sim, name: str, core: int, pid: int, spec: ThreadSpec, rng):
        self.sim = sim
        self.name = name
        self.core = core
        self.pid = pid
        self.spec = spec
        self.rng = rng
        self.io_ops = 0
        self.compute_ops = 0
        self.next_phase = KERNEL

    def run_step(self) -> Optional[str]:
        raise NotImplementedError


class IoThread(_Actor):
    """mmap -> 4k access -> munmap, each iteration on a fresh file offset."""

    kind = "io"

    def __init__(self, sim, name, core, pid, spec, rng, fid, base_off, span):
        super().__init__(sim, name, core, pid, spec, rng)
        self.fid = fid
        self.base_off = base_off
        self.span = span
        self.iteration = 0
        self.state = "mmap"
        self.va = 0
        self.next_phase = KERNEL

    def run_step(self) -> Optional[str]:
        mc = self.sim.machine
        mode = self.spec.access_mode
        if self.state == "mmap":
            off = self.base_off + (self.iteration * self.spec.map_pages) % self.span
            backing = FILE_PRIVATE if mode == "private_write" else FILE_SHARED
            self.va = mc.sys_mmap(self.pid, self.core, self.spec.map_pages,
                                  backing, self.fid, off, fpr=self.sim.scenario.fpr)
            self.state = "access"
            # With a real device the access window is dominated by the
            # in-kernel wait (deferral applies); on nullblk the core stays
            # interruptible. Either way the user-mode touch itself processes
            # any deferred flush at the head of the access.
            return KERNEL if self.sim.device_read_latency > 0 else USER
        if self.state == "access":
            mc.mem_access(self.pid, self.core, self.va,
                          is_write=mode != "shared_read")
            self.state = "munmap"
            return KERNEL
        mc.sys_munmap(self.pid, self.core, self.va)
        self.io_ops += 1
        self.iteration += 1
        if self.spec.loops is not None and self.iteration >= self.spec.loops:
            return None
        self.state = "mmap"
        return KERNEL


class ComputeThread(_Actor):
    """Register-only work; never enters the kernel."""

    kind = "compute"

    def __init__(self, *args):
        super().__init__(*args)
        self.next_phase = USER

    def run_step(self) -> Optional[str]:
        self.sim.engine.charge(self.core, COMPUTE_QUANTUM * self.sim.costs.compute_op)
        self.compute_ops += COMPUTE_QUANTUM
        return USER


class MixedThread(IoThread):
    """One io loop, then one compute quantum, repeated."""

    kind = "mixed"

    def run_step(self) -> Optional[str]:
        if self.state == "compute":
            self.sim.engine.charge(self.core, MIXED_QUANTUM * self.sim.costs.compute_op)
            self.compute_ops += MIXED_QUANTUM
            self.state = "mmap"
            if self.spec.loops is not None and self.iteration >= self.spec.loops:
                return None
            return KERNEL
        nxt = super().run_step()
        if nxt is None or self.state == "mmap":
            # io loop finished: insert the compute phase before the next one.
            self.state = "compute"
            return USER
        return nxt


class EvictReader(_Actor):
    """Random 4k reads from a huge shared mapping with optional compute and
    a thread-local page buffer touched round-robin during compute."""

    kind = "evict_reader"

    def __init__(self, sim, name, core, pid, spec, rng, file_va, file_pages, pg_va):
        super().__init__(sim, name, core, pid, spec, rng)
        self.file_va = file_va
        self.file_pages = file_pages
        self.pg_va = pg_va
        self.cursor = 0
        self.state = "read"
        self.next_phase = KERNEL

    def run_step(self) -> Optional[str]:
        mc = self.sim.machine
        if self.state == "read":
            va = self.file_va + self.rng.randrange(self.file_pages)
            mc.mem_access(self.pid, self.core, va)
            self.io_ops += 1
            ops = int(round(self.spec.cf * CF_UNIT))
            if ops > 0:
                self.state = "compute"
                return USER
            return KERNEL
        ops = int(round(self.spec.cf * CF_UNIT))
        self.sim.engine.charge(self.core, ops * self.sim.costs.compute_op)
        self.compute_ops += ops
        # One touch per buffer page per quantum; repeats within the quantum
        # stay cache-hot and add nothing the TLB would notice.
        for _ in range(min(self.spec.pg, ops)):
            mc.mem_access(self.pid, self.core, self.pg_va + self.cursor)
            self.cursor = (self.cursor + 1) % self.spec.pg
        self.state = "read"
        return KERNEL


@dataclass
class ProcState:
    """Shared by the two threads of one randomized process."""
    pid: int
    cores: tuple
    uid: int
    mappings: list = field(default_factory=list)   # (va, length)
    dangling: list = field(default_factory=list)   # page vas of unmapped ranges
    respawns: int = 0


class RandomActor(_Actor):
    """One thread of a randomized two-thread process: maps, unmaps, touches
    live and dangling pointers, migrates pages, and occasionally exits
    (the process respawns fresh on the same cores)."""

    kind = "random"

    def __init__(self, sim, name, core, state: ProcState, spec, rng, files):
        super().__init__(sim, name, core, state.pid, spec, rng)
        self.state = state
        self.files = files
        self._op = "mmap"
        self.next_phase = KERNEL

    def _draw_op(self) -> str:
        st = self.state
        r = self.rng.random()
        if r < 0.34:
            return "access" if st.mappings else "mmap"
        if r < 0.56:
            return "mmap"
        if r < 0.74:
            return "munmap" if st.mappings else "mmap"
        if r < 0.86:
            return "dangling" if st.dangling else "access" if st.mappings else "mmap"
        if r < 0.92:
            return "compute"
        if r < 0.97:
            return "migrate" if st.mappings else "compute"
        return "exit"

    def run_step(self) -> Optional[str]:
        mc = self.sim.machine
        st = self.state
        op = self._op
        # The sibling thread may have consumed the op's target in between.
        if op in ("access", "munmap", "migrate") and not st.mappings:
            op = "mmap"
        elif op == "dangling" and not st.dangling:
            op = "mmap"
        if op == "access":
            va, length = self.rng.choice(st.mappings)
            out = mc.mem_access(st.pid, self.core, va + self.rng.randrange(length),
                                is_write=self.rng.random() < 0.25)
            if out == "segfault":
                self._respawn()
        elif op == "mmap":
            self._mmap(mc)
        elif op == "munmap":
            idx = self.rng.randrange(len(st.mappings))
            va, length = st.mappings.pop(idx)
            mc.sys_munmap(st.pid, self.core, va)
            st.dangling.append(va + self.rng.randrange(length))
            del st.dangling[:-48]
        elif op == "dangling":
            va = self.rng.choice(st.dangling)
            out = mc.mem_access(st.pid, self.core, va,
                                is_write=self.rng.random() < 0.2)
            if out == "segfault":
                self._respawn()
        elif op == "compute":
            self.sim.engine.charge(self.core, 200 * self.sim.costs.compute_op)
            self.compute_ops += 200
        elif op == "migrate":
            va, length = self.rng.choice(st.mappings)
            page = va + self.rng.randrange(length)
            if page in mc.spaces[st.pid].page_table:
                mc.migrate_page(st.pid, self.core, page)
        else:
            self._respawn()
        self._op = self._draw_op()
        return USER if self._op in ("access", "dangling", "compute") else KERNEL

    def _mmap(self, mc) -> None:
        st = self.state
        length = self.rng.randrange(1, 5)
        fpr = self.rng.random() < 0.8 and self.sim.scenario.fpr
        r = self.rng.random()
        fixed = None
        if st.dangling and self.rng.random() < 0.06:
            cand = self.rng.choice(st.dangling)
            if not mc.spaces[st.pid].overlaps(cand, length):
                fixed = cand
        if r < 0.5:
            va = mc.sys_mmap(st.pid, self.core, length, ANON, fpr=fpr, fixed_va=fixed)
        else:
            fid, pages = self.rng.choice(self.files)
            off = self.rng.randrange(pages - length)
            backing = FILE_SHARED if r < 0.85 else FILE_PRIVATE
            va = mc.sys_mmap(st.pid, self.core, length, backing, fid, off,
                             fpr=fpr, fixed_va=fixed)
        st.mappings.append((va, length))
        self.io_ops += 1

    def _respawn(self) -> None:
        mc = self.sim.machine
        st = self.state
        old_space = mc.spaces[st.pid]
        if old_space.alive:
            mc.sys_exit(st.pid, self.core)
        st.pid = mc.create_process(uid=st.uid)
        for core in st.cores:
            mc.attach_core(st.pid, core)
        st.mappings.clear()
        st.dangling.clear()
        st.respawns += 1
        self.pid = st.pid


# -- simulation assembly ------------------------------------------------------------


class Simulation:
    """A scenario wired to a machine and engine, ready to run."""

    def __init__(self, scenario: Scenario, costs: Optional[CostModel] = None,
                 trace: bool = False):
        self.scenario = scenario
        self.costs = costs or CostModel()
        cores = scenario.cores
        self.engine = Engine(cores, self.costs, trace=trace)
        dev = DEVICES[scenario.device]
        self.device_read_latency = dev.read_latency
        self.machine = Machine(
            cores, scenario.memory_frames, self.costs,
            policy=RecyclingPolicy(scheme=scenario.scheme, enabled=scenario.fpr),
            va_iteration=scenario.effective_va_iteration(),
            tracking_hooks=scenario.tracking_hooks,
            devices={scenario.device: (dev.read_latency, dev.write_latency)},
            pcpu_batch=scenario.pcpu_batch, pcpu_high=scenario.pcpu_high)
        self.machine.bind_engine(self.engine)
        marks = Watermarks.for_frames(scenario.memory_frames)
        self.kswapd = Kswapd(self.machine, marks, core=cores - 1)
        self.log = ShootdownLog(self.machine)
        self.actors: list[_Actor] = []
        self._build_actors()
        self._kswapd_scheduled = False
        self.kswapd.on_wake = self._wake_kswapd

    # -- construction ----------------------------------------------------------

    def _build_actors(self) -> None:
        scn = self.scenario
        mc = self.machine
        if scn.threads[0].kind == "random":
            self._build_random_actors()
            return
        pid = mc.create_process(uid=1)
        for core, _spec in enumerate(scn.threads):
            mc.attach_core(pid, core)
        io_file = None
        evict = [t for t in scn.threads if t.kind == "evict_reader"]
        if evict:
            file_pages = scn.file_pages or scn.memory_frames * scn.mem_ratio
            io_file = mc.create_file(file_pages, scn.device)
            file_va = mc.sys_mmap(pid, 0, file_pages, FILE_SHARED, io_file, 0,
                                  fpr=scn.fpr)
        elif any(t.kind in ("io", "mixed") for t in scn.threads):
            # Device-backed file large enough for every thread's offset lane.
            span = 1024
            io_file = mc.create_file(span * len(scn.threads), scn.device)
        for core, spec in enumerate(scn.threads):
            rng = split_rng(scn.seed, core)
            name = f"t{core}"
            if spec.kind == "compute":
                actor = ComputeThread(self, name, core, pid, spec, rng)
            elif spec.kind in ("io", "mixed"):
                cls = IoThread if spec.kind == "io" else MixedThread
                actor = cls(self, name, core, pid, spec, rng,
                            io_file, core * 1024, 1024)
            else:
                pg_va = mc.sys_mmap(pid, core, spec.pg, ANON) if spec.pg else 0
                actor = EvictReader(self, name, core, pid, spec, rng,
                                    file_va, scn.file_pages, pg_va)
            self.actors.append(actor)

    def _build_random_actors(self) -> None:
        scn = self.scenario
        mc = self.machine
        files = [(mc.create_file(256, scn.device), 256),
                 (mc.create_file(256, scn.device), 256)]
        states = []
        root = None
        for i in range(scn.random_procs):
            cores = (2 * i, 2 * i + 1)
            uid = 1 + i % 2
            if i == 0:
                pid = mc.create_process(uid=uid)
                root = pid
            elif i in (2, 3):
                # Children of the first process, so the per-parent scheme
                # gets a context shared across processes.
                pid = mc.sys_fork(root, 0)
            else:
                pid = mc.create_process(uid=uid)
            for core in cores:
                mc.attach_core(pid, core)
            states.append(ProcState(pid, cores, mc.spaces[pid].uid))
        for i, state in enumerate(states):
            for j, core in enumerate(state.cores):
                rng = split_rng(scn.seed, 2 * i + j)
                self.actors.append(RandomActor(self, f"t{core}", core, state,
                                               scn.threads[0], rng, files))

    # -- engine glue -------------------------------------------------------------

    def _wake_kswapd(self) -> None:
        if self._kswapd_scheduled:
            return
        self._kswapd_scheduled = True
        core = self.kswapd.core
        self.engine.schedule(max(self.engine.now, self.engine.clock[core]),
                             core, "kswapd", self._kswapd_step)

    def _kswapd_step(self) -> None:
        self._kswapd_scheduled = False
        self.machine.set_core_phase(self.kswapd.core, True)
        evicted = self.kswapd.reclaim_step()
        free = self.machine.phys.free_frames
        if evicted > 0 and free < self.kswapd.marks.high:
            self._wake_kswapd()
        else:
            self.kswapd.sleeping = True

    def _actor_step(self, actor: _Actor) -> None:
        phase = actor.next_phase
        if phase == USER and self.machine.shootdowns.has_deferred(actor.core):
            self.machine.shootdowns.on_user_return(actor.core)
        self.machine.set_core_phase(actor.core, phase == KERNEL)
        nxt = actor.run_step()
        if nxt is None:
            self.engine.actor_finished()
            return
        actor.next_phase = nxt
        self.engine.schedule(self.engine.clock[actor.core], actor.core,
                             f"step:{actor.name}",
                             lambda a=actor: self._actor_step(a))

    # -- run ------------------------------------------------------------------------

    def run(self) -> RunRecord:
        scn = self.scenario
        for actor in self.actors:
            self.engine.actor_started()
            self.engine.schedule(0, actor.core, f"step:{actor.name}",
                                 lambda a=actor: self._actor_step(a))
        self.engine.run(until_tick=scn.limit_ticks, max_events=scn.limit_events)
        return self._record()

    def _record(self) -> RunRecord:
        scn = self.scenario
        counts = {"io": 0, "compute": 0, "mixed": 0, "evict_reader": 0, "random": 0}
        for spec in scn.threads:
            counts[spec.kind] += 1
        sim_ticks = scn.limit_ticks if (scn.limit_ticks is not None
                                        and self.engine.queue_size() > 0) else self.engine.now
        spec0 = scn.threads[0]
        rec = RunRecord(
            scenario=scn.name, label=scn.effective_label(), seed=scn.seed,
            cores=scn.cores, fpr=scn.fpr, scheme=scn.scheme.value,
            va_iteration=scn.effective_va_iteration(), device=scn.device,
            io_threads=counts["io"] + counts["random"],
            compute_threads=counts["compute"],
            mixed_threads=counts["mixed"], reader_threads=counts["evict_reader"],
            cf=spec0.cf if counts["evict_reader"] else 0.0,
            pg=spec0.pg if counts["evict_reader"] else 0,
            loops=spec0.loops or 0,
            simulated_ticks=sim_ticks,
            io_ops=sum(a.io_ops for a in self.actors),
            compute_ops=sum(a.compute_ops for a in self.actors),
            tlb_hits=sum(t.hits for t in self.machine.tlbs),
            tlb_misses=sum(t.misses for t in self.machine.tlbs),
            tlb_full_flushes=sum(t.full_flushes for t in self.machine.tlbs),
            tlb_range_flushes=sum(t.range_flushes for t in self.machine.tlbs),
            tlb_entries_dropped=sum(t.entries_dropped_by_flush for t in self.machine.tlbs),
            metrics=self.machine.metrics,
        )
        return rec


def run_scenario(scenario: Scenario, costs: Optional[CostModel] = None,
                 trace: bool = False) -> tuple[RunRecord, Simulation]:
    sim = Simulation(scenario, costs, trace)
    record = sim.run()
    return record, sim
