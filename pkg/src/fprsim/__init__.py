"""fprsim: deterministic multicore virtual-memory simulator for studying
TLB shootdown avoidance through fast page recycling.

The public surface: build a Scenario (workloads), run it (run_scenario),
inspect the RunRecord/Metrics, or drive the Machine directly for
fine-grained experiments. The checker module provides the shadow oracle
and the bounded interleaving explorer.
"""
from .allocator import BuddyAllocator, PhysicalMemory, TrackingWord, merge_tracking
from .checker import ShadowChecker, Step, compare_with_reference, explore_interleavings
from .engine import CostModel, Engine, EngineBug, MemoryExhausted, PAGE_SIZE, ScenarioError
from .fpr import AllocAction, ContextScheme, RecyclingPolicy, ShootdownDecision
from .kswapd import Kswapd, Watermarks
from .machine import Machine
from .metrics import CSV_COLUMNS, Metrics, RunRecord, SCHEMA_VERSION, csv_header
from .shootdown import (FULL_FLUSH_THRESHOLD, GlobalCounter, ShootdownController,
                        ShootdownRequest)
from .tlb import Tlb, TlbEntry
from .vmem import ANON, AddressSpace, FILE_PRIVATE, FILE_SHARED, FileObject, Vma
from .workloads import (DEVICES, DeviceProfile, Scenario, Simulation, ThreadSpec,
                        build_case, build_eviction, build_random, run_scenario)

__all__ = [
    "AllocAction", "AddressSpace", "ANON", "BuddyAllocator", "ContextScheme",
    "CostModel", "CSV_COLUMNS", "DeviceProfile", "DEVICES", "Engine",
    "EngineBug", "FILE_PRIVATE", "FILE_SHARED", "FileObject",
    "FULL_FLUSH_THRESHOLD", "GlobalCounter", "Kswapd", "Machine",
    "MemoryExhausted", "Metrics", "PAGE_SIZE", "PhysicalMemory",
    "RecyclingPolicy", "RunRecord", "Scenario", "ScenarioError",
    "SCHEMA_VERSION", "ShadowChecker", "ShootdownController",
    "ShootdownDecision", "ShootdownRequest", "Simulation", "Step", "ThreadSpec",
    "Tlb", "TlbEntry", "TrackingWord", "Vma", "Watermarks", "build_case",
    "build_eviction", "build_random", "compare_with_reference", "csv_header",
    "explore_interleavings", "merge_tracking", "run_scenario",
]

__version__ = "0.1.0"
