"""Recycling policy: context derivation and the two shootdown decisions.

A frame carries a recycling context id. Releasing a tracked frame skips the
shootdown and stamps the current global counter into the frame's version;
the invalidation moves to allocation time, where a shootdown goes out only
if the frame is leaving its context *and* its stamp still matches the
counter (an older stamp means a later global flush already cleared every
stale entry).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .allocator import ID_MASK, TrackingWord


class ContextScheme(str, Enum):
    PER_MMAP = "per-mmap"
    PER_PROCESS = "per-process"
    PER_PARENT = "per-parent"
    PER_UID = "per-uid"


class AllocAction(Enum):
    NONE = "none"
    GLOBAL_SHOOTDOWN = "global_shootdown"


@dataclass(frozen=True)
class ShootdownDecision:
    action: AllocAction
    new_tracking: TrackingWord


@dataclass
class RecyclingPolicy:
    """Per-machine policy state: scheme, id space management, fault hooks."""

    scheme: ContextScheme = ContextScheme.PER_PROCESS
    mmap_id_bits: int = 8
    enabled: bool = True
    # Fault-injection hooks; exist only so the checker can prove it detects
    # the violations these cause.
    suppress_context_exit: bool = False
    suppress_stamp: bool = False

    _id_remap: dict = field(default_factory=dict)
    _remap_next: int = ID_MASK  # remapped ids grow downward from the top
    collided_ids: set = field(default_factory=set)

    def derive_context_id(self, pid: int, parent_pid: int, uid: int,
                          mmap_id: int, fpr: bool) -> int:
        """22-bit context id for a mapping; 0 means no recycling context."""
        if not fpr or not self.enabled:
            return 0
        if self.scheme is ContextScheme.PER_MMAP:
            if mmap_id < (1 << self.mmap_id_bits):
                natural = (pid << self.mmap_id_bits) + mmap_id
            else:
                natural = None  # mmap_id field overflow, remap below
        elif self.scheme is ContextScheme.PER_PROCESS:
            natural = pid
        elif self.scheme is ContextScheme.PER_PARENT:
            natural = parent_pid if parent_pid > 0 else pid
        else:
            natural = uid
        if natural is not None and 0 < natural <= ID_MASK:
            return natural
        return self._remap((self.scheme.value, pid, parent_pid, uid, mmap_id))

    def _remap(self, key: tuple) -> int:
        ctx = self._id_remap.get(key)
        if ctx is None:
            ctx = self._remap_next
            self._remap_next -= 1
            if self._remap_next <= 0:
                # Id space exhausted: reuse the floor id but force the
                # leave-context path whenever it is seen on a frame.
                ctx = 1
                self.collided_ids.add(ctx)
            self._id_remap[key] = ctx
        return ctx

    def _same_context(self, frame_ctx: int, requesting_ctx: int) -> bool:
        if frame_ctx in self.collided_ids:
            return False
        return frame_ctx == requesting_ctx

    def decide_on_alloc(self, tracking: TrackingWord, requesting_ctx: int,
                        counter_value: int) -> ShootdownDecision:
        """Allocation-time rule (applied to every frame handed out).

        Untracked frame: install the requester's context, no shootdown.
        Same context, no always-shootdown flag: recycle, keep tracking.
        Otherwise the frame leaves its context: shoot down globally iff its
        stamp matches the counter, then re-tag for the requester.
        """
        new = TrackingWord(context_id=requesting_ctx)
        if not tracking.recycle:
            return ShootdownDecision(AllocAction.NONE, new)
        if self._same_context(tracking.context_id, requesting_ctx) and not tracking.always_shootdown:
            return ShootdownDecision(AllocAction.NONE, tracking)
        if tracking.version == counter_value and not self.suppress_context_exit:
            return ShootdownDecision(AllocAction.GLOBAL_SHOOTDOWN, new)
        return ShootdownDecision(AllocAction.NONE, new)

    def decide_on_unmap(self, tracking: TrackingWord,
                        counter_value: int) -> tuple[bool, TrackingWord]:
        """Release-time rule: (send_shootdown, tracking word to store).

        Tracked frames skip the shootdown and get the counter stamped into
        their version; untracked frames follow the default release path.
        """
        if not tracking.recycle:
            return True, tracking
        if self.suppress_stamp:
            return False, tracking
        stamped = TrackingWord(tracking.context_id,
                               counter_value,
                               tracking.always_shootdown)
        return False, stamped
