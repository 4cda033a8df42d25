"""Eviction economics: 32-page batches vs one huge batch at the min mark.

Readers random-read a file ten times larger than memory, so the daemon
constantly reclaims. The baseline frees 32 pages per shootdown; with
recycling the band scan leaves tracked pages alone and a single shootdown
covers a whole min-to-high batch.
"""
from fprsim import build_eviction, run_scenario

for fpr in (False, True):
    scn = build_eviction(threads=4, cf=0.5, pg=0, memory_frames=2048,
                         fpr=fpr, seed=1, limit_ticks=8_000_000)
    rec, sim = run_scenario(scn)
    m = rec.metrics
    marks = sim.kswapd.marks
    label = "recycling" if fpr else "baseline "
    evicted = m.evictions_normal + m.evictions_huge
    per_sd = evicted / m.shootdowns_eviction if m.shootdowns_eviction else 0
    print(f"{label}: evicted={evicted:>5} pages  eviction_shootdowns="
          f"{m.shootdowns_eviction:>3}  pages/shootdown={per_sd:6.1f}  "
          f"reads={rec.io_ops}")
    if fpr:
        huge = [b for b in sim.kswapd.batch_log if b[0] == "huge"]
        print(f"          watermarks min/low/high = {marks.min}/{marks.low}/"
              f"{marks.high}; all {len(huge)} huge batches started at "
              f"free <= {max(b[2] for b in huge)} (min={marks.min})")
