"""One io thread versus N compute threads: what a shootdown costs bystanders.

Compute threads never touch the io thread's pages, yet every munmap IPI
steals their cycles. The run writes a sweep CSV (the plotting frontend's
lines input) and prints the throughput table.

Usage: python demos/case2_scaling.py [out.csv]
"""
import sys

from fprsim import build_case, csv_header, run_scenario

rows = []
print(f"{'threads':>8} {'variant':>9} {'compute ops/Mtick':>18} {'io ops/Mtick':>13}")
for n in (4, 8, 16, 32):
    runs = [("ideal", build_case(0, n=n, seed=1, limit_ticks=2_000_000)),
            ("baseline", build_case(2, n=n, seed=1, fpr=False, limit_ticks=2_000_000)),
            ("fpr", build_case(2, n=n, seed=1, limit_ticks=2_000_000))]
    for label, scn in runs:
        rec, _sim = run_scenario(scn)
        rows.append(rec.csv_row())
        print(f"{n:>8} {label:>9} {rec.compute_throughput:>18.0f} "
              f"{rec.io_throughput:>13.1f}")

out = sys.argv[1] if len(sys.argv) > 1 else "case2_sweep.csv"
with open(out, "w") as fh:
    fh.write(csv_header() + "\n")
    fh.write("\n".join(rows) + "\n")
print(f"\nwrote {out} ({len(rows)} rows)")
