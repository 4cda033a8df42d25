"""Compute-factor x page-buffer grid for the eviction benchmark.

Each reader alternates a random 4k read with CF x 10k compute ops that
round-robin a PG-page local buffer. Eviction flushes empty the TLB, so the
buffer pages must be re-walked: the larger PG is, the more a saved flush is
worth. Writes the heatmap input CSV for the plotting frontend.

Usage: python demos/cf_pg_grid.py [out.csv]
"""
import sys

from fprsim import build_eviction, csv_header, run_scenario

CFS = (0.5, 1.0, 2.0)
PGS = (0, 128)

rows = []
table = {}
for cf in CFS:
    for pg in PGS:
        tp = {}
        for fpr in (False, True):
            scn = build_eviction(threads=4, cf=cf, pg=pg, memory_frames=2048,
                                 fpr=fpr, seed=1, limit_ticks=10_000_000)
            rec, _sim = run_scenario(scn)
            rows.append(rec.csv_row())
            tp["fpr" if fpr else "baseline"] = rec.io_throughput
        table[(cf, pg)] = 100 * (tp["fpr"] / tp["baseline"] - 1)

print("recycling improvement over baseline, % of read throughput")
print(f"{'CF':>6} | " + " | ".join(f"PG={pg:<4}" for pg in PGS))
for cf in CFS:
    cells = " | ".join(f"{table[(cf, pg)]:+6.1f}%" for pg in PGS)
    print(f"{cf:>6} | {cells}")

out = sys.argv[1] if len(sys.argv) > 1 else "cf_pg_sweep.csv"
with open(out, "w") as fh:
    fh.write(csv_header() + "\n")
    fh.write("\n".join(rows) + "\n")
print(f"\nwrote {out} ({len(rows)} rows)")
