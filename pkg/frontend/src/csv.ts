/**
 * Sweep CSV parsing and schema validation.
 *
 * The simulator emits rows under a fixed, versioned header; anything with a
 * different column set is rejected outright so charts can never be built
 * from a mismatched or hand-mutated file.
 */

export const SCHEMA_VERSION = "fprsim-metrics-v1";

export const SCHEMA_COLUMNS = [
  "schema", "scenario", "label", "seed", "cores",
  "fpr", "scheme", "va_iteration", "device",
  "io_threads", "compute_threads", "mixed_threads", "reader_threads",
  "cf", "pg", "loops",
  "simulated_ticks", "io_ops", "compute_ops",
  "io_throughput", "compute_throughput",
  "shootdowns_sent", "shootdowns_received", "shootdowns_skipped_fpr",
  "fpr_context_exit_shootdowns", "shootdowns_munmap", "shootdowns_eviction",
  "shootdowns_other",
  "tlb_hits", "tlb_misses", "tlb_full_flushes", "tlb_range_flushes",
  "tlb_entries_dropped",
  "page_faults", "cow_faults", "writebacks",
  "evictions_normal", "evictions_huge", "huge_batches",
  "accesses_fresh", "accesses_benign_stale",
  "aba_violations", "security_violations", "segfaults",
] as const;

export type Row = Record<string, string>;

export class SchemaError extends Error {}
export class ColumnError extends Error {}

export function parseCsv(text: string): Row[] {
  const lines = text.split(/\r?\n/).filter((l) => l.length > 0);
  if (lines.length === 0) {
    throw new SchemaError("empty file: no header row");
  }
  const header = lines[0].split(",");
  validateHeader(header);
  return lines.slice(1).map((line, i) => {
    const cells = line.split(",");
    if (cells.length !== header.length) {
      throw new SchemaError(`row ${i + 1} has ${cells.length} cells, header has ${header.length}`);
    }
    const row: Row = {};
    header.forEach((col, j) => (row[col] = cells[j]));
    if (row.schema !== SCHEMA_VERSION) {
      throw new SchemaError(`row ${i + 1} declares schema ${row.schema}, expected ${SCHEMA_VERSION}`);
    }
    return row;
  });
}

export function validateHeader(header: string[]): void {
  const expected = SCHEMA_COLUMNS as readonly string[];
  const missing = expected.filter((c) => !header.includes(c));
  const unknown = header.filter((c) => !expected.includes(c));
  if (missing.length || unknown.length) {
    const parts = [];
    if (missing.length) parts.push(`missing columns: ${missing.join(", ")}`);
    if (unknown.length) parts.push(`unknown columns: ${unknown.join(", ")}`);
    throw new SchemaError(`header does not match ${SCHEMA_VERSION} (${parts.join("; ")})`);
  }
  if (header.length !== expected.length) {
    throw new SchemaError(`duplicate columns in header`);
  }
}

export function numeric(row: Row, col: string): number {
  if (!(col in row)) {
    throw new ColumnError(`no such column: ${col}`);
  }
  const value = Number(row[col]);
  if (Number.isNaN(value)) {
    throw new ColumnError(`column ${col} is not numeric (value ${JSON.stringify(row[col])})`);
  }
  return value;
}
