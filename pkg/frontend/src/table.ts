/**
 * A parsed sweep keyed by grid parameters, with repeat averaging.
 */
import { ColumnError, Row, numeric, parseCsv } from "./csv";

export class SweepTable {
  constructor(public readonly rows: Row[]) {
    if (rows.length === 0) {
      throw new ColumnError("empty table: no data rows");
    }
  }

  static fromText(text: string): SweepTable {
    return new SweepTable(parseCsv(text));
  }

  requireColumns(...cols: string[]): void {
    for (const col of cols) {
      if (!(col in this.rows[0])) {
        throw new ColumnError(`no such column: ${col}`);
      }
    }
  }

  /** Mean of `y` for rows grouped by (x, series); repeats collapse. */
  series(x: string, y: string, series: string): Map<string, Map<number, number>> {
    this.requireColumns(x, y, series);
    const sums = new Map<string, Map<number, { total: number; n: number }>>();
    for (const row of this.rows) {
      const sKey = row[series];
      const xVal = numeric(row, x);
      const yVal = numeric(row, y);
      if (!sums.has(sKey)) sums.set(sKey, new Map());
      const line = sums.get(sKey)!;
      const cell = line.get(xVal) ?? { total: 0, n: 0 };
      cell.total += yVal;
      cell.n += 1;
      line.set(xVal, cell);
    }
    const out = new Map<string, Map<number, number>>();
    for (const [sKey, line] of [...sums.entries()].sort()) {
      const means = new Map<number, number>();
      for (const [xVal, { total, n }] of [...line.entries()].sort((a, b) => a[0] - b[0])) {
        means.set(xVal, total / n);
      }
      out.set(sKey, means);
    }
    return out;
  }

  /**
   * Heatmap cells over the (x, y) grid. When both fpr=on and fpr=off rows
   * exist for a cell, the value is the relative improvement of on over off
   * in percent of `value`; otherwise it is the plain mean of `value`.
   */
  grid(x: string, y: string, value: string): {
    xs: number[]; ys: number[]; cells: Map<string, number>; improvement: boolean;
  } {
    this.requireColumns(x, y, value, "fpr");
    const buckets = new Map<string, { on: number[]; off: number[] }>();
    const xs = new Set<number>();
    const ys = new Set<number>();
    for (const row of this.rows) {
      const xVal = numeric(row, x);
      const yVal = numeric(row, y);
      xs.add(xVal);
      ys.add(yVal);
      const key = `${xVal}|${yVal}`;
      if (!buckets.has(key)) buckets.set(key, { on: [], off: [] });
      buckets.get(key)![row.fpr === "on" ? "on" : "off"].push(numeric(row, value));
    }
    const paired = [...buckets.values()].every((b) => b.on.length > 0 && b.off.length > 0);
    const cells = new Map<string, number>();
    for (const [key, b] of buckets) {
      const mean = (v: number[]) => v.reduce((a, c) => a + c, 0) / v.length;
      if (paired) {
        cells.set(key, (mean(b.on) / mean(b.off) - 1) * 100);
      } else {
        cells.set(key, mean([...b.on, ...b.off]));
      }
    }
    return {
      xs: [...xs].sort((a, b) => a - b),
      ys: [...ys].sort((a, b) => a - b),
      cells,
      improvement: paired,
    };
  }
}
