#!/usr/bin/env node
/**
 * plotkit: render sweep CSVs into SVG charts.
 *
 *   plotkit <csv> --kind lines   --x COL --y COL --series COL --out FILE
 *   plotkit <csv> --kind heatmap --x COL --y COL --series COL --out FILE
 *
 * For heatmaps --series names the metric column; when the sweep contains
 * fpr on/off pairs per cell the rendered value is the relative improvement
 * in percent, otherwise the plain mean.
 */
import { readFileSync, writeFileSync } from "fs";

import { ColumnError, SchemaError } from "./csv";
import { renderHeatmap, renderLines } from "./chart";
import { SweepTable } from "./table";

export interface Options {
  csv: string;
  kind: "lines" | "heatmap";
  x: string;
  y: string;
  series: string;
  out: string;
  title?: string;
}

export function parseArgs(argv: string[]): Options {
  const positional: string[] = [];
  const flags: Record<string, string> = {};
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (arg.startsWith("--")) {
      const key = arg.slice(2);
      const value = argv[++i];
      if (value === undefined) throw new Error(`flag --${key} needs a value`);
      flags[key] = value;
    } else {
      positional.push(arg);
    }
  }
  if (positional.length !== 1) {
    throw new Error("usage: plotkit <csv> --kind lines|heatmap --x COL --y COL --series COL --out FILE");
  }
  for (const required of ["kind", "x", "y", "series", "out"]) {
    if (!(required in flags)) throw new Error(`missing --${required}`);
  }
  if (flags.kind !== "lines" && flags.kind !== "heatmap") {
    throw new Error(`--kind must be lines or heatmap, got ${flags.kind}`);
  }
  return {
    csv: positional[0],
    kind: flags.kind,
    x: flags.x,
    y: flags.y,
    series: flags.series,
    out: flags.out,
    title: flags.title,
  };
}

export function render(options: Options): string {
  const table = SweepTable.fromText(readFileSync(options.csv, "utf8"));
  if (options.kind === "lines") {
    return renderLines(table, options.x, options.y, options.series, options.title);
  }
  return renderHeatmap(table, options.x, options.y, options.series, options.title);
}

export function main(argv: string[]): number {
  try {
    const options = parseArgs(argv);
    const svg = render(options);
    writeFileSync(options.out, svg + "\n");
    console.log(`wrote ${options.out}`);
    return 0;
  } catch (err) {
    if (err instanceof SchemaError) {
      console.error(`schema error: ${(err as Error).message}`);
    } else if (err instanceof ColumnError) {
      console.error(`column error: ${(err as Error).message}`);
    } else {
      console.error(`error: ${(err as Error).message}`);
    }
    return 1;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
