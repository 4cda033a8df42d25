/**
 * Deterministic SVG rendering: fixed canvas, fixed styling, series
 * distinguishable in grayscale by dash pattern and marker shape.
 */
import { SweepTable } from "./table";

const W = 720;
const H = 460;
const MARGIN = { left: 80, right: 160, top: 40, bottom: 60 };

const DASHES = ["", "8 4", "2 3", "12 4 2 4", "6 2 2 2"];
const GRAYS = ["#000000", "#555555", "#999999", "#333333", "#777777"];

function esc(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

function fmt(v: number): string {
  if (!Number.isFinite(v)) return "0";
  return Number(v.toFixed(3)).toString();
}

function ticks(lo: number, hi: number, n = 5): number[] {
  if (lo === hi) return [lo];
  const out = [];
  for (let i = 0; i <= n; i++) out.push(lo + ((hi - lo) * i) / n);
  return out;
}

function marker(shape: number, x: number, y: number): string {
  const r = 4;
  switch (shape % 3) {
    case 0:
      return `<circle cx="${fmt(x)}" cy="${fmt(y)}" r="${r}" fill="inherit"/>`;
    case 1:
      return `<rect x="${fmt(x - r)}" y="${fmt(y - r)}" width="${2 * r}" height="${2 * r}" fill="inherit"/>`;
    default:
      return `<path d="M ${fmt(x)} ${fmt(y - r)} L ${fmt(x + r)} ${fmt(y + r)} L ${fmt(x - r)} ${fmt(y + r)} Z" fill="inherit"/>`;
  }
}

function frame(title: string, xLabel: string, yLabel: string, body: string): string {
  return [
    `<svg xmlns="http://www.w3.org/2000/svg" width="${W}" height="${H}" viewBox="0 0 ${W} ${H}" font-family="monospace" font-size="12">`,
    `<rect width="${W}" height="${H}" fill="#ffffff"/>`,
    `<text x="${W / 2}" y="20" text-anchor="middle" font-size="14">${esc(title)}</text>`,
    `<text x="${(MARGIN.left + W - MARGIN.right) / 2}" y="${H - 12}" text-anchor="middle">${esc(xLabel)}</text>`,
    `<text x="18" y="${(MARGIN.top + H - MARGIN.bottom) / 2}" text-anchor="middle" transform="rotate(-90 18 ${(MARGIN.top + H - MARGIN.bottom) / 2})">${esc(yLabel)}</text>`,
    body,
    `</svg>`,
  ].join("\n");
}

export function renderLines(table: SweepTable, x: string, y: string,
                            seriesCol: string, title?: string): string {
  const series = table.series(x, y, seriesCol);
  const allX: number[] = [];
  const allY: number[] = [];
  for (const line of series.values()) {
    for (const [xv, yv] of line) {
      allX.push(xv);
      allY.push(yv);
    }
  }
  const xLo = Math.min(...allX);
  const xHi = Math.max(...allX);
  const yLo = Math.min(0, ...allY);
  const yHi = Math.max(...allY);
  const plotW = W - MARGIN.left - MARGIN.right;
  const plotH = H - MARGIN.top - MARGIN.bottom;
  const sx = (v: number) => MARGIN.left + (xHi === xLo ? plotW / 2 : ((v - xLo) / (xHi - xLo)) * plotW);
  const sy = (v: number) => H - MARGIN.bottom - (yHi === yLo ? plotH / 2 : ((v - yLo) / (yHi - yLo)) * plotH);

  const parts: string[] = [];
  parts.push(`<rect x="${MARGIN.left}" y="${MARGIN.top}" width="${plotW}" height="${plotH}" fill="none" stroke="#000000"/>`);
  for (const t of ticks(xLo, xHi)) {
    parts.push(`<line x1="${fmt(sx(t))}" y1="${H - MARGIN.bottom}" x2="${fmt(sx(t))}" y2="${H - MARGIN.bottom + 5}" stroke="#000000"/>`);
    parts.push(`<text x="${fmt(sx(t))}" y="${H - MARGIN.bottom + 20}" text-anchor="middle">${fmt(t)}</text>`);
  }
  for (const t of ticks(yLo, yHi)) {
    parts.push(`<line x1="${MARGIN.left - 5}" y1="${fmt(sy(t))}" x2="${MARGIN.left}" y2="${fmt(sy(t))}" stroke="#000000"/>`);
    parts.push(`<text x="${MARGIN.left - 8}" y="${fmt(sy(t) + 4)}" text-anchor="end">${fmt(t)}</text>`);
  }

  let idx = 0;
  for (const [name, line] of series) {
    const color = GRAYS[idx % GRAYS.length];
    const dash = DASHES[idx % DASHES.length];
    const pts = [...line.entries()].map(([xv, yv]) => `${fmt(sx(xv))},${fmt(sy(yv))}`).join(" ");
    parts.push(`<g stroke="${color}" fill="${color}">`);
    parts.push(`<polyline points="${pts}" fill="none" stroke-width="2"${dash ? ` stroke-dasharray="${dash}"` : ""}/>`);
    for (const [xv, yv] of line) {
      parts.push(marker(idx, sx(xv), sy(yv)));
    }
    const ly = MARGIN.top + 16 + idx * 20;
    parts.push(`<line x1="${W - MARGIN.right + 10}" y1="${ly - 4}" x2="${W - MARGIN.right + 40}" y2="${ly - 4}" stroke-width="2"${dash ? ` stroke-dasharray="${dash}"` : ""}/>`);
    parts.push(`<text x="${W - MARGIN.right + 46}" y="${ly}" stroke="none">${esc(name)}</text>`);
    parts.push(`</g>`);
    idx += 1;
  }
  return frame(title ?? `${y} vs ${x}`, x, y, parts.join("\n"));
}

export function renderHeatmap(table: SweepTable, x: string, y: string,
                              value: string, title?: string): string {
  const { xs, ys, cells, improvement } = table.grid(x, y, value);
  const plotW = W - MARGIN.left - MARGIN.right;
  const plotH = H - MARGIN.top - MARGIN.bottom;
  const cw = plotW / xs.length;
  const ch = plotH / ys.length;
  const values = [...cells.values()];
  const lo = Math.min(...values);
  const hi = Math.max(...values);

  const shade = (v: number) => {
    // light for low, dark for high; constant when the grid is flat
    const t = hi === lo ? 0.5 : (v - lo) / (hi - lo);
    const level = Math.round(235 - t * 160);
    return `rgb(${level},${level},${level})`;
  };

  const parts: string[] = [];
  xs.forEach((xv, i) => {
    ys.forEach((yv, j) => {
      const v = cells.get(`${xv}|${yv}`);
      if (v === undefined) return;
      const cx = MARGIN.left + i * cw;
      const cy = MARGIN.top + (ys.length - 1 - j) * ch;
      parts.push(`<rect x="${fmt(cx)}" y="${fmt(cy)}" width="${fmt(cw)}" height="${fmt(ch)}" fill="${shade(v)}" stroke="#000000"/>`);
      const label = improvement ? `${v >= 0 ? "+" : ""}${v.toFixed(1)}%` : fmt(v);
      parts.push(`<text x="${fmt(cx + cw / 2)}" y="${fmt(cy + ch / 2 + 4)}" text-anchor="middle">${label}</text>`);
    });
  });
  xs.forEach((xv, i) => {
    parts.push(`<text x="${fmt(MARGIN.left + i * cw + cw / 2)}" y="${H - MARGIN.bottom + 20}" text-anchor="middle">${fmt(xv)}</text>`);
  });
  ys.forEach((yv, j) => {
    parts.push(`<text x="${MARGIN.left - 8}" y="${fmt(MARGIN.top + (ys.length - 1 - j) * ch + ch / 2 + 4)}" text-anchor="end">${fmt(yv)}</text>`);
  });
  const kind = improvement ? `relative improvement of ${value}, fpr on vs off (%)` : value;
  parts.push(`<text x="${W - MARGIN.right + 10}" y="${MARGIN.top + 12}" font-size="11">${esc(kind)}</text>`);
  return frame(title ?? `${value} over ${x} x ${y}`, x, y, parts.join("\n"));
}
