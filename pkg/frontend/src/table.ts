/**
 * The four-scheme daily-energy table in the canonical row order.
 */

import { parseSummary, RunSummary, schemeDisplay } from "./summary";

const ROW_ORDER = ["m=1", "m=4", "m=8", "Tracking MPC"];

export class TableError extends Error {}

export interface TableResult {
  text: string;
  rows: { scheme: string; kwh: number | null }[];
  missing: string[];
}

export function buildTable(summaryPaths: string[]): TableResult {
  const runs: RunSummary[] = [];
  for (const p of summaryPaths) {
    runs.push(...parseSummary(p).runs);
  }
  const byScheme = new Map<string, RunSummary>();
  for (const run of runs) {
    const key = schemeDisplay(run);
    if (byScheme.has(key)) {
      throw new TableError(`duplicate scheme entry '${key}'`);
    }
    byScheme.set(key, run);
  }
  const rows = ROW_ORDER.filter((k) => byScheme.has(k) || ROW_ORDER.length > 0).map((key) => {
    const run = byScheme.get(key);
    return { scheme: key, kwh: run?.kwh ?? null };
  });
  const extras = [...byScheme.keys()].filter((k) => !ROW_ORDER.includes(k));
  for (const extra of extras) {
    rows.push({ scheme: extra, kwh: byScheme.get(extra)?.kwh ?? null });
  }
  const missing = rows.filter((r) => r.kwh === null).map((r) => r.scheme);

  const header = ["MPC scheme", ...rows.map((r) => r.scheme)];
  const values = ["Consumption (kWh)", ...rows.map((r) => (r.kwh === null ? "absent" : r.kwh.toFixed(1)))];
  const widths = header.map((h, i) => Math.max(h.length, values[i].length));
  const line = (cells: string[]) =>
    "| " + cells.map((c, i) => c.padEnd(widths[i])).join(" | ") + " |";
  const rule = "|" + widths.map((w) => "-".repeat(w + 2)).join("|") + "|";
  const text = [line(header), rule, line(values)].join("\n");
  return { text, rows, missing };
}
