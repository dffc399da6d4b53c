/**
 * Simulation-log CSV contract: parsing and schema validation.
 *
 * The producing harness writes one row per control step with a fixed header;
 * floats carry 17 significant digits. Parsing is strict: a missing column is
 * an error naming that column, and a file without data rows is rejected.
 */

import fs from "fs";
import Papa from "papaparse";

export const REQUIRED_COLUMNS = [
  "t",
  "x1",
  "x2",
  "u1",
  "u2",
  "v_delta",
  "j_delta",
  "v_econ",
  "le_inst",
  "level_eta",
  "level_xi",
  "level_zeta",
  "status",
  "fallback",
] as const;

export interface SimLogData {
  path: string;
  t: number[];
  x1: number[];
  x2: number[];
  u1: number[];
  u2: number[];
  vDelta: number[];
  jDelta: number[];
  vEcon: number[];
  leInst: number[];
  status: string[];
}

export class SchemaError extends Error {}

export function parseLogCsv(path: string): SimLogData {
  const text = fs.readFileSync(path, "utf8");
  const parsed = Papa.parse<Record<string, string>>(text.trim(), {
    header: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    throw new SchemaError(`${path}: CSV parse error: ${parsed.errors[0].message}`);
  }
  const fields = parsed.meta.fields ?? [];
  for (const col of REQUIRED_COLUMNS) {
    if (!fields.includes(col)) {
      throw new SchemaError(`${path}: missing column '${col}'`);
    }
  }
  const rows = parsed.data;
  if (rows.length === 0) {
    throw new SchemaError(`${path}: no data rows`);
  }
  const num = (col: string) =>
    rows.map((r, i) => {
      const v = Number(r[col]);
      if (Number.isNaN(v) && r[col] !== "nan") {
        throw new SchemaError(`${path}: row ${i + 1}, column '${col}' is not numeric: ${r[col]}`);
      }
      return v;
    });
  return {
    path,
    t: num("t"),
    x1: num("x1"),
    x2: num("x2"),
    u1: num("u1"),
    u2: num("u2"),
    vDelta: num("v_delta"),
    jDelta: num("j_delta"),
    vEcon: num("v_econ"),
    leInst: num("le_inst"),
    status: rows.map((r) => r["status"]),
  };
}

/** Running mean of the instantaneous economic cost. */
export function averageCostSeries(log: SimLogData): number[] {
  const out: number[] = [];
  let acc = 0;
  for (let i = 0; i < log.leInst.length; i++) {
    acc += log.leInst[i];
    out.push(acc / (i + 1));
  }
  return out;
}
