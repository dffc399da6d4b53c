/**
 * Result figures over comparison runs: one curve per scheme, hours on the
 * x-axis, and the steady-cost dashed reference on the average-cost figure.
 * Rendering writes the image plus a provenance file with the input hashes.
 */

import crypto from "crypto";
import fs from "fs";
import path from "path";

import { Resvg } from "@resvg/resvg-js";

import { averageCostSeries, parseLogCsv, SchemaError, SimLogData } from "./log";
import { parseSummary, Summary } from "./summary";
import { renderChart, Series } from "./svg";

export const FIGURE_IDS = [
  "temps-zone1",
  "temps-zone2",
  "total-flow",
  "v-delta",
  "avg-cost",
] as const;
export type FigureId = (typeof FIGURE_IDS)[number];

export interface FigureSpec {
  figure: FigureId;
  inputs: string[];
  out: string;
  /** summary.json path; defaults to a sibling of the first input */
  summary?: string;
  dtSeconds?: number;
}

interface FigureDef {
  title: string;
  yLabel: string;
  series: (log: SimLogData) => number[];
  needsReference?: boolean;
}

const DEFS: Record<FigureId, FigureDef> = {
  "temps-zone1": {
    title: "Zone 1 temperature",
    yLabel: "temperature (°C)",
    series: (log) => log.x1,
  },
  "temps-zone2": {
    title: "Zone 2 temperature",
    yLabel: "temperature (°C)",
    series: (log) => log.x2,
  },
  "total-flow": {
    title: "Total supply flow",
    yLabel: "flow rate (kg/s)",
    series: (log) => log.u1.map((v, i) => v + log.u2[i]),
  },
  "v-delta": {
    title: "Tracking value function",
    yLabel: "value",
    series: (log) => log.vDelta,
  },
  "avg-cost": {
    title: "Average economic cost",
    yLabel: "average power (kW)",
    series: (log) => averageCostSeries(log),
    needsReference: true,
  },
};

function sha256(file: string): string {
  return crypto.createHash("sha256").update(fs.readFileSync(file)).digest("hex");
}

function labelFor(csvPath: string, summary: Summary | undefined): string {
  const base = path.basename(csvPath, ".csv");
  if (!summary) return base;
  const run = summary.runs.find((r) => r.csv === path.basename(csvPath) || r.label === base);
  if (!run) return base;
  if (run.scheme === "tracking") return "Tracking MPC";
  if (run.scheme === "alg1") return "m=1";
  return `m=${run.m}`;
}

function loadSummaryIfAny(spec: FigureSpec): Summary | undefined {
  const candidate = spec.summary ?? path.join(path.dirname(spec.inputs[0]), "summary.json");
  if (!fs.existsSync(candidate)) return undefined;
  return parseSummary(candidate);
}

export interface RenderResult {
  out: string;
  provenance: string;
  svg: string;
  seriesLabels: string[];
}

/** Build the figure's data series; pure over the parsed inputs. */
export function buildSeries(spec: FigureSpec): { series: Series[]; referenceY?: number } {
  if (spec.inputs.length === 0) {
    throw new SchemaError("no input CSVs given");
  }
  const def = DEFS[spec.figure];
  if (!def) {
    throw new SchemaError(`unknown figure id '${spec.figure}'`);
  }
  const summary = loadSummaryIfAny(spec);
  const dt =
    spec.dtSeconds ??
    summary?.runs.find((r) => r.dt_seconds !== undefined)?.dt_seconds ??
    600;
  const series: Series[] = spec.inputs.map((input) => {
    const log = parseLogCsv(input);
    return {
      label: labelFor(input, summary),
      x: log.t.map((t) => (t * dt) / 3600),
      y: def.series(log),
    };
  });
  let referenceY: number | undefined;
  if (def.needsReference) {
    const run = summary?.runs.find((r) => r.le_steady !== undefined);
    if (run === undefined) {
      throw new SchemaError(
        "avg-cost needs the steady economic cost; provide summary.json next to the CSVs " +
          "or pass --summary",
      );
    }
    referenceY = run.le_steady;
  }
  return { series, referenceY };
}

export function renderFigure(spec: FigureSpec): RenderResult {
  const { series, referenceY } = buildSeries(spec);
  const def = DEFS[spec.figure];
  const svg = renderChart(series, {
    title: def.title,
    xLabel: "time (h)",
    yLabel: def.yLabel,
    referenceY,
    referenceLabel: referenceY !== undefined ? "steady-state cost" : undefined,
  });
  fs.mkdirSync(path.dirname(path.resolve(spec.out)), { recursive: true });
  if (spec.out.endsWith(".svg")) {
    fs.writeFileSync(spec.out, svg);
  } else {
    const png = new Resvg(svg, { fitTo: { mode: "width", value: 1440 } }).render().asPng();
    fs.writeFileSync(spec.out, png);
  }
  const provenancePath = `${spec.out}.provenance.txt`;
  const lines = [
    `figure: ${spec.figure}`,
    ...spec.inputs.map((input) => `${sha256(input)}  ${input}`),
  ];
  fs.writeFileSync(provenancePath, lines.join("\n") + "\n");
  return {
    out: spec.out,
    provenance: provenancePath,
    svg,
    seriesLabels: series.map((s) => s.label),
  };
}
