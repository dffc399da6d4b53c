/** summary.json contract from the simulation CLI. */

import fs from "fs";
import { z } from "zod";

const runSchema = z.object({
  label: z.string(),
  scheme: z.enum(["tracking", "alg1", "alg2"]),
  m: z.number().nullable(),
  completed: z.boolean(),
  kwh: z.number().optional(),
  final_distance: z.number().optional(),
  avg_cost_final: z.number().optional(),
  le_steady: z.number().optional(),
  dt_seconds: z.number().optional(),
  csv: z.string(),
});

const summarySchema = z.object({
  scenario: z.string(),
  runs: z.array(runSchema),
});

export type RunSummary = z.infer<typeof runSchema>;
export type Summary = z.infer<typeof summarySchema>;

export function parseSummary(path: string): Summary {
  const doc = JSON.parse(fs.readFileSync(path, "utf8"));
  const result = summarySchema.safeParse(doc);
  if (!result.success) {
    throw new Error(`${path}: not a valid summary document: ${result.error.issues[0].message}`);
  }
  return result.data;
}

/** Display name of a run in the comparison table's terms. */
export function schemeDisplay(run: RunSummary): string {
  if (run.scheme === "tracking") return "Tracking MPC";
  if (run.scheme === "alg1") return "m=1";
  return `m=${run.m}`;
}
