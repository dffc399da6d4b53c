#!/usr/bin/env node
/**
 * empc-plots: figures and the energy table from simulation logs.
 *
 *   empc-plots plot --figure avg-cost --inputs out/*.csv --out avg.png
 *   empc-plots table2 --inputs out/summary.json
 */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { FIGURE_IDS, FigureId, renderFigure } from "./figures";
import { buildTable, TableError } from "./table";
import { SchemaError } from "./log";

export async function main(argv: string[]): Promise<number> {
  let exitCode = 0;
  await yargs(argv)
    .command(
      "plot",
      "render one figure from comparison CSV logs",
      (y) =>
        y
          .option("figure", { choices: FIGURE_IDS, demandOption: true, type: "string" })
          .option("inputs", { type: "string", array: true, demandOption: true })
          .option("out", { type: "string", demandOption: true })
          .option("summary", { type: "string" })
          .option("dt", { type: "number", describe: "sampling period in seconds" }),
      (args) => {
        try {
          const result = renderFigure({
            figure: args.figure as FigureId,
            inputs: args.inputs as string[],
            out: args.out as string,
            summary: args.summary,
            dtSeconds: args.dt,
          });
          console.log(`wrote ${result.out} (+ ${result.provenance})`);
          console.log(`series: ${result.seriesLabels.join(", ")}`);
        } catch (err) {
          exitCode = reportError(err);
        }
      },
    )
    .command(
      "table2",
      "print the four-scheme daily energy table",
      (y) => y.option("inputs", { type: "string", array: true, demandOption: true }),
      (args) => {
        try {
          const result = buildTable(args.inputs as string[]);
          console.log(result.text);
          if (result.missing.length > 0) {
            console.error(`missing schemes: ${result.missing.join(", ")}`);
            exitCode = 1;
          }
        } catch (err) {
          exitCode = reportError(err);
        }
      },
    )
    .demandCommand(1)
    .strict()
    .fail((msg, err) => {
      if (err) throw err;
      console.error(msg);
      exitCode = 2;
    })
    .parseAsync();
  return exitCode;
}

function reportError(err: unknown): number {
  if (err instanceof SchemaError || err instanceof TableError) {
    console.error(String(err.message));
    return 1;
  }
  if (err instanceof Error && "code" in err && (err as NodeJS.ErrnoException).code === "ENOENT") {
    console.error(`input not found: ${(err as NodeJS.ErrnoException).path}`);
    return 1;
  }
  console.error(err);
  return 2;
}

if (require.main === module) {
  main(hideBin(process.argv)).then((code) => {
    process.exitCode = code;
  });
}
