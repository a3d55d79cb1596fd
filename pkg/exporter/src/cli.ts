#!/usr/bin/env node
/**
 * kec-export: one-shot embedding export.
 *
 * Usage:
 *   kec-export images|nouns|classes|strings --model <id> --batch-size N
 *              [--normalize] --input <path> --out <path>
 *
 * `--model hash-<dim>` selects the deterministic offline backend; any other
 * id is treated as a transformers model for live embedding.
 */

import { parseArgs } from "node:util";

import { resolveBackend } from "./backends.js";
import {
  ExportJob,
  exportClasses,
  exportImages,
  exportNouns,
  exportStrings,
} from "./export.js";

const COMMANDS = {
  images: exportImages,
  nouns: exportNouns,
  classes: exportClasses,
  strings: exportStrings,
} as const;

async function main(): Promise<void> {
  const [command, ...rest] = process.argv.slice(2);
  if (!command || !(command in COMMANDS)) {
    throw new Error(
      `usage: kec-export ${Object.keys(COMMANDS).join("|")} ` +
        "--model <id> --batch-size N [--normalize] --input <path> --out <path>"
    );
  }
  const { values } = parseArgs({
    args: rest,
    options: {
      model: { type: "string" },
      "batch-size": { type: "string", default: "8192" },
      normalize: { type: "boolean", default: false },
      input: { type: "string" },
      out: { type: "string" },
    },
  });
  if (!values.model || !values.input || !values.out) {
    throw new Error("--model, --input, and --out are required");
  }
  const job: ExportJob = {
    modelId: values.model,
    inputPath: values.input,
    batchSize: Number(values["batch-size"]),
    normalize: values.normalize ?? false,
    outPath: values.out,
  };
  const backend = resolveBackend(job.modelId);
  const run = COMMANDS[command as keyof typeof COMMANDS];
  const matrix = await run(backend, job);
  process.stdout.write(
    `wrote ${matrix.rows}x${matrix.dim} matrix to ${job.outPath}\n`
  );
}

main().catch((err: Error) => {
  process.stderr.write(`error: ${err.message}\n`);
  process.exit(1);
});
