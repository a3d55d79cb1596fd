/**
 * Export jobs: strings, templated nouns, class prompt ensembles, and image
 * files, all written as a single embedding matrix in the shared binary
 * format. Row i always corresponds to input line/file i.
 */

import { readFileSync } from "node:fs";

import { Backend } from "./backends.js";
import { EmbeddingMatrix, writeMatrix } from "./tensorio.js";

export const NOUN_TEMPLATE = "A photo of [CLASS]";

/** Standard CLIP prompt ensemble used for class embeddings. */
export const CLASS_TEMPLATES = [
  "itap of a [CLASS].",
  "a bad photo of the [CLASS].",
  "a origami [CLASS].",
  "a photo of the large [CLASS].",
  "a [CLASS] in a video game.",
  "art of the [CLASS].",
  "a photo of the small [CLASS].",
];

export interface ExportJob {
  modelId: string;
  inputPath: string;
  batchSize: number;
  normalize: boolean;
  outPath: string;
}

export function fillTemplate(template: string, name: string): string {
  return template.replaceAll("[CLASS]", name);
}

export function readLines(path: string): string[] {
  const lines = readFileSync(path, "utf-8")
    .split("\n")
    .filter((line) => line.length > 0);
  if (lines.length === 0) {
    throw new Error(`no inputs in ${path}`);
  }
  return lines;
}

function normalizeRow(row: Float32Array): Float32Array {
  let sum = 0;
  for (let i = 0; i < row.length; i++) {
    sum += row[i] * row[i];
  }
  const norm = Math.sqrt(sum);
  if (norm === 0) {
    throw new Error("cannot normalize a zero vector");
  }
  const out = new Float32Array(row.length);
  for (let i = 0; i < row.length; i++) {
    out[i] = row[i] / norm;
  }
  return out;
}

function meanRows(rows: Float32Array[]): Float32Array {
  const out = new Float32Array(rows[0].length);
  for (const row of rows) {
    for (let i = 0; i < out.length; i++) {
      out[i] += row[i];
    }
  }
  for (let i = 0; i < out.length; i++) {
    out[i] /= rows.length;
  }
  return out;
}

async function inBatches<T>(
  items: T[],
  batchSize: number,
  run: (batch: T[]) => Promise<Float32Array[]>
): Promise<Float32Array[]> {
  if (!Number.isInteger(batchSize) || batchSize < 1) {
    throw new Error(`batch size must be >= 1: ${batchSize}`);
  }
  const out: Float32Array[] = [];
  for (let start = 0; start < items.length; start += batchSize) {
    const batch = items.slice(start, start + batchSize);
    out.push(...(await run(batch)));
  }
  return out;
}

function toMatrix(
  rows: Float32Array[],
  normalize: boolean
): EmbeddingMatrix {
  const dim = rows[0].length;
  const prepared = normalize ? rows.map(normalizeRow) : rows;
  const values = new Float32Array(rows.length * dim);
  prepared.forEach((row, i) => values.set(row, i * dim));
  return { rows: rows.length, dim, normalized: normalize, values };
}

export async function exportStrings(
  backend: Backend,
  job: ExportJob
): Promise<EmbeddingMatrix> {
  const lines = readLines(job.inputPath);
  const rows = await inBatches(lines, job.batchSize, (batch) =>
    backend.embedTexts(batch)
  );
  const matrix = toMatrix(rows, job.normalize);
  writeMatrix(matrix, job.outPath);
  return matrix;
}

export async function exportNouns(
  backend: Backend,
  job: ExportJob
): Promise<EmbeddingMatrix> {
  const nouns = readLines(job.inputPath);
  const prompts = nouns.map((noun) => fillTemplate(NOUN_TEMPLATE, noun));
  const rows = await inBatches(prompts, job.batchSize, (batch) =>
    backend.embedTexts(batch)
  );
  const matrix = toMatrix(rows, job.normalize);
  writeMatrix(matrix, job.outPath);
  return matrix;
}

export async function exportClasses(
  backend: Backend,
  job: ExportJob
): Promise<EmbeddingMatrix> {
  const classes = readLines(job.inputPath);
  const prompts: string[] = [];
  for (const name of classes) {
    for (const template of CLASS_TEMPLATES) {
      prompts.push(fillTemplate(template, name));
    }
  }
  const embedded = await inBatches(prompts, job.batchSize, (batch) =>
    backend.embedTexts(batch)
  );
  const rows = classes.map((_name, c) =>
    meanRows(
      embedded.slice(c * CLASS_TEMPLATES.length, (c + 1) * CLASS_TEMPLATES.length)
    )
  );
  const matrix = toMatrix(rows, job.normalize);
  writeMatrix(matrix, job.outPath);
  return matrix;
}

export async function exportImages(
  backend: Backend,
  job: ExportJob
): Promise<EmbeddingMatrix> {
  const paths = readLines(job.inputPath);
  const blobs = paths.map((path) => readFileSync(path));
  const rows = await inBatches(blobs, job.batchSize, (batch) =>
    backend.embedBytes(batch)
  );
  const matrix = toMatrix(rows, job.normalize);
  writeMatrix(matrix, job.outPath);
  return matrix;
}
