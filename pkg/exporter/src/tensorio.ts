/**
 * Binary tensor format shared with the Python pipeline.
 *
 * Layout: 8-byte magic, three little-endian u32 fields (rows, dim, flags),
 * then rows*dim little-endian f32 values in row-major order. Flag bit 0
 * marks row-normalized matrices.
 */

import { readFileSync, writeFileSync } from "node:fs";

export const MAGIC = Buffer.from("KECEMB1\0", "latin1");
export const FLAG_NORMALIZED = 1;
const HEADER_BYTES = MAGIC.length + 12;
const MAX_ELEMENTS = 2 ** 31;

export interface EmbeddingMatrix {
  rows: number;
  dim: number;
  normalized: boolean;
  values: Float32Array; // length rows * dim, row-major
}

export function encodeMatrix(matrix: EmbeddingMatrix): Buffer {
  const { rows, dim, values } = matrix;
  if (rows < 1 || dim < 1) {
    throw new Error(`invalid shape ${rows}x${dim}`);
  }
  if (values.length !== rows * dim) {
    throw new Error(
      `payload length ${values.length} != ${rows}x${dim}`
    );
  }
  for (let i = 0; i < values.length; i++) {
    if (!Number.isFinite(values[i])) {
      throw new Error(`non-finite value at index ${i}`);
    }
  }
  const out = Buffer.alloc(HEADER_BYTES + values.length * 4);
  MAGIC.copy(out, 0);
  out.writeUInt32LE(rows, MAGIC.length);
  out.writeUInt32LE(dim, MAGIC.length + 4);
  out.writeUInt32LE(matrix.normalized ? FLAG_NORMALIZED : 0, MAGIC.length + 8);
  for (let i = 0; i < values.length; i++) {
    out.writeFloatLE(values[i], HEADER_BYTES + i * 4);
  }
  return out;
}

export function decodeMatrix(data: Buffer): EmbeddingMatrix {
  if (data.length < HEADER_BYTES) {
    throw new Error("truncated header");
  }
  if (!data.subarray(0, MAGIC.length).equals(MAGIC)) {
    throw new Error("bad magic");
  }
  const rows = data.readUInt32LE(MAGIC.length);
  const dim = data.readUInt32LE(MAGIC.length + 4);
  const flags = data.readUInt32LE(MAGIC.length + 8);
  if (rows < 1 || dim < 1 || rows * dim > MAX_ELEMENTS) {
    throw new Error(`header overflow: ${rows}x${dim}`);
  }
  const expected = HEADER_BYTES + rows * dim * 4;
  if (data.length !== expected) {
    throw new Error(
      `truncated payload: have ${data.length} bytes, need ${expected}`
    );
  }
  const values = new Float32Array(rows * dim);
  for (let i = 0; i < values.length; i++) {
    values[i] = data.readFloatLE(HEADER_BYTES + i * 4);
    if (!Number.isFinite(values[i])) {
      throw new Error(`non-finite value at index ${i}`);
    }
  }
  return { rows, dim, normalized: (flags & FLAG_NORMALIZED) !== 0, values };
}

export function writeMatrix(matrix: EmbeddingMatrix, path: string): void {
  writeFileSync(path, encodeMatrix(matrix));
}

export function readMatrix(path: string): EmbeddingMatrix {
  return decodeMatrix(readFileSync(path));
}
