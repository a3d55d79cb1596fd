/**
 * Embedding backends. `hash-<dim>` is a deterministic offline backend that
 * maps any byte string to a reproducible pseudo-random vector; CLIP-style
 * model ids are resolved through @xenova/transformers when that package is
 * installed (live mode).
 */

import { createHash } from "node:crypto";

export interface Backend {
  readonly dim: number;
  embedTexts(texts: string[]): Promise<Float32Array[]>;
  embedBytes(blobs: Buffer[]): Promise<Float32Array[]>;
}

/** Counter-mode sha256 stream turned into standard normals (Box-Muller). */
function hashVector(seedBytes: Buffer, dim: number): Float32Array {
  const out = new Float32Array(dim);
  let counter = 0;
  let pool: Buffer = Buffer.alloc(0);
  let offset = 0;

  const nextUniform = (): number => {
    if (offset + 4 > pool.length) {
      const block = Buffer.alloc(4);
      block.writeUInt32LE(counter++, 0);
      pool = createHash("sha256").update(seedBytes).update(block).digest();
      offset = 0;
    }
    const value = pool.readUInt32LE(offset);
    offset += 4;
    return (value + 0.5) / 2 ** 32; // open interval, safe for log()
  };

  for (let i = 0; i < dim; i += 2) {
    const u1 = nextUniform();
    const u2 = nextUniform();
    const radius = Math.sqrt(-2.0 * Math.log(u1));
    out[i] = radius * Math.cos(2.0 * Math.PI * u2);
    if (i + 1 < dim) {
      out[i + 1] = radius * Math.sin(2.0 * Math.PI * u2);
    }
  }
  return out;
}

export class HashBackend implements Backend {
  readonly dim: number;

  constructor(dim: number) {
    if (!Number.isInteger(dim) || dim < 1) {
      throw new Error(`hash backend dim must be a positive integer: ${dim}`);
    }
    this.dim = dim;
  }

  async embedTexts(texts: string[]): Promise<Float32Array[]> {
    return texts.map((text) =>
      hashVector(Buffer.from(text, "utf-8"), this.dim)
    );
  }

  async embedBytes(blobs: Buffer[]): Promise<Float32Array[]> {
    return blobs.map((blob) => hashVector(blob, this.dim));
  }
}

/** Lazy wrapper around @xenova/transformers for real CLIP inference. */
export class TransformersBackend implements Backend {
  readonly dim: number;
  private readonly modelId: string;
  private extractorPromise?: Promise<any>;

  constructor(modelId: string, dim = 512) {
    this.modelId = modelId;
    this.dim = dim;
  }

  private async extractor(): Promise<any> {
    if (!this.extractorPromise) {
      this.extractorPromise = (async () => {
        let mod: any;
        try {
          // optional dependency, resolved only in live mode
          mod = await import("@xenova/transformers" as string);
        } catch {
          throw new Error(
            `model '${this.modelId}' needs the optional ` +
              "@xenova/transformers package (npm install @xenova/transformers)"
          );
        }
        return mod.pipeline("feature-extraction", this.modelId);
      })();
    }
    return this.extractorPromise;
  }

  async embedTexts(texts: string[]): Promise<Float32Array[]> {
    const extract = await this.extractor();
    const out: Float32Array[] = [];
    for (const text of texts) {
      const result = await extract(text, { pooling: "mean" });
      out.push(Float32Array.from(result.data as Float32Array));
    }
    return out;
  }

  async embedBytes(_blobs: Buffer[]): Promise<Float32Array[]> {
    throw new Error(
      "image inference requires a CLIP image pipeline; " +
        "use a text command or the hash backend"
    );
  }
}

export function resolveBackend(modelId: string): Backend {
  const match = /^hash-(\d+)$/.exec(modelId);
  if (match) {
    return new HashBackend(Number(match[1]));
  }
  return new TransformersBackend(modelId);
}
