/**
 * Embedding file writer: magic "DSHCEMB1" | u32-LE n | u32-LE d |
 * n*d float32-LE row-major.  Output is written atomically (temp + rename).
 */

import { readFileSync, renameSync, rmSync, writeFileSync } from "node:fs";

export const EMBEDDING_MAGIC = "DSHCEMB1";

export class EmbeddingFormatError extends Error {}

export function encodeEmbeddings(vectors: Float32Array[], d: number): Buffer {
  const n = vectors.length;
  const buf = Buffer.alloc(16 + n * d * 4);
  buf.write(EMBEDDING_MAGIC, 0, "ascii");
  buf.writeUInt32LE(n, 8);
  buf.writeUInt32LE(d, 12);
  let offset = 16;
  for (const vec of vectors) {
    if (vec.length !== d) {
      throw new EmbeddingFormatError(`row has dimension ${vec.length}, expected ${d}`);
    }
    for (let j = 0; j < d; j++) {
      buf.writeFloatLE(vec[j], offset);
      offset += 4;
    }
  }
  return buf;
}

export function writeEmbeddings(path: string, vectors: Float32Array[], d: number): void {
  const payload = encodeEmbeddings(vectors, d);
  const tmp = `${path}.tmp-${process.pid}`;
  try {
    writeFileSync(tmp, payload);
    renameSync(tmp, path);
  } catch (err) {
    rmSync(tmp, { force: true });
    throw err;
  }
}

export function readEmbeddings(path: string): { n: number; d: number; vectors: Float32Array[] } {
  const buf = readFileSync(path);
  if (buf.length < 16 || buf.toString("ascii", 0, 8) !== EMBEDDING_MAGIC) {
    throw new EmbeddingFormatError(`${path}: bad magic, not an embedding file`);
  }
  const n = buf.readUInt32LE(8);
  const d = buf.readUInt32LE(12);
  if (buf.length !== 16 + n * d * 4) {
    throw new EmbeddingFormatError(`${path}: expected ${16 + n * d * 4} bytes, got ${buf.length}`);
  }
  const vectors: Float32Array[] = [];
  for (let i = 0; i < n; i++) {
    const row = new Float32Array(d);
    for (let j = 0; j < d; j++) row[j] = buf.readFloatLE(16 + (i * d + j) * 4);
    vectors.push(row);
  }
  return { n, d, vectors };
}
