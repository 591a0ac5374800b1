/**
 * Sentence encoders behind one async batch interface.
 *
 * The deterministic stub encoder is the only encoder tests rely on; real
 * models plug in at runtime as a JS module path exporting `createEncoder`.
 */

import { pathToFileURL } from "node:url";

import { Splitmix64, mix64 } from "./rng.js";

export type Side = "ctx" | "can";

export interface EncoderOptions {
  side: Side;
  dim: number;
  maxLength: number;
  pooling: "mean" | "cls";
}

export interface Encoder {
  readonly name: string;
  readonly dim: number;
  encodeBatch(texts: string[]): Promise<Float32Array[]>;
}

export class EncoderLoadError extends Error {}

function fnv1a64(text: string): bigint {
  const bytes = Buffer.from(text, "utf-8");
  let hash = 0xcbf29ce484222325n;
  for (const b of bytes) {
    hash ^= BigInt(b);
    hash = (hash * 0x100000001b3n) & ((1n << 64n) - 1n);
  }
  return hash;
}

/** Deterministic pseudo-random unit vector for one token on one tower side. */
function tokenVector(token: string, side: Side, dim: number): Float64Array {
  const stream = new Splitmix64(fnv1a64(token) ^ mix64(fnv1a64(side)), 0xe0c);
  const out = new Float64Array(dim);
  for (let j = 0; j < dim; j++) {
    // 53 mantissa bits of the draw, mapped to [-1, 1)
    out[j] = (Number(stream.next64() >> 11n) / 2 ** 53) * 2 - 1;
  }
  return out;
}

/** Hash-based stand-in for a dual-encoder tower: pooled token vectors, unit norm. */
export class StubEncoder implements Encoder {
  readonly name = "stub";
  readonly dim: number;
  private readonly side: Side;
  private readonly maxLength: number;
  private readonly pooling: "mean" | "cls";

  constructor(opts: EncoderOptions) {
    if (opts.dim < 1) throw new EncoderLoadError("encoder dimension must be >= 1");
    this.dim = opts.dim;
    this.side = opts.side;
    this.maxLength = opts.maxLength;
    this.pooling = opts.pooling;
  }

  private encodeOne(text: string): Float32Array {
    const tokens = Array.from(text).slice(0, this.maxLength);
    const acc = new Float64Array(this.dim);
    if (tokens.length === 0) {
      acc[0] = 1.0; // empty-text convention shared with the engine
      return Float32Array.from(acc);
    }
    const pooled = this.pooling === "cls" ? tokens.slice(0, 1) : tokens;
    for (const tok of pooled) {
      const vec = tokenVector(tok, this.side, this.dim);
      for (let j = 0; j < this.dim; j++) acc[j] += vec[j];
    }
    let norm = 0;
    for (let j = 0; j < this.dim; j++) norm += acc[j] * acc[j];
    norm = Math.sqrt(norm);
    if (norm === 0) {
      acc.fill(0);
      acc[0] = 1.0;
    } else {
      for (let j = 0; j < this.dim; j++) acc[j] /= norm;
    }
    return Float32Array.from(acc);
  }

  async encodeBatch(texts: string[]): Promise<Float32Array[]> {
    return texts.map((t) => this.encodeOne(t));
  }
}

/**
 * Resolve an encoder identifier: "stub" or a path to a JS module exporting
 * `createEncoder(opts: EncoderOptions): Encoder | Promise<Encoder>`.
 */
export async function loadEncoder(identifier: string, opts: EncoderOptions): Promise<Encoder> {
  if (identifier === "stub") return new StubEncoder(opts);
  let mod: { createEncoder?: (opts: EncoderOptions) => Encoder | Promise<Encoder> };
  try {
    mod = await import(pathToFileURL(identifier).href);
  } catch (err) {
    throw new EncoderLoadError(`cannot load encoder module ${identifier}: ${err}`);
  }
  if (typeof mod.createEncoder !== "function") {
    throw new EncoderLoadError(`${identifier} does not export createEncoder()`);
  }
  return mod.createEncoder(opts);
}
