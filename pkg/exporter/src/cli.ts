#!/usr/bin/env node
/**
 * semrecall-export: encode a corpus into engine-readable embedding files, or
 * emit a training-pair TSV matching the engine's sampler.
 *
 * Commands:
 *   export        --corpus F --side ctx|can --out F [--encoder stub|module.js]
 *                 [--dim N] [--batch-size N] [--max-len N] [--pooling mean|cls]
 *   export-pairs  --corpus F --out F [--negatives K] [--seed N]
 */

import { realpathSync, renameSync, rmSync, writeFileSync } from "node:fs";
import process from "node:process";
import { fileURLToPath } from "node:url";

import { loadCorpus } from "./corpus.js";
import { EncoderOptions, Side, loadEncoder } from "./encoders.js";
import { writeEmbeddings } from "./format.js";
import { makePairs, pairsToTsv } from "./pairs.js";

const USAGE = `usage: semrecall-export <export|export-pairs> [flags]
  export        --corpus F --side ctx|can --out F [--encoder stub|module.js]
                [--dim N] [--batch-size N] [--max-len N] [--pooling mean|cls]
  export-pairs  --corpus F --out F [--negatives K] [--seed N]`;

class UsageError extends Error {}

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    if (!key.startsWith("--")) throw new UsageError(`unexpected argument: ${key}`);
    const value = argv[i + 1];
    if (value === undefined) throw new UsageError(`flag ${key} needs a value`);
    flags.set(key.slice(2), value);
  }
  return flags;
}

function required(flags: Map<string, string>, name: string): string {
  const value = flags.get(name);
  if (value === undefined) throw new UsageError(`missing required flag --${name}`);
  return value;
}

function intFlag(flags: Map<string, string>, name: string, fallback: number): number {
  const raw = flags.get(name);
  if (raw === undefined) return fallback;
  const value = Number.parseInt(raw, 10);
  if (!Number.isFinite(value)) throw new UsageError(`flag --${name} wants an integer, got ${raw}`);
  return value;
}

export async function runExport(flags: Map<string, string>): Promise<void> {
  const corpusPath = required(flags, "corpus");
  const outPath = required(flags, "out");
  const side = required(flags, "side");
  if (side !== "ctx" && side !== "can") throw new UsageError(`--side must be ctx or can, got ${side}`);
  const opts: EncoderOptions = {
    side: side as Side,
    dim: intFlag(flags, "dim", 8),
    maxLength: intFlag(flags, "max-len", 256),
    pooling: (flags.get("pooling") ?? "mean") as "mean" | "cls",
  };
  if (opts.pooling !== "mean" && opts.pooling !== "cls") {
    throw new UsageError(`--pooling must be mean or cls, got ${opts.pooling}`);
  }
  const batchSize = intFlag(flags, "batch-size", 32);
  if (batchSize < 1) throw new UsageError("--batch-size must be >= 1");

  const corpus = loadCorpus(corpusPath);
  const texts = side === "ctx" ? corpus.contexts : corpus.database;
  if (texts.length === 0) throw new Error(`${corpusPath}: no utterances to encode`);
  const encoder = await loadEncoder(flags.get("encoder") ?? "stub", opts);

  const vectors: Float32Array[] = [];
  for (let start = 0; start < texts.length; start += batchSize) {
    const batch = await encoder.encodeBatch(texts.slice(start, start + batchSize));
    vectors.push(...batch);
  }
  writeEmbeddings(outPath, vectors, encoder.dim);
  process.stdout.write(
    JSON.stringify({
      n: vectors.length,
      d: encoder.dim,
      side,
      encoder: encoder.name,
      out: outPath,
      first_row: Array.from(vectors[0]),
    }) + "\n",
  );
}

export function runExportPairs(flags: Map<string, string>): void {
  const corpusPath = required(flags, "corpus");
  const outPath = required(flags, "out");
  const negatives = intFlag(flags, "negatives", 1);
  const seed = intFlag(flags, "seed", 0);
  const corpus = loadCorpus(corpusPath);
  const pairs = makePairs(corpus, negatives, seed);
  const tmp = `${outPath}.tmp-${process.pid}`;
  try {
    writeFileSync(tmp, pairsToTsv(pairs), "utf-8");
    renameSync(tmp, outPath);
  } catch (err) {
    rmSync(tmp, { force: true });
    throw err;
  }
  process.stdout.write(JSON.stringify({ n_pairs: pairs.length, out: outPath }) + "\n");
}

export async function main(argv: string[]): Promise<number> {
  try {
    const [command, ...rest] = argv;
    if (command === "export") {
      await runExport(parseFlags(rest));
    } else if (command === "export-pairs") {
      runExportPairs(parseFlags(rest));
    } else if (command === "--help" || command === "-h") {
      process.stdout.write(USAGE + "\n");
    } else {
      process.stderr.write(USAGE + "\n");
      return 2;
    }
    return 0;
  } catch (err) {
    if (err instanceof UsageError) {
      process.stderr.write(`semrecall-export: ${err.message}\n${USAGE}\n`);
      return 2;
    }
    process.stderr.write(`semrecall-export: ${err instanceof Error ? err.message : err}\n`);
    return 1;
  }
}

const isDirectRun = (() => {
  if (!process.argv[1]) return false;
  try {
    return realpathSync(process.argv[1]) === fileURLToPath(import.meta.url);
  } catch {
    return false;
  }
})();
if (isDirectRun) {
  main(process.argv.slice(2)).then((code) => process.exit(code));
}
