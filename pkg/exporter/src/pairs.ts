/**
 * Training-pair sampling: one positive per (context, response) line plus k
 * uniform negatives drawn without replacement from the database excluding the
 * paired response.  The per-pair splitmix64 stream keyed on (seed, line index)
 * mirrors the engine's sampler exactly, so outputs are comparable byte for byte.
 */

import { Corpus, databaseIds } from "./corpus.js";
import { Splitmix64 } from "./rng.js";

export interface PairExample {
  ctxId: number;
  canId: number;
  label: 0 | 1;
}

export function makePairs(corpus: Corpus, negativesPerPositive: number, seed: number): PairExample[] {
  const k = negativesPerPositive;
  if (k < 1) throw new RangeError("negatives_per_positive must be >= 1");
  const dbSize = corpus.database.length;
  if (dbSize < 2) throw new RangeError("corpus needs at least 2 distinct database entries");
  if (k >= dbSize) {
    throw new RangeError(`negatives_per_positive=${k} must be smaller than database size ${dbSize}`);
  }
  const ids = databaseIds(corpus);
  const pairs: PairExample[] = [];
  corpus.responses.forEach((resp, i) => {
    const positive = ids.get(resp)!;
    pairs.push({ ctxId: i, canId: positive, label: 1 });
    const rng = new Splitmix64(seed, i);
    const taken = new Set<number>([positive]);
    while (taken.size < k + 1) {
      const candidate = rng.below(dbSize);
      if (taken.has(candidate)) continue;
      taken.add(candidate);
      pairs.push({ ctxId: i, canId: candidate, label: 0 });
    }
  });
  return pairs;
}

export function pairsToTsv(pairs: PairExample[]): string {
  return pairs.map((p) => `${p.ctxId}\t${p.canId}\t${p.label}`).join("\n") + "\n";
}
