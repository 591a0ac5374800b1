/** Corpus TSV parsing: one "context<TAB>response" per line, UTF-8, no header. */

import { readFileSync } from "node:fs";

export interface Corpus {
  contexts: string[];
  responses: string[];
  /** Responses deduplicated by exact text, first occurrence kept; index = database id. */
  database: string[];
}

export class CorpusFormatError extends Error {}

export function loadCorpus(path: string): Corpus {
  const raw = readFileSync(path, "utf-8");
  const lines = raw.split("\n");
  if (lines.length > 0 && lines[lines.length - 1] === "") lines.pop();
  if (lines.length === 0) throw new CorpusFormatError(`${path}: empty corpus file`);
  const contexts: string[] = [];
  const responses: string[] = [];
  const database: string[] = [];
  const seen = new Map<string, number>();
  lines.forEach((line, i) => {
    const lineno = i + 1;
    const fields = line.replace(/\r$/, "").split("\t");
    if (fields.length !== 2) {
      throw new CorpusFormatError(`line ${lineno}: expected 2 fields, got ${fields.length}`);
    }
    const ctx = fields[0].trim();
    const resp = fields[1].trim();
    if (!ctx) throw new CorpusFormatError(`line ${lineno}: empty context`);
    if (!resp) throw new CorpusFormatError(`line ${lineno}: empty response`);
    contexts.push(ctx);
    responses.push(resp);
    if (!seen.has(resp)) {
      seen.set(resp, database.length);
      database.push(resp);
    }
  });
  return { contexts, responses, database };
}

export function databaseIds(corpus: Corpus): Map<string, number> {
  const ids = new Map<string, number>();
  corpus.database.forEach((text, i) => ids.set(text, i));
  return ids;
}
