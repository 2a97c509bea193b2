/** Reading of subelliptic CLI CSV artifacts.
 *
 * Every artifact starts with a comment line
 *   `# config_hash=<hash> seed=<seed>`
 * followed by a header row and numeric data rows.  This module strips
 * and parses the comment line, hands the rest to papaparse, and returns
 * typed rows plus the run metadata.  Inputs are never modified.
 */

import { readFileSync } from "node:fs";
import Papa from "papaparse";

export interface ArtifactMeta {
  configHash: string;
  seed: number;
}

export interface RawArtifact {
  meta: ArtifactMeta;
  header: string[];
  rows: Record<string, number>[];
}

export class SchemaError extends Error {}

const META_RE = /^#\s*config_hash=(\S+)\s+seed=(-?\d+)\s*$/;

export function parseArtifact(text: string, path = "<string>"): RawArtifact {
  const firstBreak = text.indexOf("\n");
  if (firstBreak < 0) {
    throw new SchemaError(`${path}: empty artifact`);
  }
  const metaLine = text.slice(0, firstBreak).trim();
  const m = META_RE.exec(metaLine);
  if (!m) {
    throw new SchemaError(
      `${path}: missing "# config_hash=... seed=..." comment line`,
    );
  }
  const meta: ArtifactMeta = { configHash: m[1]!, seed: Number(m[2]!) };

  const parsed = Papa.parse<Record<string, string>>(
    text.slice(firstBreak + 1),
    { header: true, skipEmptyLines: true },
  );
  if (parsed.errors.length > 0) {
    const e = parsed.errors[0]!;
    throw new SchemaError(`${path}: row ${e.row}: ${e.message}`);
  }
  const header = parsed.meta.fields ?? [];
  if (header.length === 0) {
    throw new SchemaError(`${path}: missing header row`);
  }
  const SPECIAL: Record<string, number> = {
    nan: Number.NaN, inf: Infinity, "-inf": -Infinity,
  };
  const rows = parsed.data.map((rec, i) => {
    const out: Record<string, number> = {};
    for (const col of header) {
      const cell = (rec[col] ?? "").trim().toLowerCase();
      const v = cell in SPECIAL ? SPECIAL[cell]! : Number(rec[col]);
      if (rec[col] === undefined || rec[col] === ""
          || (Number.isNaN(v) && cell !== "nan")) {
        throw new SchemaError(
          `${path}: row ${i + 1}: column "${col}" is not a number ` +
            `(got ${JSON.stringify(rec[col])})`,
        );
      }
      out[col] = v;
    }
    return out;
  });
  if (rows.length === 0) {
    throw new SchemaError(`${path}: no data rows`);
  }
  return { meta, header, rows };
}

export function readArtifact(path: string): RawArtifact {
  return parseArtifact(readFileSync(path, "utf-8"), path);
}
