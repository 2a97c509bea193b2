import { readFileSync } from "node:fs";
import { join } from "node:path";

import { describe, expect, it } from "vitest";

import { parseArtifact, readArtifact, SchemaError } from "../src/csv.js";
import { ArtifactKind, validateRows } from "../src/schema.js";

const FIXTURES = join(__dirname, "fixtures");

function fixture(name: string) {
  return readArtifact(join(FIXTURES, name));
}

const KINDS: [ArtifactKind, string][] = [
  ["distance", "distance.csv"],
  ["volume", "volume.csv"],
  ["phi", "phi.csv"],
  ["composition", "phi_composition.csv"],
  ["gamma", "gamma.csv"],
  ["solve", "solve.csv"],
];

describe("artifact metadata", () => {
  it("parses the config-hash comment line", () => {
    const art = fixture("volume.csv");
    expect(art.meta.configHash).toMatch(/^[0-9a-f]{16}$/);
    expect(art.meta.seed).toBe(0);
  });

  it("rejects files without the comment line", () => {
    expect(() => parseArtifact("radius,volume\n0.1,0.2\n")).toThrow(
      SchemaError,
    );
  });

  it("rejects empty files", () => {
    expect(() => parseArtifact("")).toThrow(SchemaError);
  });

  it("rejects non-numeric cells with row and column named", () => {
    const text = "# config_hash=abc seed=0\nd,beta,phi\n0.1,oops,3\n";
    expect(() => parseArtifact(text, "bad.csv")).toThrow(/column "beta"/);
  });
});

describe("row schemas", () => {
  it.each(KINDS)("%s fixture validates", (kind, name) => {
    const art = fixture(name);
    const rows = validateRows(kind, art, name);
    expect(rows.length).toBeGreaterThan(0);
  });

  it("rejects a missing column", () => {
    const art = fixture("volume.csv");
    const broken = {
      ...art,
      rows: art.rows.map(({ stderr: _dropped, ...rest }) => rest),
    };
    expect(() => validateRows("volume", broken)).toThrow(/stderr/);
  });

  it("rejects an unexpected extra column", () => {
    const art = fixture("phi.csv");
    const broken = {
      ...art,
      rows: art.rows.map((r) => ({ ...r, surprise: 1 })),
    };
    expect(() => validateRows("phi", broken)).toThrow(SchemaError);
  });

  it("rejects sign violations", () => {
    const art = fixture("volume.csv");
    const broken = {
      ...art,
      rows: art.rows.map((r, i) => (i === 0 ? { ...r, radius: -1 } : r)),
    };
    expect(() => validateRows("volume", broken)).toThrow(/row 1/);
  });

  it("rejects a kind/file mismatch", () => {
    const art = fixture("gamma.csv");
    expect(() => validateRows("solve", art, "gamma.csv")).toThrow(
      SchemaError,
    );
  });

  it("keeps raw text untouched (read-only consumer)", () => {
    const path = join(FIXTURES, "solve.csv");
    const before = readFileSync(path, "utf-8");
    validateRows("solve", readArtifact(path));
    expect(readFileSync(path, "utf-8")).toBe(before);
  });
});
