import { existsSync, mkdtempSync, readFileSync, statSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { describe, expect, it } from "vitest";

import { run } from "../src/cli.js";
import { readArtifact } from "../src/csv.js";
import { gammaPlot, residualPlot, volumePlot } from "../src/plots.js";

const FIXTURES = join(__dirname, "fixtures");
const OUT = mkdtempSync(join(tmpdir(), "subelliptic-plots-"));

const CASES: [string, string, string[]][] = [
  ["volume", "volume.csv", []],
  ["phi", "phi.csv", []],
  ["composition", "phi_composition.csv", []],
  ["gamma", "gamma.csv", []],
  ["distance", "distance.csv", []],
  ["residual", "solve.csv", ["--shape", "9,9,9"]],
];

describe("plot CLI", () => {
  it.each(CASES)("%s renders a nonempty SVG", (kind, name, extra) => {
    const out = join(OUT, `${kind}.svg`);
    const code = run([kind, join(FIXTURES, name), out, ...extra]);
    expect(code).toBe(0);
    expect(existsSync(out)).toBe(true);
    expect(statSync(out).size).toBeGreaterThan(500);
    const svg = readFileSync(out, "utf-8");
    expect(svg.startsWith("<svg")).toBe(true);
    expect(svg.trimEnd().endsWith("</svg>")).toBe(true);
  });

  it("fails cleanly on a missing input file", () => {
    expect(run(["volume", join(FIXTURES, "nope.csv"), join(OUT, "x.svg")]))
      .toBe(1);
  });

  it("fails cleanly on an unknown kind", () => {
    expect(run(["sunburst", join(FIXTURES, "volume.csv"), join(OUT, "x.svg")]))
      .toBe(1);
  });

  it("requires --shape for residual maps", () => {
    expect(run(["residual", join(FIXTURES, "solve.csv"), join(OUT, "x.svg")]))
      .toBe(1);
  });

  it("rejects a malformed --shape", () => {
    expect(
      run(["residual", join(FIXTURES, "solve.csv"), join(OUT, "x.svg"),
           "--shape", "9,9"]),
    ).toBe(1);
  });
});

describe("figure content", () => {
  it("annotates the volume growth slope", () => {
    const svg = volumePlot(readArtifact(join(FIXTURES, "volume.csv")));
    const m = /fitted slope = (-?\d+\.\d+)/.exec(svg);
    expect(m).not.toBeNull();
    // homogeneous dimension of the fixture family
    expect(Number(m![1])).toBeGreaterThan(2.5);
    expect(Number(m![1])).toBeLessThan(5.5);
  });

  it("fits a negative kernel-decay slope", () => {
    const svg = gammaPlot(readArtifact(join(FIXTURES, "gamma.csv")));
    const m = /fitted gamma slope = (-?\d+\.\d+)/.exec(svg);
    expect(m).not.toBeNull();
    expect(Number(m![1])).toBeLessThan(0);
  });

  it("rejects solve nodes outside the declared grid", () => {
    const art = readArtifact(join(FIXTURES, "solve.csv"));
    expect(() => residualPlot(art, [5, 5, 5])).toThrow(/outside grid/);
  });
});
