/** Figure builders: one per CLI artifact kind.
 *
 * Each builder takes an already-read artifact, validates its rows
 * against the kind's schema, and returns an SVG string.  They are pure:
 * file I/O lives in the CLI wrapper.
 */

import { RawArtifact, SchemaError } from "./csv.js";
import { validateRows } from "./schema.js";
import { fitLine, renderHeatmap, renderPanel } from "./svg.js";

const PALETTE = ["#1f6fb2", "#d1542e", "#3a8f4e", "#8252a1", "#b0842a"];

function color(i: number): string {
  return PALETTE[i % PALETTE.length]!;
}

/** Log-log ball volume vs radius with the fitted growth slope. */
export function volumePlot(artifact: RawArtifact, path = "volume"): string {
  const rows = validateRows("volume", artifact, path);
  const r = rows.map((row) => row.radius);
  const v = rows.map((row) => row.volume);
  const { slope } = fitLine(r.map(Math.log10), v.map(Math.log10));
  const formula = rows.map((row) => row.formula_value);
  return renderPanel({
    title: "Metric ball volume vs radius",
    xAxis: { label: "radius", log: true },
    yAxis: { label: "|B(x, r)|", log: true },
    series: [
      { label: "MC volume", x: r, y: v, color: color(0), line: true },
      ...(formula.every((f) => f > 0)
        ? [{
            label: "bracket-determinant formula",
            x: r,
            y: formula,
            color: color(1),
            line: true,
          }]
        : []),
    ],
    annotations: [`fitted slope = ${slope.toFixed(3)}`],
  });
}

/** phi_beta decay curves, one per beta. */
export function phiPlot(artifact: RawArtifact, path = "phi"): string {
  const rows = validateRows("phi", artifact, path);
  const betas = [...new Set(rows.map((r) => r.beta))].sort((a, b) => a - b);
  const series = betas.map((beta, i) => {
    const sel = rows.filter((r) => r.beta === beta && r.phi > 0);
    if (sel.length === 0) {
      throw new SchemaError(`${path}: no positive phi values for beta=${beta}`);
    }
    return {
      label: `beta = ${beta}`,
      x: sel.map((r) => r.d),
      y: sel.map((r) => r.phi),
      color: color(i),
      line: true,
    };
  });
  return renderPanel({
    title: "phi_beta(d) kernel envelopes",
    xAxis: { label: "d", log: true },
    yAxis: { label: "phi_beta", log: true },
    series,
  });
}

/** Composition-law quadrature vs closed form, against the y = x line. */
export function compositionPlot(
  artifact: RawArtifact,
  path = "composition",
): string {
  const rows = validateRows("composition", artifact, path);
  const ok = rows.filter(
    (r) => Number.isFinite(r.ratio) && r.lhs > 0 && r.rhs > 0,
  );
  if (ok.length === 0) {
    throw new SchemaError(`${path}: no finite composition checks`);
  }
  const lo = Math.min(...ok.map((r) => Math.min(r.lhs, r.rhs)));
  const hi = Math.max(...ok.map((r) => Math.max(r.lhs, r.rhs)));
  const ratios = ok.map((r) => r.ratio);
  return renderPanel({
    title: "phi composition: quadrature vs closed form",
    xAxis: { label: "(1/beta + 1/gamma) phi_{beta+gamma}(x,z)", log: true },
    yAxis: { label: "int phi_beta(x,y) phi_gamma(y,z) dy", log: true },
    series: [
      { label: "y = x", x: [lo, hi], y: [lo, hi], color: "#999", line: true, marker: false },
      { label: "checks", x: ok.map((r) => r.rhs), y: ok.map((r) => r.lhs), color: color(0) },
    ],
    annotations: [
      `ratio range [${Math.min(...ratios).toFixed(3)}, ` +
        `${Math.max(...ratios).toFixed(3)}] over ${ok.length} triples`,
    ],
  });
}

/** Kernel decay of gamma and P against the chart distance. */
export function gammaPlot(artifact: RawArtifact, path = "gamma"): string {
  const rows = validateRows("gamma", artifact, path);
  let pos = rows.filter((r) => r.gamma > 0 && r.P > 0);
  if (pos.length === 0) {
    throw new SchemaError(`${path}: no positive kernel samples`);
  }
  // thin dense tables so the figure stays a few hundred kB at most
  const stride = Math.ceil(pos.length / 2000);
  pos = pos.filter((_, i) => i % stride === 0);
  const d = pos.map((r) => r.d_fast);
  const g = pos.map((r) => r.gamma);
  const { slope } = fitLine(d.map(Math.log10), g.map(Math.log10));
  return renderPanel({
    title: "Fundamental-solution decay",
    xAxis: { label: "d_fast(x, y)", log: true },
    yAxis: { label: "kernel value", log: true },
    series: [
      { label: "gamma", x: d, y: g, color: color(0) },
      { label: "parametrix P", x: d, y: pos.map((r) => r.P), color: color(1) },
    ],
    annotations: [`fitted gamma slope = ${slope.toFixed(3)}`],
  });
}

/** d_upper against d_fast with the y = x reference. */
export function distancePlot(artifact: RawArtifact, path = "distance"): string {
  const rows = validateRows("distance", artifact, path);
  const ok = rows.filter((r) => r.d_fast > 0 && Number.isFinite(r.d_upper));
  if (ok.length === 0) {
    throw new SchemaError(`${path}: no usable distance pairs`);
  }
  const hi = Math.max(...ok.map((r) => Math.max(r.d_fast, r.d_upper)));
  return renderPanel({
    title: "Certified upper distance vs chart distance",
    xAxis: { label: "d_fast" },
    yAxis: { label: "d_upper" },
    series: [
      { label: "y = x", x: [0, hi], y: [0, hi], color: "#999", line: true, marker: false },
      { label: "pairs", x: ok.map((r) => r.d_fast), y: ok.map((r) => r.d_upper), color: color(0) },
    ],
  });
}

/** Interior residual |Lw - f| on the mid-plane of the solve grid. */
export function residualPlot(
  artifact: RawArtifact,
  shape: [number, number, number],
  path = "solve",
): string {
  const rows = validateRows("solve", artifact, path);
  const [nx, ny, nz] = shape;
  if (nx < 5 || ny < 5 || nz < 5) {
    throw new SchemaError(`${path}: grid shape ${shape.join("x")} too small`);
  }
  const n = nx * ny * nz;
  const kMid = Math.floor(nz / 2);
  const values: number[][] = Array.from({ length: nx }, () =>
    Array.from({ length: ny }, () => Number.NaN),
  );
  let placed = 0;
  let maxRes = 0;
  for (const r of rows) {
    if (r.node >= n) {
      throw new SchemaError(
        `${path}: node ${r.node} outside grid ${shape.join("x")}`,
      );
    }
    maxRes = Math.max(maxRes, r.residual);
    const i = Math.floor(r.node / (ny * nz));
    const j = Math.floor(r.node / nz) % ny;
    const k = r.node % nz;
    if (k === kMid) {
      values[i]![j] = r.residual;
      placed++;
    }
  }
  if (placed === 0) {
    throw new SchemaError(`${path}: no interior nodes on the mid-plane`);
  }
  return renderHeatmap({
    title: `Interior residual |Lw - f|, plane k = ${kMid}`,
    xLabel: "j (second axis)",
    yLabel: "i (first axis)",
    values,
    annotations: [`max residual = ${maxRes.toExponential(3)}`],
  });
}
