/** Minimal standalone SVG chart emitter.
 *
 * Produces self-contained SVG strings (no external CSS/scripts) for the
 * three figure primitives the diagnostic plots need: scatter/line panels
 * with linear or log axes, and cell heat maps.
 */

export interface AxisSpec {
  label: string;
  log?: boolean;
}

export interface Series {
  label: string;
  x: number[];
  y: number[];
  color: string;
  line?: boolean;
  marker?: boolean;
}

export interface PanelSpec {
  title: string;
  xAxis: AxisSpec;
  yAxis: AxisSpec;
  series: Series[];
  annotations?: string[];
  width?: number;
  height?: number;
}

const MARGIN = { left: 64, right: 16, top: 36, bottom: 48 };

function esc(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function transform(values: number[], log: boolean): number[] {
  if (!log) return values;
  return values.map((v) => {
    if (v <= 0) {
      throw new RangeError(`log axis requires positive values, got ${v}`);
    }
    return Math.log10(v);
  });
}

function niceTicks(lo: number, hi: number, n = 5): number[] {
  if (!(hi > lo)) return [lo];
  const span = hi - lo;
  const step = 10 ** Math.floor(Math.log10(span / n));
  const mult = [1, 2, 5, 10].find((m) => span / (step * m) <= n) ?? 10;
  const s = step * mult;
  const ticks: number[] = [];
  for (let t = Math.ceil(lo / s) * s; t <= hi + 1e-12 * span; t += s) {
    ticks.push(Number(t.toFixed(12)));
  }
  return ticks;
}

function fmtTick(v: number, log: boolean): string {
  if (log) return `1e${v}`;
  if (v === 0) return "0";
  const a = Math.abs(v);
  if (a >= 1e4 || a < 1e-3) return v.toExponential(1);
  return String(Number(v.toPrecision(4)));
}

/** Render a scatter/line panel to an SVG string. */
export function renderPanel(spec: PanelSpec): string {
  const width = spec.width ?? 640;
  const height = spec.height ?? 440;
  const plotW = width - MARGIN.left - MARGIN.right;
  const plotH = height - MARGIN.top - MARGIN.bottom;

  const allX: number[] = [];
  const allY: number[] = [];
  const tSeries = spec.series.map((s) => {
    if (s.x.length !== s.y.length) {
      throw new RangeError(`series "${s.label}": x/y length mismatch`);
    }
    const tx = transform(s.x, spec.xAxis.log ?? false);
    const ty = transform(s.y, spec.yAxis.log ?? false);
    allX.push(...tx);
    allY.push(...ty);
    return { ...s, tx, ty };
  });
  if (allX.length === 0) {
    throw new RangeError("panel has no data points");
  }
  const pad = (lo: number, hi: number): [number, number] =>
    lo === hi ? [lo - 1, hi + 1] : [lo - 0.05 * (hi - lo), hi + 0.05 * (hi - lo)];
  const [x0, x1] = pad(Math.min(...allX), Math.max(...allX));
  const [y0, y1] = pad(Math.min(...allY), Math.max(...allY));
  const sx = (v: number) => MARGIN.left + ((v - x0) / (x1 - x0)) * plotW;
  const sy = (v: number) => MARGIN.top + plotH - ((v - y0) / (y1 - y0)) * plotH;

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" ` +
      `height="${height}" viewBox="0 0 ${width} ${height}" ` +
      `font-family="sans-serif" font-size="12">`,
    `<rect width="${width}" height="${height}" fill="white"/>`,
    `<text x="${width / 2}" y="20" text-anchor="middle" ` +
      `font-size="14">${esc(spec.title)}</text>`,
  );

  for (const t of niceTicks(x0, x1)) {
    const px = sx(t);
    parts.push(
      `<line x1="${px}" y1="${MARGIN.top}" x2="${px}" ` +
        `y2="${MARGIN.top + plotH}" stroke="#ddd"/>`,
      `<text x="${px}" y="${MARGIN.top + plotH + 16}" ` +
        `text-anchor="middle">${esc(fmtTick(t, spec.xAxis.log ?? false))}</text>`,
    );
  }
  for (const t of niceTicks(y0, y1)) {
    const py = sy(t);
    parts.push(
      `<line x1="${MARGIN.left}" y1="${py}" ` +
        `x2="${MARGIN.left + plotW}" y2="${py}" stroke="#ddd"/>`,
      `<text x="${MARGIN.left - 6}" y="${py + 4}" ` +
        `text-anchor="end">${esc(fmtTick(t, spec.yAxis.log ?? false))}</text>`,
    );
  }
  parts.push(
    `<rect x="${MARGIN.left}" y="${MARGIN.top}" width="${plotW}" ` +
      `height="${plotH}" fill="none" stroke="#333"/>`,
    `<text x="${MARGIN.left + plotW / 2}" y="${height - 10}" ` +
      `text-anchor="middle">${esc(spec.xAxis.label)}</text>`,
    `<text x="16" y="${MARGIN.top + plotH / 2}" text-anchor="middle" ` +
      `transform="rotate(-90 16 ${MARGIN.top + plotH / 2})">` +
      `${esc(spec.yAxis.label)}</text>`,
  );

  tSeries.forEach((s, si) => {
    const pts = s.tx.map((v, i) => [sx(v), sy(s.ty[i]!)] as const);
    if (s.line) {
      const d = pts
        .map(([px, py], i) => `${i === 0 ? "M" : "L"}${px.toFixed(2)} ${py.toFixed(2)}`)
        .join(" ");
      parts.push(`<path d="${d}" fill="none" stroke="${s.color}" stroke-width="1.5"/>`);
    }
    if (s.marker ?? true) {
      for (const [px, py] of pts) {
        parts.push(
          `<circle cx="${px.toFixed(2)}" cy="${py.toFixed(2)}" r="2.5" ` +
            `fill="${s.color}" fill-opacity="0.75"/>`,
        );
      }
    }
    parts.push(
      `<text x="${MARGIN.left + plotW - 8}" y="${MARGIN.top + 16 + 16 * si}" ` +
        `text-anchor="end" fill="${s.color}">${esc(s.label)}</text>`,
    );
  });

  (spec.annotations ?? []).forEach((a, i) => {
    parts.push(
      `<text x="${MARGIN.left + 8}" y="${MARGIN.top + 16 + 16 * i}" ` +
        `fill="#333">${esc(a)}</text>`,
    );
  });

  parts.push("</svg>");
  return parts.join("\n");
}

export interface HeatmapSpec {
  title: string;
  xLabel: string;
  yLabel: string;
  /** values[row][col]; NaN cells are drawn grey */
  values: number[][];
  annotations?: string[];
  width?: number;
  height?: number;
}

function heatColor(t: number): string {
  // white -> orange -> dark red
  const clamp = Math.min(Math.max(t, 0), 1);
  const r = Math.round(255 - 80 * clamp);
  const g = Math.round(245 - 200 * clamp);
  const b = Math.round(240 - 220 * clamp);
  return `rgb(${r},${g},${b})`;
}

/** Render a matrix heat map to an SVG string. */
export function renderHeatmap(spec: HeatmapSpec): string {
  const rows = spec.values.length;
  const cols = spec.values[0]?.length ?? 0;
  if (rows === 0 || cols === 0) {
    throw new RangeError("heatmap has no cells");
  }
  const width = spec.width ?? 520;
  const height = spec.height ?? 520;
  const plotW = width - MARGIN.left - MARGIN.right;
  const plotH = height - MARGIN.top - MARGIN.bottom;
  const finite = spec.values.flat().filter((v) => Number.isFinite(v));
  const vmax = finite.length ? Math.max(...finite) : 1;
  const vmin = finite.length ? Math.min(...finite) : 0;
  const span = vmax > vmin ? vmax - vmin : 1;

  const parts: string[] = [
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" ` +
      `height="${height}" viewBox="0 0 ${width} ${height}" ` +
      `font-family="sans-serif" font-size="12">`,
    `<rect width="${width}" height="${height}" fill="white"/>`,
    `<text x="${width / 2}" y="20" text-anchor="middle" ` +
      `font-size="14">${esc(spec.title)}</text>`,
  ];
  const cw = plotW / cols;
  const ch = plotH / rows;
  for (let i = 0; i < rows; i++) {
    for (let j = 0; j < cols; j++) {
      const v = spec.values[i]![j]!;
      const fill = Number.isFinite(v)
        ? heatColor((v - vmin) / span)
        : "#bbb";
      parts.push(
        `<rect x="${(MARGIN.left + j * cw).toFixed(2)}" ` +
          `y="${(MARGIN.top + (rows - 1 - i) * ch).toFixed(2)}" ` +
          `width="${(cw + 0.5).toFixed(2)}" height="${(ch + 0.5).toFixed(2)}" ` +
          `fill="${fill}"/>`,
      );
    }
  }
  parts.push(
    `<rect x="${MARGIN.left}" y="${MARGIN.top}" width="${plotW}" ` +
      `height="${plotH}" fill="none" stroke="#333"/>`,
    `<text x="${MARGIN.left + plotW / 2}" y="${height - 10}" ` +
      `text-anchor="middle">${esc(spec.xLabel)}</text>`,
    `<text x="16" y="${MARGIN.top + plotH / 2}" text-anchor="middle" ` +
      `transform="rotate(-90 16 ${MARGIN.top + plotH / 2})">` +
      `${esc(spec.yLabel)}</text>`,
  );
  (spec.annotations ?? []).forEach((a, i) => {
    parts.push(
      `<text x="${MARGIN.left + 8}" y="${MARGIN.top + 16 + 16 * i}" ` +
        `fill="#333">${esc(a)}</text>`,
    );
  });
  parts.push("</svg>");
  return parts.join("\n");
}

/** Least-squares slope/intercept of y against x. */
export function fitLine(x: number[], y: number[]): { slope: number; intercept: number } {
  const n = x.length;
  if (n < 2) throw new RangeError("need at least 2 points to fit");
  const mx = x.reduce((a, b) => a + b, 0) / n;
  const my = y.reduce((a, b) => a + b, 0) / n;
  let sxx = 0;
  let sxy = 0;
  for (let i = 0; i < n; i++) {
    sxx += (x[i]! - mx) ** 2;
    sxy += (x[i]! - mx) * (y[i]! - my);
  }
  if (sxx === 0) throw new RangeError("degenerate x values in fit");
  const slope = sxy / sxx;
  return { slope, intercept: my - slope * mx };
}
