/**
 * Minimal deterministic SVG line-chart builder.
 *
 * No DOM, no layout engine: scales, axes with round ticks, polyline series,
 * an optional dashed horizontal reference, and a legend. The output string is
 * a pure function of the inputs, which keeps re-rendering reproducible.
 */

export interface Series {
  label: string;
  x: number[];
  y: number[];
}

export interface ChartOptions {
  title: string;
  xLabel: string;
  yLabel: string;
  width?: number;
  height?: number;
  referenceY?: number;
  referenceLabel?: string;
}

const PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const MARGIN = { left: 62, right: 16, top: 34, bottom: 46 };

function niceTicks(lo: number, hi: number, n = 6): number[] {
  if (!(hi > lo)) {
    hi = lo + 1;
  }
  const span = hi - lo;
  const step0 = span / Math.max(1, n - 1);
  const mag = Math.pow(10, Math.floor(Math.log10(step0)));
  const candidates = [1, 2, 2.5, 5, 10].map((c) => c * mag);
  const step = candidates.find((c) => span / c <= n) ?? candidates[candidates.length - 1];
  const start = Math.ceil(lo / step) * step;
  const ticks: number[] = [];
  for (let v = start; v <= hi + 1e-12; v += step) {
    ticks.push(Number(v.toFixed(12)));
  }
  return ticks;
}

function fmt(v: number): string {
  if (Math.abs(v) >= 1000 || (Math.abs(v) < 0.01 && v !== 0)) return v.toExponential(1);
  return Number(v.toFixed(4)).toString();
}

export function renderChart(series: Series[], opts: ChartOptions): string {
  const width = opts.width ?? 720;
  const height = opts.height ?? 440;
  const plotW = width - MARGIN.left - MARGIN.right;
  const plotH = height - MARGIN.top - MARGIN.bottom;

  const xs = series.flatMap((s) => s.x);
  const ys = series.flatMap((s) => s.y).concat(opts.referenceY !== undefined ? [opts.referenceY] : []);
  const finite = (v: number) => Number.isFinite(v);
  const xMin = Math.min(...xs.filter(finite));
  const xMax = Math.max(...xs.filter(finite));
  let yMin = Math.min(...ys.filter(finite));
  let yMax = Math.max(...ys.filter(finite));
  if (yMax === yMin) {
    yMax = yMin + 1;
  }
  const pad = 0.05 * (yMax - yMin);
  yMin -= pad;
  yMax += pad;

  const sx = (v: number) => MARGIN.left + ((v - xMin) / (xMax - xMin || 1)) * plotW;
  const sy = (v: number) => MARGIN.top + (1 - (v - yMin) / (yMax - yMin)) * plotH;

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" ` +
      `viewBox="0 0 ${width} ${height}" font-family="Helvetica, Arial, sans-serif">`,
  );
  parts.push(`<rect width="${width}" height="${height}" fill="white"/>`);
  parts.push(
    `<text x="${width / 2}" y="20" text-anchor="middle" font-size="15" fill="#111">${opts.title}</text>`,
  );

  for (const tick of niceTicks(xMin, xMax)) {
    const px = sx(tick);
    parts.push(
      `<line x1="${px.toFixed(2)}" y1="${MARGIN.top}" x2="${px.toFixed(2)}" ` +
        `y2="${MARGIN.top + plotH}" stroke="#e5e5e5" stroke-width="1"/>`,
      `<text x="${px.toFixed(2)}" y="${MARGIN.top + plotH + 18}" text-anchor="middle" ` +
        `font-size="11" fill="#333">${fmt(tick)}</text>`,
    );
  }
  for (const tick of niceTicks(yMin, yMax)) {
    const py = sy(tick);
    parts.push(
      `<line x1="${MARGIN.left}" y1="${py.toFixed(2)}" x2="${MARGIN.left + plotW}" ` +
        `y2="${py.toFixed(2)}" stroke="#e5e5e5" stroke-width="1"/>`,
      `<text x="${MARGIN.left - 8}" y="${(py + 4).toFixed(2)}" text-anchor="end" ` +
        `font-size="11" fill="#333">${fmt(tick)}</text>`,
    );
  }
  parts.push(
    `<rect x="${MARGIN.left}" y="${MARGIN.top}" width="${plotW}" height="${plotH}" ` +
      `fill="none" stroke="#444" stroke-width="1"/>`,
    `<text x="${MARGIN.left + plotW / 2}" y="${height - 10}" text-anchor="middle" ` +
      `font-size="12" fill="#111">${opts.xLabel}</text>`,
    `<text x="16" y="${MARGIN.top + plotH / 2}" text-anchor="middle" font-size="12" fill="#111" ` +
      `transform="rotate(-90 16 ${MARGIN.top + plotH / 2})">${opts.yLabel}</text>`,
  );

  if (opts.referenceY !== undefined) {
    const py = sy(opts.referenceY);
    parts.push(
      `<line x1="${MARGIN.left}" y1="${py.toFixed(2)}" x2="${MARGIN.left + plotW}" ` +
        `y2="${py.toFixed(2)}" stroke="#111" stroke-width="1.4" stroke-dasharray="7 5" ` +
        `class="reference-line"/>`,
    );
    if (opts.referenceLabel) {
      parts.push(
        `<text x="${MARGIN.left + plotW - 4}" y="${(py - 6).toFixed(2)}" text-anchor="end" ` +
          `font-size="11" fill="#111">${opts.referenceLabel}</text>`,
      );
    }
  }

  series.forEach((s, idx) => {
    const color = PALETTE[idx % PALETTE.length];
    const points = s.x
      .map((xv, i) => [xv, s.y[i]] as const)
      .filter(([xv, yv]) => Number.isFinite(xv) && Number.isFinite(yv))
      .map(([xv, yv]) => `${sx(xv).toFixed(2)},${sy(yv).toFixed(2)}`)
      .join(" ");
    parts.push(
      `<polyline points="${points}" fill="none" stroke="${color}" stroke-width="1.8" ` +
        `class="series" data-label="${s.label}"/>`,
    );
    const lx = MARGIN.left + 12;
    const ly = MARGIN.top + 14 + idx * 17;
    parts.push(
      `<line x1="${lx}" y1="${ly - 4}" x2="${lx + 22}" y2="${ly - 4}" stroke="${color}" stroke-width="2.5"/>`,
      `<text x="${lx + 28}" y="${ly}" font-size="12" fill="#111">${s.label}</text>`,
    );
  });

  parts.push("</svg>");
  return parts.join("\n");
}
