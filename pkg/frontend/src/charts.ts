/** Canvas sparklines and gauges for the per-slice metric series. */

import type { SeriesPoint } from "./store.js";

/** Map a series onto pixel coordinates: x from time within the window,
 * y from the picked value scaled to the observed maximum. */
export function sparklinePoints(series: SeriesPoint[],
                                pick: (p: SeriesPoint) => number,
                                nowMs: number, windowMs: number,
                                width: number, height: number): Array<[number, number]> {
  if (series.length === 0) return [];
  const values = series.map(pick);
  const top = Math.max(...values, 1e-9);
  const t0 = nowMs - windowMs;
  const pts: Array<[number, number]> = [];
  for (let i = 0; i < series.length; i++) {
    const x = ((series[i].t - t0) / windowMs) * width;
    const y = height - (values[i] / top) * (height - 2) - 1;
    pts.push([Math.max(x, 0), y]);
  }
  return pts;
}

export function paintSparkline(ctx: CanvasRenderingContext2D,
                               pts: Array<[number, number]>,
                               width: number, height: number,
                               color = "#4c9f70"): void {
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#1b1f23";
  ctx.fillRect(0, 0, width, height);
  if (pts.length === 0) return;
  ctx.strokeStyle = color;
  ctx.lineWidth = 1;
  ctx.beginPath();
  ctx.moveTo(pts[0][0], pts[0][1]);
  for (let i = 1; i < pts.length; i++) ctx.lineTo(pts[i][0], pts[i][1]);
  ctx.stroke();
}

/** Occupancy fraction for a gauge bar, clamped to [0, 1]. */
export function gaugeFraction(value: number, max: number): number {
  if (max <= 0) return 0;
  return Math.min(Math.max(value / max, 0), 1);
}

export function paintGauge(ctx: CanvasRenderingContext2D, fraction: number,
                           width: number, height: number): void {
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#1b1f23";
  ctx.fillRect(0, 0, width, height);
  ctx.fillStyle = fraction > 0.9 ? "#c43a3a" : "#5b7fb9";
  ctx.fillRect(0, 0, width * fraction, height);
}
