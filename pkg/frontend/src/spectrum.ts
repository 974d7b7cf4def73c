/** Spectrum rails derived from the orchestrator's frequency plan.
 *
 * Rendered intervals mirror the plan exactly. Overlaps cannot happen when
 * the backend is enforcing the plan, so finding one renders as an error
 * state rather than being merged away.
 */

import type { PlanEntry } from "./types.js";

export interface RailBand {
  sliceId: number;
  lo: number;
  hi: number;
}

export interface Rail {
  bands: RailBand[];
  /** Pairs of slice ids whose bands overlap: an error state when present. */
  overlapPairs: Array<[number, number]>;
}

function buildRail(bands: RailBand[]): Rail {
  const sorted = [...bands].sort((a, b) => a.lo - b.lo || a.sliceId - b.sliceId);
  const overlapPairs: Array<[number, number]> = [];
  for (let i = 0; i < sorted.length; i++) {
    for (let j = i + 1; j < sorted.length; j++) {
      const a = sorted[i], b = sorted[j];
      if (b.lo < a.hi && a.lo < b.hi) overlapPairs.push([a.sliceId, b.sliceId]);
    }
  }
  return { bands: sorted, overlapPairs };
}

export function buildRails(plan: PlanEntry[]): { dl: Rail; ul: Rail } {
  return {
    dl: buildRail(plan.map((p) => ({ sliceId: p.slice_id, lo: p.dl[0], hi: p.dl[1] }))),
    ul: buildRail(plan.map((p) => ({ sliceId: p.slice_id, lo: p.ul[0], hi: p.ul[1] }))),
  };
}

/** View range covering every band with proportional padding on both ends. */
export function railViewRange(rail: Rail, padFraction = 0.1): [number, number] {
  if (rail.bands.length === 0) return [0, 1];
  const lo = Math.min(...rail.bands.map((b) => b.lo));
  const hi = Math.max(...rail.bands.map((b) => b.hi));
  const pad = Math.max((hi - lo) * padFraction, 1);
  return [lo - pad, hi + pad];
}

/** Pixel span of one band inside a view range; width never rounds to zero. */
export function bandToSpan(band: RailBand, viewLo: number, viewHi: number,
                           width: number): { x: number; w: number } {
  const scale = width / (viewHi - viewLo);
  const x = (band.lo - viewLo) * scale;
  const w = Math.max((band.hi - band.lo) * scale, 1);
  return { x, w };
}

const RAIL_COLORS = ["#4c9f70", "#5b7fb9", "#b9935b", "#9f4c8f",
                     "#4cb9b0", "#b95b5b"];

export function sliceColor(sliceId: number): string {
  return RAIL_COLORS[Math.abs(sliceId) % RAIL_COLORS.length];
}

export function paintRail(ctx: CanvasRenderingContext2D, rail: Rail,
                          width: number, height: number): void {
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#1b1f23";
  ctx.fillRect(0, 0, width, height);
  const [viewLo, viewHi] = railViewRange(rail);
  const conflicted = new Set(rail.overlapPairs.flat());
  for (const band of rail.bands) {
    const { x, w } = bandToSpan(band, viewLo, viewHi, width);
    ctx.fillStyle = conflicted.has(band.sliceId) ? "#c43a3a" : sliceColor(band.sliceId);
    ctx.fillRect(x, 2, w, height - 4);
    ctx.fillStyle = "#e8e8e8";
    ctx.font = "10px sans-serif";
    ctx.fillText(String(band.sliceId), x + 3, height / 2 + 3);
  }
}
