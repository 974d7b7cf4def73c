import { describe, expect, it } from "vitest";

import { gaugeFraction, sparklinePoints } from "../src/charts.js";
import type { SeriesPoint } from "../src/store.js";

function series(n: number, startT: number, stepMs: number): SeriesPoint[] {
  return Array.from({ length: n }, (_, i) => ({
    t: startT + i * stepMs,
    goodputBps: 1000 + 100 * i,
    lossFrames: 0,
    underruns: i,
  }));
}

describe("sparklinePoints", () => {
  it("returns nothing for an empty series", () => {
    expect(sparklinePoints([], (p) => p.goodputBps, 0, 1000, 100, 20)).toEqual([]);
  });

  it("produces monotone x and y within the canvas", () => {
    const pts = sparklinePoints(series(50, 10_000, 500), (p) => p.goodputBps,
                                40_000, 60_000, 180, 28);
    expect(pts).toHaveLength(50);
    for (let i = 1; i < pts.length; i++) {
      expect(pts[i][0]).toBeGreaterThanOrEqual(pts[i - 1][0]);
    }
    for (const [x, y] of pts) {
      expect(x).toBeGreaterThanOrEqual(0);
      expect(x).toBeLessThanOrEqual(180);
      expect(y).toBeGreaterThanOrEqual(0);
      expect(y).toBeLessThanOrEqual(28);
    }
    // The largest value maps to the highest point (smallest y).
    const ys = pts.map((p) => p[1]);
    expect(ys[ys.length - 1]).toBe(Math.min(...ys));
  });

  it("survives an all-zero series", () => {
    const flat = series(5, 0, 500).map((p) => ({ ...p, goodputBps: 0 }));
    const pts = sparklinePoints(flat, (p) => p.goodputBps, 2_500, 10_000, 100, 20);
    for (const [, y] of pts) expect(y).toBeLessThanOrEqual(20);
  });
});

describe("gaugeFraction", () => {
  it("clamps to the unit interval", () => {
    expect(gaugeFraction(5, 10)).toBe(0.5);
    expect(gaugeFraction(20, 10)).toBe(1);
    expect(gaugeFraction(-1, 10)).toBe(0);
    expect(gaugeFraction(1, 0)).toBe(0);
  });
});
