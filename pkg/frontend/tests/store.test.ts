import { describe, expect, it, vi } from "vitest";

import {
  WINDOW_MS,
  initialState,
  reduce,
  replay,
  type ConsoleEvent,
} from "../src/store.js";
import type { MetricsSnapshot, SliceForm } from "../src/types.js";

function snapshotWith(ids: number[], generated = 1): MetricsSnapshot {
  const slices: MetricsSnapshot["slices"] = {};
  const plan: MetricsSnapshot["plan"] = [];
  for (const id of ids) {
    slices[String(id)] = {
      slice_id: id,
      state: "running",
      phy_profile_name: id % 2 ? "phy-a" : "phy-b",
      prbs: 25,
      dl_freq_hz: 595_000_000 - id * 15_000_000,
      ul_freq_hz: 499_000_000 - id * 15_000_000,
      radio_channel: id,
      goodput_bps: 1000 * id + generated,
      loss_frames: 0,
      underruns: generated,
      alive: true,
      rx_ring_high_water: 4096 * id,
    };
    plan.push({
      slice_id: id,
      dl: [595_000_000 - id * 15_000_000 - 3_840_000,
           595_000_000 - id * 15_000_000 + 3_840_000],
      ul: [499_000_000 - id * 15_000_000 - 3_840_000,
           499_000_000 - id * 15_000_000 + 3_840_000],
      radio_channel: id,
    });
  }
  return { active_slices: ids.length, generated_ns: generated, plan, slices };
}

const form: SliceForm = {
  slice_id: 9, phy_profile_name: "phy-a", prbs: 25,
  dl_freq_hz: 610_000_000, ul_freq_hz: 510_000_000, radio_channel: 3,
};

describe("snapshot reduction", () => {
  it("builds rows and series from a snapshot", () => {
    const state = reduce(initialState(),
                         { kind: "snapshot", atMs: 1000, snapshot: snapshotWith([1, 2]) });
    expect(state.connected).toBe(true);
    expect([...state.rows.keys()].sort()).toEqual([1, 2]);
    const row = state.rows.get(1)!;
    expect(row.state).toBe("running");
    expect(row.series).toHaveLength(1);
    expect(row.series[0].goodputBps).toBe(row.goodputBps);
    expect(state.plan).toHaveLength(2);
  });

  it("drops malformed snapshots without touching state", () => {
    const warn = vi.spyOn(console, "warn").mockImplementation(() => {});
    const before = reduce(initialState(),
                          { kind: "snapshot", atMs: 1000, snapshot: snapshotWith([1]) });
    const after = reduce(before, { kind: "snapshot", atMs: 2000, snapshot: "garbage" });
    expect(after).toBe(before);
    const alsoBad = reduce(before,
                           { kind: "snapshot", atMs: 2000, snapshot: { nope: 1 } });
    expect(alsoBad).toBe(before);
    expect(warn).toHaveBeenCalled();
    warn.mockRestore();
  });

  it("freezes rows that leave the snapshot and keeps their series", () => {
    let state = replay([
      { kind: "snapshot", atMs: 1000, snapshot: snapshotWith([1, 2], 1) },
      { kind: "snapshot", atMs: 1500, snapshot: snapshotWith([1, 2], 2) },
      { kind: "snapshot", atMs: 2000, snapshot: snapshotWith([2], 3) },
    ]);
    const gone = state.rows.get(1)!;
    expect(gone.frozen).toBe(true);
    expect(gone.alive).toBe(false);
    expect(gone.series).toHaveLength(2);
    expect(state.rows.get(2)!.frozen).toBe(false);

    state = reduce(state, { kind: "snapshot", atMs: 2500, snapshot: snapshotWith([1, 2], 4) });
    expect(state.rows.get(1)!.frozen).toBe(false);
  });

  it("marks staleness once on loss and clears it on recovery", () => {
    let state = reduce(initialState(), { kind: "connection", atMs: 100, up: false });
    expect(state.staleSinceMs).toBe(100);
    state = reduce(state, { kind: "connection", atMs: 900, up: false });
    expect(state.staleSinceMs).toBe(100);
    state = reduce(state, { kind: "connection", atMs: 1200, up: true });
    expect(state.connected).toBe(true);
    expect(state.staleSinceMs).toBeNull();
  });
});

describe("optimistic create flow", () => {
  it("adds a requested row on submit and confirms it from snapshots", () => {
    let state = reduce(initialState(),
                       { kind: "create-submitted", atMs: 10, requestId: "r1", form });
    expect(state.rows.get(9)!.state).toBe("requested");
    expect(state.rows.get(9)!.confirmed).toBe(false);
    state = reduce(state, { kind: "create-accepted", atMs: 20, requestId: "r1" });
    expect(state.pending).toBeNull();
    state = reduce(state, { kind: "snapshot", atMs: 30, snapshot: snapshotWith([9]) });
    expect(state.rows.get(9)!.state).toBe("running");
    expect(state.rows.get(9)!.confirmed).toBe(true);
  });

  it("keeps an unconfirmed optimistic row across snapshots until the verdict", () => {
    let state = reduce(initialState(),
                       { kind: "create-submitted", atMs: 10, requestId: "r1", form });
    state = reduce(state, { kind: "snapshot", atMs: 20, snapshot: snapshotWith([1]) });
    expect(state.rows.get(9)!.state).toBe("requested");
    expect(state.rows.get(9)!.frozen).toBe(false);
  });

  it("removes the phantom row and records the error on rejection", () => {
    let state = reduce(initialState(),
                       { kind: "create-submitted", atMs: 10, requestId: "r1", form });
    state = reduce(state, {
      kind: "create-rejected", atMs: 20, requestId: "r1",
      error: "frequency plan conflict: slice 1 vs slice 9: dl bands overlap",
    });
    expect(state.rows.has(9)).toBe(false);
    expect(state.pending?.error).toContain("slice 1");
  });

  it("keeps the row when a rejection races a confirming snapshot", () => {
    let state = reduce(initialState(),
                       { kind: "create-submitted", atMs: 10, requestId: "r1", form });
    state = reduce(state, { kind: "snapshot", atMs: 15, snapshot: snapshotWith([9]) });
    state = reduce(state, {
      kind: "create-rejected", atMs: 20, requestId: "r1", error: "late duplicate",
    });
    expect(state.rows.has(9)).toBe(true);
  });

  it("ignores verdicts for a request that is no longer pending", () => {
    const state = reduce(initialState(),
                         { kind: "create-rejected", atMs: 20, requestId: "stale", error: "x" });
    expect(state.pending).toBeNull();
  });
});

describe("determinism and the series window", () => {
  function scriptedEvents(): ConsoleEvent[] {
    const events: ConsoleEvent[] = [];
    for (let i = 0; i < 300; i++) {
      const t = 1000 + i * 500;
      if (i % 37 === 5) {
        events.push({ kind: "connection", atMs: t, up: false });
      } else if (i % 23 === 7) {
        events.push({
          kind: "create-submitted", atMs: t, requestId: `r${i}`,
          form: { ...form, slice_id: 9 + (i % 3) },
        });
      } else if (i % 23 === 8) {
        events.push({ kind: "create-rejected", atMs: t, requestId: `r${i - 1}`, error: "no" });
      } else {
        events.push({
          kind: "snapshot", atMs: t,
          snapshot: snapshotWith([1, 2, 1 + (i % 3)], i),
        });
      }
    }
    return events;
  }

  it("replaying a recorded event list reproduces the same state", () => {
    const events = scriptedEvents();
    expect(replay(events)).toEqual(replay(events));
  });

  it("folding a prefix then the rest equals folding everything", () => {
    const events = scriptedEvents();
    const midway = replay(events.slice(0, 120));
    expect(replay(events.slice(120), midway)).toEqual(replay(events));
  });

  it("evicts points older than the window during a long soak", () => {
    const periodMs = 500;
    const maxPoints = WINDOW_MS / periodMs + 1;
    let state = initialState();
    // 26 minutes of snapshots at the real cadence: more than twice the window.
    const ticks = 2600 * 1.2;
    for (let i = 0; i < ticks; i++) {
      const t = 50_000 + i * periodMs;
      state = reduce(state, { kind: "snapshot", atMs: t, snapshot: snapshotWith([1, 2], i) });
      for (const row of state.rows.values()) {
        expect(row.series.length).toBeLessThanOrEqual(maxPoints);
      }
    }
    const lastT = 50_000 + (ticks - 1) * periodMs;
    for (const row of state.rows.values()) {
      expect(row.series.length).toBe(maxPoints);
      expect(row.series[0].t).toBeGreaterThanOrEqual(lastT - WINDOW_MS);
      expect(row.series[row.series.length - 1].t).toBe(lastT);
    }
  });
});
