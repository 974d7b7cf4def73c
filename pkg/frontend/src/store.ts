/** Console state as a pure function of the ordered event stream.
 *
 * Every change to what the operator sees goes through reduce(): metric
 * snapshots, connection status flips, and the optimistic create flow.
 * reduce never mutates its input, so replaying a recorded event list
 * reproduces the same state, and rendering can never block on network.
 */

import type { MetricsSnapshot, PlanEntry, SliceForm } from "./types.js";
import { isMetricsSnapshot } from "./types.js";

/** Rolling series window: last 10 minutes of snapshots. */
export const WINDOW_MS = 600_000;

export interface SeriesPoint {
  t: number;
  goodputBps: number;
  lossFrames: number;
  underruns: number;
}

export interface SliceRow {
  id: number;
  state: string;
  phy: string;
  prbs: number;
  dlFreqHz: number;
  ulFreqHz: number;
  radioChannel: number;
  alive: boolean;
  /** Gone from snapshots (destroyed or crashed): series kept but greyed. */
  frozen: boolean;
  /** Seen in at least one server snapshot, vs a purely optimistic row. */
  confirmed: boolean;
  goodputBps: number;
  lossFrames: number;
  underruns: number;
  ringHighWater: number;
  series: SeriesPoint[];
}

export interface PendingCreate {
  requestId: string;
  form: SliceForm;
  /** Server rejection, verbatim, for inline display on the form. */
  error: string | null;
}

export interface ConsoleState {
  connected: boolean;
  staleSinceMs: number | null;
  lastSnapshotMs: number | null;
  rows: Map<number, SliceRow>;
  plan: PlanEntry[];
  pending: PendingCreate | null;
}

export type ConsoleEvent =
  | { kind: "snapshot"; atMs: number; snapshot: unknown }
  | { kind: "connection"; atMs: number; up: boolean }
  | { kind: "create-submitted"; atMs: number; requestId: string; form: SliceForm }
  | { kind: "create-accepted"; atMs: number; requestId: string }
  | { kind: "create-rejected"; atMs: number; requestId: string; error: string };

export function initialState(): ConsoleState {
  return {
    connected: false,
    staleSinceMs: null,
    lastSnapshotMs: null,
    rows: new Map(),
    plan: [],
    pending: null,
  };
}

function rowFromForm(form: SliceForm): SliceRow {
  return {
    id: form.slice_id,
    state: "requested",
    phy: form.phy_profile_name,
    prbs: form.prbs,
    dlFreqHz: form.dl_freq_hz,
    ulFreqHz: form.ul_freq_hz,
    radioChannel: form.radio_channel,
    alive: false,
    frozen: false,
    confirmed: false,
    goodputBps: 0,
    lossFrames: 0,
    underruns: 0,
    ringHighWater: 0,
    series: [],
  };
}

function applySnapshot(state: ConsoleState, atMs: number,
                       snap: MetricsSnapshot): ConsoleState {
  const cutoff = atMs - WINDOW_MS;
  const rows = new Map<number, SliceRow>();

  for (const [key, entry] of Object.entries(snap.slices)) {
    const id = Number(key);
    const prev = state.rows.get(id);
    const goodput = typeof entry.goodput_bps === "number" ? entry.goodput_bps : 0;
    const loss = typeof entry.loss_frames === "number" ? entry.loss_frames : 0;
    const underruns = typeof entry.underruns === "number" ? entry.underruns : 0;
    const point: SeriesPoint = {
      t: atMs, goodputBps: goodput, lossFrames: loss, underruns,
    };
    // Append-only within the window: push the new point, drop expired ones
    // from the front.
    const series = (prev ? prev.series : []).concat(point);
    let firstKept = 0;
    while (firstKept < series.length && series[firstKept]!.t < cutoff) firstKept++;
    rows.set(id, {
      id,
      state: entry.state,
      phy: entry.phy_profile_name,
      prbs: entry.prbs,
      dlFreqHz: entry.dl_freq_hz,
      ulFreqHz: entry.ul_freq_hz,
      radioChannel: entry.radio_channel,
      alive: entry.alive !== false,
      frozen: false,
      confirmed: true,
      goodputBps: goodput,
      lossFrames: loss,
      underruns,
      ringHighWater: Math.max(
        typeof entry.rx_ring_high_water === "number" ? entry.rx_ring_high_water : 0,
        typeof entry.tx_ring_high_water === "number" ? entry.tx_ring_high_water : 0),
      series: firstKept ? series.slice(firstKept) : series,
    });
  }

  // Rows the snapshot no longer carries: freeze in place, series untouched.
  for (const [id, prev] of state.rows) {
    if (rows.has(id)) continue;
    if (!prev.confirmed) {
      // Optimistic row awaiting its first confirmation: keep it pending.
      rows.set(id, prev);
    } else {
      rows.set(id, prev.frozen ? prev : { ...prev, frozen: true, alive: false });
    }
  }

  return {
    ...state,
    connected: true,
    staleSinceMs: null,
    lastSnapshotMs: atMs,
    rows,
    plan: snap.plan,
  };
}

export function reduce(state: ConsoleState, event: ConsoleEvent): ConsoleState {
  switch (event.kind) {
    case "snapshot": {
      if (!isMetricsSnapshot(event.snapshot)) {
        // Malformed payloads are dropped; the stream carries on.
        console.warn("dropped malformed snapshot", event.snapshot);
        return state;
      }
      return applySnapshot(state, event.atMs, event.snapshot);
    }
    case "connection": {
      if (event.up) {
        return { ...state, connected: true, staleSinceMs: null };
      }
      return {
        ...state,
        connected: false,
        staleSinceMs: state.staleSinceMs ?? event.atMs,
      };
    }
    case "create-submitted": {
      const rows = new Map(state.rows);
      if (!rows.has(event.form.slice_id)) {
        rows.set(event.form.slice_id, rowFromForm(event.form));
      }
      return {
        ...state,
        rows,
        pending: { requestId: event.requestId, form: event.form, error: null },
      };
    }
    case "create-accepted": {
      if (state.pending?.requestId !== event.requestId) return state;
      return { ...state, pending: null };
    }
    case "create-rejected": {
      if (state.pending?.requestId !== event.requestId) return state;
      // No phantom rows after a rejection: drop the optimistic row unless a
      // snapshot already confirmed the id (then it was real all along).
      const rows = new Map(state.rows);
      const row = rows.get(state.pending.form.slice_id);
      if (row && !row.confirmed) rows.delete(row.id);
      return {
        ...state,
        rows,
        pending: { ...state.pending, error: event.error },
      };
    }
  }
}

/** Fold a recorded event list; exposed for replay tests and the app. */
export function replay(events: ConsoleEvent[],
                       from: ConsoleState = initialState()): ConsoleState {
  let state = from;
  for (const event of events) state = reduce(state, event);
  return state;
}
