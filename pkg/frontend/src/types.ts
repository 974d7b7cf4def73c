/** Wire shapes exactly as the orchestrator HTTP gateway emits them. */

export interface PlanEntry {
  slice_id: number;
  dl: [number, number];
  ul: [number, number];
  radio_channel: number;
}

export interface EndpointCounters {
  frames_ok: number;
  frames_foreign: number;
  frames_sent: number;
  bytes_ok: number;
  sends_late: number;
  crc_errors: number;
  header_errors: number;
  [key: string]: number | string;
}

/** One slice's entry in a metrics snapshot: descriptor fields merged with
 * whatever the runtime reports (absent while a slice is still starting). */
export interface SliceEntry {
  slice_id: number;
  state: string;
  phy_profile_name: string;
  prbs: number;
  dl_freq_hz: number;
  ul_freq_hz: number;
  radio_channel: number;
  goodput_bps?: number;
  loss_frames?: number;
  underruns?: number;
  alive?: boolean;
  rx_ring_high_water?: number;
  tx_ring_high_water?: number;
  endpoint?: EndpointCounters;
  [key: string]: unknown;
}

export interface MetricsSnapshot {
  active_slices: number;
  generated_ns: number;
  plan: PlanEntry[];
  slices: Record<string, SliceEntry>;
}

/** Create-form payload; the server validates authoritatively. */
export interface SliceForm {
  slice_id: number;
  phy_profile_name: string;
  prbs: number;
  dl_freq_hz: number;
  ul_freq_hz: number;
  radio_channel: number;
}

export function isMetricsSnapshot(obj: unknown): obj is MetricsSnapshot {
  if (typeof obj !== "object" || obj === null) return false;
  const o = obj as Record<string, unknown>;
  return (
    typeof o.generated_ns === "number" &&
    Array.isArray(o.plan) &&
    typeof o.slices === "object" &&
    o.slices !== null
  );
}
