/** Network layer: JSON verbs plus the event-stream subscription.
 *
 * All mutation goes through the orchestrator; nothing here touches view
 * state. The subscription reads the server-sent event stream with a
 * plain streaming fetch so the same code runs in the browser and under
 * node-based tests, reconnects with exponential backoff, and reports
 * up/down transitions so the view can show a stale indicator.
 */

import type { MetricsSnapshot, SliceEntry, SliceForm } from "./types.js";
import { isMetricsSnapshot } from "./types.js";

let requestCounter = 0;

/** Client-generated id so a retried create is idempotent server-side. */
export function newRequestId(): string {
  const c = globalThis.crypto;
  if (c && "randomUUID" in c) return c.randomUUID();
  requestCounter += 1;
  return `req-${Date.now()}-${requestCounter}-${Math.floor(Math.random() * 1e9)}`;
}

export type VerbResult =
  | { ok: true; body: unknown }
  | { ok: false; error: string };

async function verbResult(res: Response): Promise<VerbResult> {
  let body: unknown = null;
  try {
    body = await res.json();
  } catch {
    return { ok: false, error: `bad reply (http ${res.status})` };
  }
  if (res.ok) return { ok: true, body };
  const err = (body as Record<string, unknown> | null)?.error;
  return { ok: false, error: typeof err === "string" ? err : `http ${res.status}` };
}

export class Gateway {
  constructor(readonly baseUrl: string,
              private readonly fetchImpl: typeof fetch = fetch) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  async listSlices(): Promise<SliceEntry[]> {
    const res = await this.fetchImpl(this.url("/api/slices"));
    if (!res.ok) throw new Error(`list failed: http ${res.status}`);
    return (await res.json()) as SliceEntry[];
  }

  async metrics(): Promise<MetricsSnapshot> {
    const res = await this.fetchImpl(this.url("/api/metrics"));
    if (!res.ok) throw new Error(`metrics failed: http ${res.status}`);
    return (await res.json()) as MetricsSnapshot;
  }

  async createSlice(form: SliceForm, requestId: string): Promise<VerbResult> {
    const res = await this.fetchImpl(this.url("/api/slices"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ ...form, request_id: requestId }),
    });
    return verbResult(res);
  }

  async destroySlice(sliceId: number): Promise<VerbResult> {
    const res = await this.fetchImpl(this.url(`/api/slices/${sliceId}`),
                                     { method: "DELETE" });
    return verbResult(res);
  }

  async setBand(sliceId: number, dlFreqHz: number,
                ulFreqHz: number): Promise<VerbResult> {
    const res = await this.fetchImpl(this.url(`/api/slices/${sliceId}/band`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ dl_freq_hz: dlFreqHz, ul_freq_hz: ulFreqHz }),
    });
    return verbResult(res);
  }
}

export interface EventHandlers {
  onSnapshot(snapshot: MetricsSnapshot): void;
  onStatus(up: boolean): void;
}

export interface SubscribeOptions {
  fetchImpl?: typeof fetch;
  minBackoffMs?: number;
  maxBackoffMs?: number;
}

export interface EventSubscription {
  close(): void;
}

function* sseFrames(buffer: { text: string }): Generator<string> {
  for (;;) {
    const end = buffer.text.indexOf("\n\n");
    if (end < 0) return;
    const frame = buffer.text.slice(0, end);
    buffer.text = buffer.text.slice(end + 2);
    const data = frame
      .split("\n")
      .filter((line) => line.startsWith("data:"))
      .map((line) => line.slice(5).trimStart())
      .join("\n");
    if (data) yield data;
  }
}

/** Subscribe to /api/events until close(); reconnects forever with backoff. */
export function subscribeEvents(baseUrl: string, handlers: EventHandlers,
                                opts: SubscribeOptions = {}): EventSubscription {
  const fetchImpl = opts.fetchImpl ?? fetch;
  const minBackoff = opts.minBackoffMs ?? 250;
  const maxBackoff = opts.maxBackoffMs ?? 5000;
  const url = baseUrl.replace(/\/$/, "") + "/api/events";
  let closed = false;
  let controller: AbortController | null = null;
  let timer: ReturnType<typeof setTimeout> | null = null;

  const sleep = (ms: number) =>
    new Promise<void>((resolve) => {
      timer = setTimeout(resolve, ms);
    });

  async function run(): Promise<void> {
    let backoff = minBackoff;
    while (!closed) {
      controller = new AbortController();
      try {
        const res = await fetchImpl(url, { signal: controller.signal });
        if (!res.ok || !res.body) throw new Error(`stream http ${res.status}`);
        const reader = res.body.getReader();
        const decoder = new TextDecoder();
        const buffer = { text: "" };
        for (;;) {
          const { done, value } = await reader.read();
          if (done) break;
          buffer.text += decoder.decode(value, { stream: true });
          for (const data of sseFrames(buffer)) {
            let parsed: unknown;
            try {
              parsed = JSON.parse(data);
            } catch {
              console.warn("dropped unparseable event frame");
              continue;
            }
            if (!isMetricsSnapshot(parsed)) {
              console.warn("dropped malformed snapshot frame");
              continue;
            }
            backoff = minBackoff;
            handlers.onStatus(true);
            handlers.onSnapshot(parsed);
          }
        }
      } catch {
        // fall through to the retry path
      }
      if (closed) return;
      handlers.onStatus(false);
      await sleep(backoff);
      backoff = Math.min(backoff * 2, maxBackoff);
    }
  }

  void run();
  return {
    close() {
      closed = true;
      if (timer !== null) clearTimeout(timer);
      controller?.abort();
    },
  };
}
