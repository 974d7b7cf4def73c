/** Scripted stand-in for the orchestrator gateway, for console tests.
 *
 * Speaks the same HTTP/JSON routes and event-stream framing as the real
 * service, with deterministic synthetic metrics, optional fault
 * injection, and restartability on a fixed port.
 */

import { createServer, type IncomingMessage, type Server, type ServerResponse } from "node:http";
import type { AddressInfo } from "node:net";
import type { Socket } from "node:net";

interface StoredSlice {
  slice_id: number;
  phy_profile_name: string;
  prbs: number;
  dl_freq_hz: number;
  ul_freq_hz: number;
  radio_channel: number;
  state: string;
}

function bandHalfWidthHz(prbs: number): number {
  return (prbs / 25) * 3_840_000;
}

export class ScriptedOrchestrator {
  readonly slices = new Map<number, StoredSlice>();
  /** Set to make the next event frame unparseable, then self-clears. */
  injectMalformedOnce = false;

  private server: Server | null = null;
  private readonly sockets = new Set<Socket>();
  private readonly streams = new Set<ReturnType<typeof setInterval>>();
  private readonly requestIds = new Map<string, { code: number; body: unknown }>();
  private tick = 0;

  constructor(readonly periodMs: number = 40) {}

  async listen(port = 0): Promise<number> {
    this.server = createServer((req, res) => this.route(req, res));
    this.server.on("connection", (sock) => {
      this.sockets.add(sock);
      sock.on("close", () => this.sockets.delete(sock));
    });
    await new Promise<void>((resolve, reject) => {
      this.server!.once("error", reject);
      this.server!.listen(port, "127.0.0.1", resolve);
    });
    return (this.server!.address() as AddressInfo).port;
  }

  async close(): Promise<void> {
    for (const timer of this.streams) clearInterval(timer);
    this.streams.clear();
    for (const sock of this.sockets) sock.destroy();
    if (this.server) {
      await new Promise<void>((resolve) => this.server!.close(() => resolve()));
      this.server = null;
    }
  }

  addSlice(slice: Omit<StoredSlice, "state">): void {
    this.slices.set(slice.slice_id, { ...slice, state: "running" });
  }

  snapshot(): Record<string, unknown> {
    this.tick += 1;
    const slices: Record<string, unknown> = {};
    const plan: unknown[] = [];
    for (const s of this.slices.values()) {
      const half = bandHalfWidthHz(s.prbs);
      slices[String(s.slice_id)] = {
        ...s,
        alive: true,
        goodput_bps: 8000 + 250 * Math.sin(this.tick / 5 + s.slice_id),
        loss_frames: 0,
        underruns: this.tick,
        rx_ring_high_water: 65536 + 1024 * s.slice_id,
        tx_ring_high_water: 30720,
        endpoint: {
          frames_ok: this.tick * 2, frames_foreign: 0, frames_sent: this.tick * 2,
          bytes_ok: this.tick * 48, sends_late: 0, crc_errors: 0, header_errors: 0,
        },
      };
      plan.push({
        slice_id: s.slice_id,
        dl: [s.dl_freq_hz - half, s.dl_freq_hz + half],
        ul: [s.ul_freq_hz - half, s.ul_freq_hz + half],
        radio_channel: s.radio_channel,
      });
    }
    return {
      active_slices: this.slices.size,
      generated_ns: Date.now() * 1_000_000 + this.tick,
      plan,
      slices,
    };
  }

  private conflictFor(form: StoredSlice): string | null {
    const half = bandHalfWidthHz(form.prbs);
    for (const other of this.slices.values()) {
      if (other.slice_id === form.slice_id) {
        return `slice ${form.slice_id} already exists`;
      }
      if (other.radio_channel === form.radio_channel) {
        return `radio channel ${form.radio_channel} in use by slice ${other.slice_id}`;
      }
      const otherHalf = bandHalfWidthHz(other.prbs);
      if (Math.abs(other.dl_freq_hz - form.dl_freq_hz) < half + otherHalf) {
        return `frequency plan conflict: slice ${other.slice_id} vs slice `
          + `${form.slice_id}: dl bands overlap`;
      }
    }
    return null;
  }

  private route(req: IncomingMessage, res: ServerResponse): void {
    const url = req.url ?? "/";
    if (req.method === "GET" && url === "/api/events") {
      this.streamEvents(res);
      return;
    }
    if (req.method === "GET" && url === "/api/metrics") {
      this.json(res, 200, this.snapshot());
      return;
    }
    if (req.method === "GET" && url === "/api/slices") {
      this.json(res, 200, [...this.slices.values()]);
      return;
    }
    if (req.method === "POST" && url === "/api/slices") {
      void this.readBody(req).then((body) => this.handleCreate(res, body));
      return;
    }
    const destroy = url.match(/^\/api\/slices\/(\d+)$/);
    if (req.method === "DELETE" && destroy) {
      const id = Number(destroy[1]);
      if (!this.slices.delete(id)) {
        this.json(res, 404, { error: `unknown slice ${id}` });
        return;
      }
      this.json(res, 200, { descriptor: { slice_id: id, state: "stopped" } });
      return;
    }
    const band = url.match(/^\/api\/slices\/(\d+)\/band$/);
    if (req.method === "POST" && band) {
      void this.readBody(req).then((body) => {
        const slice = this.slices.get(Number(band[1]));
        if (!slice) {
          this.json(res, 404, { error: `unknown slice ${band[1]}` });
          return;
        }
        slice.dl_freq_hz = Number(body.dl_freq_hz);
        slice.ul_freq_hz = Number(body.ul_freq_hz);
        this.json(res, 200, slice);
      });
      return;
    }
    this.json(res, 404, { error: `no route ${url}` });
  }

  private handleCreate(res: ServerResponse, body: Record<string, unknown>): void {
    const requestId = typeof body.request_id === "string" ? body.request_id : null;
    if (requestId && this.requestIds.has(requestId)) {
      const cached = this.requestIds.get(requestId)!;
      this.json(res, cached.code, cached.body);
      return;
    }
    const form: StoredSlice = {
      slice_id: Number(body.slice_id),
      phy_profile_name: String(body.phy_profile_name),
      prbs: Number(body.prbs),
      dl_freq_hz: Number(body.dl_freq_hz),
      ul_freq_hz: Number(body.ul_freq_hz),
      radio_channel: Number(body.radio_channel),
      state: "running",
    };
    const conflict = this.conflictFor(form);
    const code = conflict ? 400 : 200;
    const reply = conflict ? { error: conflict } : form;
    if (!conflict) this.slices.set(form.slice_id, form);
    if (requestId && !conflict) this.requestIds.set(requestId, { code, body: reply });
    this.json(res, code, reply);
  }

  private streamEvents(res: ServerResponse): void {
    res.writeHead(200, {
      "Content-Type": "text/event-stream",
      "Cache-Control": "no-cache",
    });
    res.write("retry: 1000\n\n");
    const push = () => {
      if (this.injectMalformedOnce) {
        this.injectMalformedOnce = false;
        res.write("data: {not json at all\n\n");
        return;
      }
      res.write(`data: ${JSON.stringify(this.snapshot())}\n\n`);
    };
    push();
    const timer = setInterval(push, this.periodMs);
    this.streams.add(timer);
    res.on("close", () => {
      clearInterval(timer);
      this.streams.delete(timer);
    });
  }

  private json(res: ServerResponse, code: number, body: unknown): void {
    const raw = JSON.stringify(body);
    res.writeHead(code, {
      "Content-Type": "application/json",
      "Content-Length": Buffer.byteLength(raw),
    });
    res.end(raw);
  }

  private readBody(req: IncomingMessage): Promise<Record<string, unknown>> {
    return new Promise((resolve) => {
      const chunks: Buffer[] = [];
      req.on("data", (c: Buffer) => chunks.push(c));
      req.on("end", () => {
        try {
          resolve(JSON.parse(Buffer.concat(chunks).toString() || "{}"));
        } catch {
          resolve({});
        }
      });
    });
  }
}
