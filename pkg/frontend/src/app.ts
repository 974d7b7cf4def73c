/** Composition root: wires the store, the gateway, and the DOM together.
 *
 * Rendering is synchronous from the current state; every network effect
 * dispatches events back into the store. No view code awaits a request.
 */

import { Gateway, newRequestId, subscribeEvents } from "./client.js";
import type { ConsoleState, SliceRow } from "./store.js";
import { WINDOW_MS, initialState, reduce } from "./store.js";
import { paintGauge, paintSparkline, sparklinePoints, gaugeFraction } from "./charts.js";
import { buildRails, paintRail, sliceColor } from "./spectrum.js";
import type { SliceForm } from "./types.js";

const BASE_URL = (window as { PVRAN_BASE_URL?: string }).PVRAN_BASE_URL
  ?? `http://${location.hostname}:5580`;

const PRB_CHOICES = [25, 50, 100];

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

class Console {
  private state: ConsoleState = initialState();
  private readonly gateway = new Gateway(BASE_URL);
  private ringMax = 1;

  start(): void {
    subscribeEvents(BASE_URL, {
      onSnapshot: (snapshot) => {
        this.dispatch({ kind: "snapshot", atMs: Date.now(), snapshot });
      },
      onStatus: (up) => {
        this.dispatch({ kind: "connection", atMs: Date.now(), up });
      },
    });
    el<HTMLFormElement>("create-form").addEventListener("submit", (ev) => {
      ev.preventDefault();
      this.submitCreate();
    });
  }

  private dispatch(event: Parameters<typeof reduce>[1]): void {
    this.state = reduce(this.state, event);
    this.render();
  }

  /** Advisory only; the orchestrator revalidates everything. */
  private readForm(): { form: SliceForm | null; problem: string | null } {
    const num = (id: string) => Number(el<HTMLInputElement>(id).value);
    const form: SliceForm = {
      slice_id: num("f-id"),
      phy_profile_name: el<HTMLSelectElement>("f-phy").value,
      prbs: num("f-prbs"),
      dl_freq_hz: num("f-dl"),
      ul_freq_hz: num("f-ul"),
      radio_channel: num("f-chan"),
    };
    if (!Number.isInteger(form.slice_id) || form.slice_id < 0) {
      return { form: null, problem: "slice id must be a non-negative integer" };
    }
    if (!PRB_CHOICES.includes(form.prbs)) {
      return { form: null, problem: `prbs must be one of ${PRB_CHOICES.join(", ")}` };
    }
    if (form.dl_freq_hz <= 0 || form.ul_freq_hz <= 0) {
      return { form: null, problem: "frequencies must be positive Hz" };
    }
    return { form, problem: null };
  }

  private submitCreate(): void {
    const { form, problem } = this.readForm();
    if (!form) {
      el("form-error").textContent = problem;
      return;
    }
    const requestId = newRequestId();
    this.dispatch({ kind: "create-submitted", atMs: Date.now(), requestId, form });
    this.gateway.createSlice(form, requestId).then((result) => {
      if (result.ok) {
        this.dispatch({ kind: "create-accepted", atMs: Date.now(), requestId });
      } else {
        this.dispatch({
          kind: "create-rejected", atMs: Date.now(), requestId,
          error: result.error,
        });
      }
    }, () => {
      this.dispatch({
        kind: "create-rejected", atMs: Date.now(), requestId,
        error: "network failure, resubmit to retry (same request id is safe)",
      });
    });
  }

  private render(): void {
    const status = el("status");
    if (this.state.connected) {
      status.textContent = "live";
      status.className = "status live";
    } else {
      const since = this.state.staleSinceMs;
      status.textContent = since
        ? `stale since ${new Date(since).toLocaleTimeString()} (retrying)`
        : "connecting";
      status.className = "status stale";
    }

    el("form-error").textContent = this.state.pending?.error ?? "";

    this.renderTable();
    this.renderSpectrum();
  }

  private renderTable(): void {
    const tbody = el<HTMLTableSectionElement>("slice-rows");
    tbody.textContent = "";
    const now = Date.now();
    for (const row of [...this.state.rows.values()].sort((a, b) => a.id - b.id)) {
      tbody.appendChild(this.renderRow(row, now));
    }
  }

  private renderRow(row: SliceRow, now: number): HTMLTableRowElement {
    const tr = document.createElement("tr");
    if (row.frozen) tr.className = "frozen";
    const cells = [
      String(row.id), row.state + (row.frozen ? " (gone)" : ""), row.phy,
      String(row.prbs),
      `${(row.dlFreqHz / 1e6).toFixed(1)} / ${(row.ulFreqHz / 1e6).toFixed(1)} MHz`,
      `${(row.goodputBps / 1000).toFixed(1)} kbps`,
      String(row.underruns),
    ];
    for (const text of cells) {
      const td = document.createElement("td");
      td.textContent = text;
      tr.appendChild(td);
    }

    const spark = document.createElement("td");
    const canvas = document.createElement("canvas");
    canvas.width = 180;
    canvas.height = 28;
    const ctx = canvas.getContext("2d");
    if (ctx) {
      const pts = sparklinePoints(row.series, (p) => p.goodputBps, now,
                                  WINDOW_MS, canvas.width, canvas.height);
      paintSparkline(ctx, pts, canvas.width, canvas.height,
                     row.frozen ? "#666" : sliceColor(row.id));
    }
    spark.appendChild(canvas);
    tr.appendChild(spark);

    const gaugeTd = document.createElement("td");
    const gauge = document.createElement("canvas");
    gauge.width = 60;
    gauge.height = 10;
    this.ringMax = Math.max(this.ringMax, row.ringHighWater);
    const gctx = gauge.getContext("2d");
    if (gctx) {
      paintGauge(gctx, gaugeFraction(row.ringHighWater, this.ringMax),
                 gauge.width, gauge.height);
    }
    gaugeTd.appendChild(gauge);
    tr.appendChild(gaugeTd);

    const actions = document.createElement("td");
    if (!row.frozen) {
      const destroy = document.createElement("button");
      destroy.textContent = "destroy";
      destroy.addEventListener("click", () => {
        void this.gateway.destroySlice(row.id);
      });
      actions.appendChild(destroy);

      const retune = document.createElement("button");
      retune.textContent = "re-band";
      retune.addEventListener("click", () => {
        const dl = Number(prompt("new DL frequency (Hz)", String(row.dlFreqHz)));
        const ul = Number(prompt("new UL frequency (Hz)", String(row.ulFreqHz)));
        if (dl > 0 && ul > 0) {
          this.gateway.setBand(row.id, dl, ul).then((result) => {
            if (!result.ok) el("form-error").textContent = result.error;
          });
        }
      });
      actions.appendChild(retune);
    }
    tr.appendChild(actions);
    return tr;
  }

  private renderSpectrum(): void {
    const rails = buildRails(this.state.plan);
    for (const [id, rail] of [["spectrum-dl", rails.dl],
                              ["spectrum-ul", rails.ul]] as const) {
      const canvas = el<HTMLCanvasElement>(id);
      const ctx = canvas.getContext("2d");
      if (ctx) paintRail(ctx, rail, canvas.width, canvas.height);
    }
    el("spectrum-error").textContent =
      rails.dl.overlapPairs.length || rails.ul.overlapPairs.length
        ? "PLAN OVERLAP REPORTED BY SERVER"
        : "";
  }
}

new Console().start();
