"""Control plane: slice lifecycle, band moves, and metrics over two network faces.

The command core is a single-writer loop: every mutation (create, destroy,
set_band) is executed by one worker thread in arrival order, which makes the
frequency-plan safety argument local. Reads (list, metrics) take a snapshot
of the descriptor table under the registry lock and never block on the
worker.

Two faces drive the same core:

* a request-reply socket on TCP 5555 speaking length-prefixed JSON frames
  (4-byte big-endian length, then a UTF-8 JSON object), strictly one
  outstanding request per connection;
* an HTTP/JSON gateway mirroring the verbs at /api/slices and /api/metrics,
  plus a server-sent-event stream at /api/events that pushes a metrics
  snapshot every half second for the console.

Slice execution is behind the SliceRuntime seam. StackRuntime composes the
real thing (shared radio, backend streamers, an in-process endpoint thread
per slice); tests substitute a recording fake to exercise the command core
deterministically.
"""

from __future__ import annotations

import json
import queue
import socket
import socketserver
import struct
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, replace
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .iqcore import (
    BandwidthProfile,
    ConfigError,
    FdmPlan,
    SliceConfig,
    UnsupportedProfileError,
    samples_per_subframe,
    validate_fdm_plan,
)
from .slicestack import FrameError, TrafficConfig, TrxState, phy_profile, run_endpoint

__all__ = [
    "CommandError",
    "FakeRuntime",
    "Orchestrator",
    "OrchestratorService",
    "SliceDescriptor",
    "SliceRuntime",
    "StackRuntime",
    "recv_frame",
    "send_frame",
    "serve",
]

SCHEMA_VERSION = 1
DEFAULT_REQREP_PORT = 5555
DEFAULT_HTTP_PORT = 5580
SNAPSHOT_PERIOD_S = 0.5

VERBS = ("create", "destroy", "list", "metrics", "set_band")

# Descriptor states, in the only order they may move.
ST_REQUESTED = "requested"
ST_RUNNING = "running"
ST_STOPPING = "stopping"
ST_STOPPED = "stopped"

_FRAME_LEN = struct.Struct(">I")
MAX_FRAME_BYTES = 1 << 20

_IDEMPOTENCY_CACHE = 512


class CommandError(Exception):
    """A verb was rejected; the message is the operator-facing reason."""


# ---------------------------------------------------------------------------
# Descriptors
# ---------------------------------------------------------------------------

@dataclass
class SliceDescriptor:
    """Operator-visible record of one slice."""

    slice_id: int
    phy_profile_name: str
    prbs: int
    dl_freq_hz: int
    ul_freq_hz: int
    radio_channel: int
    state: str = ST_REQUESTED
    rx_gain_db: int = 0
    tx_gain_db: int = 0

    def to_dict(self) -> dict:
        return {
            "slice_id": self.slice_id,
            "phy_profile_name": self.phy_profile_name,
            "prbs": self.prbs,
            "dl_freq_hz": self.dl_freq_hz,
            "ul_freq_hz": self.ul_freq_hz,
            "radio_channel": self.radio_channel,
            "state": self.state,
            "rx_gain_db": self.rx_gain_db,
            "tx_gain_db": self.tx_gain_db,
        }

    def config(self) -> SliceConfig:
        return SliceConfig(
            slice_id=self.slice_id,
            profile=BandwidthProfile.from_prbs(self.prbs),
            dl_freq_hz=self.dl_freq_hz,
            ul_freq_hz=self.ul_freq_hz,
            rx_gain_db=self.rx_gain_db,
            tx_gain_db=self.tx_gain_db,
            radio_channel=self.radio_channel,
            phy_profile_name=self.phy_profile_name,
        )


_STATE_ORDER = (ST_REQUESTED, ST_RUNNING, ST_STOPPING, ST_STOPPED)


def _advance_state(desc: SliceDescriptor, new: str) -> None:
    # Transitions only move forward; anything else is a programming error.
    if _STATE_ORDER.index(new) < _STATE_ORDER.index(desc.state):
        raise AssertionError(f"state {desc.state} cannot move back to {new}")
    desc.state = new


# ---------------------------------------------------------------------------
# Runtime seam
# ---------------------------------------------------------------------------

class SliceRuntime:
    """What the command core needs from the data plane.

    ``start`` raises on failure and must leave nothing running for that
    slice. ``stop`` returns the final counters. ``metrics`` returns a
    per-slice mapping of live counters and may be called concurrently with
    anything.
    """

    def start(self, config: SliceConfig, traffic: TrafficConfig) -> None:
        raise NotImplementedError

    def stop(self, slice_id: int) -> dict:
        raise NotImplementedError

    def metrics(self) -> dict[int, dict]:
        raise NotImplementedError

    def close(self) -> None:
        pass


class FakeRuntime(SliceRuntime):
    """Recording runtime for command-core tests: no radio, no threads.

    ``fail_start`` holds slice ids whose next start must raise, emulating a
    backend failure after validation passed.
    """

    def __init__(self):
        self.calls: list[tuple] = []
        self.live: dict[int, SliceConfig] = {}
        self.fail_start: set[int] = set()
        self.stop_counters: dict[int, dict] = {}

    def start(self, config: SliceConfig, traffic: TrafficConfig) -> None:
        self.calls.append(("start", config.slice_id))
        if config.slice_id in self.fail_start:
            raise CommandError(f"injected start failure for slice {config.slice_id}")
        self.live[config.slice_id] = config

    def stop(self, slice_id: int) -> dict:
        self.calls.append(("stop", slice_id))
        self.live.pop(slice_id, None)
        return self.stop_counters.get(slice_id, {"slice_id": slice_id})

    def metrics(self) -> dict[int, dict]:
        return {sid: {"slice_id": sid, "state": "running"} for sid in self.live}


# ---------------------------------------------------------------------------
# Real runtime: radio + backend + one endpoint thread per slice
# ---------------------------------------------------------------------------

@dataclass
class _RunningSlice:
    config: SliceConfig
    device: object
    thread: threading.Thread | None
    stop_event: threading.Event
    state: TrxState
    started_ns: int
    crashed: BaseException | None = None
    counters_final: dict | None = None


class StackRuntime(SliceRuntime):
    """Full data plane in one process.

    Owns the shared radio and the backend; each started slice gets the
    provisioned channel triple, a remoted frontend device, and a traffic
    endpoint thread. Loopback (no attached UE) means every slice decodes
    its own transmissions, which is what the goodput figures measure.
    """

    def __init__(self, root: str | Path | None = None, fast_clock: bool = False,
                 record_ledger: bool = False, n_radio_channels: int = 4,
                 data_ring_capacity: int | None = None):
        from .pvback import Backend
        from .radiodev import VirtualRadio
        from .vchan import RendezvousStore
        import tempfile

        self._tmp = tempfile.TemporaryDirectory(dir=root)
        self.store = RendezvousStore(self._tmp.name)
        self.radio = VirtualRadio(fast_clock=fast_clock)
        extra = {}
        if data_ring_capacity is not None:
            # A ring shorter than the transmit lead keeps a fast-clock run
            # coherent: backpressure pins the radio cursor inside the lead,
            # so self-loopback frames are never stamped into the past.
            extra["data_ring_capacity"] = data_ring_capacity
        self.backend = Backend(self.store, self.radio,
                               n_radio_channels=n_radio_channels,
                               record_ledger=record_ledger, **extra)
        self._slices: dict[int, _RunningSlice] = {}
        self._lock = threading.Lock()

    def start(self, config: SliceConfig, traffic: TrafficConfig) -> None:
        from .pvback import connect_frontend

        sid = config.slice_id
        profile = phy_profile(config.phy_profile_name)
        self.backend.provision(sid)
        try:
            device = connect_frontend(self.store, sid)
        except Exception:
            self.backend.unprovision(sid)
            raise
        try:
            device.establish(config)
        except Exception:
            device.close()
            self.backend.unprovision(sid)
            raise

        state = TrxState(slice_id=sid, phy=profile.name)
        stop_event = threading.Event()
        spsf = samples_per_subframe(config.profile)
        handle = _RunningSlice(config, device, None, stop_event, state,
                               time.monotonic_ns())

        def loop() -> None:
            try:
                run_endpoint(device, profile, sid, spsf,
                             config.effective_tx_lead(), traffic,
                             stop=stop_event, state=state)
            except Exception as e:  # peer closed under us, or a crash kill
                handle.crashed = e

        handle.thread = threading.Thread(target=loop, name=f"endpoint-{sid}",
                                         daemon=True)
        with self._lock:
            self._slices[sid] = handle
        handle.thread.start()

    def stop(self, slice_id: int) -> dict:
        with self._lock:
            handle = self._slices.pop(slice_id, None)
        if handle is None:
            raise CommandError(f"slice {slice_id} is not running")
        handle.stop_event.set()
        # Ending the backend session closes the data channels, which
        # unblocks an endpoint parked in recv.
        backend_counters = self.backend.unprovision(slice_id) or {}
        handle.thread.join(timeout=10)
        handle.device.close()
        final = {
            "slice_id": slice_id,
            "endpoint": handle.state.to_dict(),
            "backend": backend_counters,
        }
        handle.counters_final = final
        return final

    def kill_frontend(self, slice_id: int) -> None:
        """Sever one slice's frontend abruptly: the crash fault injection.

        The channels close without a shutdown handshake; the backend session
        ends the way it would if the frontend process died.
        """
        with self._lock:
            handle = self._slices.get(slice_id)
        if handle is None:
            raise CommandError(f"slice {slice_id} is not running")
        handle.device.close()
        handle.thread.join(timeout=10)

    def metrics(self) -> dict[int, dict]:
        backend = self.backend.metrics()
        now = time.monotonic_ns()
        out: dict[int, dict] = {}
        with self._lock:
            slices = dict(self._slices)
        for sid, handle in slices.items():
            ep = handle.state.to_dict()
            elapsed_s = max((now - handle.started_ns) / 1e9, 1e-9)
            entry = {
                "slice_id": sid,
                "endpoint": ep,
                "goodput_bps": round(ep["bytes_ok"] * 8 / elapsed_s, 3),
                "loss_frames": ep["sends_late"] + ep["header_errors"] + ep["crc_errors"],
                "alive": handle.thread.is_alive(),
            }
            entry.update(backend.get(sid, {}))
            out[sid] = entry
        return out

    def close(self) -> None:
        with self._lock:
            ids = list(self._slices)
        for sid in ids:
            try:
                self.stop(sid)
            except CommandError:
                pass
        self.backend.shutdown()
        self._tmp.cleanup()


# ---------------------------------------------------------------------------
# Command core
# ---------------------------------------------------------------------------

def _require(body: dict, key: str):
    if key not in body:
        raise CommandError(f"missing field {key!r}")
    return body[key]


def _traffic_from_body(body: dict) -> TrafficConfig:
    try:
        return TrafficConfig(
            payload_len=int(body.get("payload_len", 32)),
            interval_subframes=int(body.get("interval_subframes", 1)),
            seed=int(body.get("seed", 0)),
        )
    except ValueError as e:
        raise CommandError(str(e)) from None


class Orchestrator:
    """Single-writer command core over a SliceRuntime.

    ``execute`` is the one entry point both network faces use. Mutating
    verbs are serialized through a worker thread; reads snapshot under the
    registry lock. A request may carry a ``request_id``: replies are cached
    so a client retry of the same id cannot double-apply a mutation.
    """

    def __init__(self, runtime: SliceRuntime):
        self.runtime = runtime
        self._registry: dict[int, SliceDescriptor] = {}
        self._reg_lock = threading.Lock()
        self._queue: "queue.Queue[tuple | None]" = queue.Queue()
        self._replies: OrderedDict[str, tuple[str, object]] = OrderedDict()
        self._closed = False
        self._worker = threading.Thread(target=self._run, name="orch-commands",
                                        daemon=True)
        self._worker.start()

    # -- public face ---------------------------------------------------------

    def execute(self, verb: str, body: dict | None = None) -> tuple[str, object]:
        """Run one verb; returns (status, reply_body) and never raises."""
        body = body or {}
        if self._closed:
            return "error", {"error": "orchestrator is shut down"}
        if verb not in VERBS:
            return "error", {"error": f"unknown verb {verb!r}"}
        if not isinstance(body, dict):
            return "error", {"error": "body must be an object"}
        if verb == "list":
            return "ok", self.list_slices()
        if verb == "metrics":
            return "ok", self.metrics()

        request_id = body.get("request_id")
        if request_id is not None:
            with self._reg_lock:
                hit = self._replies.get(request_id)
                if hit is not None:
                    self._replies.move_to_end(request_id)
                    return hit

        done = threading.Event()
        slot: list = [None]
        self._queue.put((verb, body, done, slot))
        done.wait()
        status, reply = slot[0]
        if request_id is not None and status == "ok":
            with self._reg_lock:
                self._replies[request_id] = (status, reply)
                while len(self._replies) > _IDEMPOTENCY_CACHE:
                    self._replies.popitem(last=False)
        return status, reply

    def list_slices(self) -> list[dict]:
        with self._reg_lock:
            return [d.to_dict() for _, d in sorted(self._registry.items())]

    def metrics(self) -> dict:
        # One read of the registry, one read of the runtime: the snapshot
        # is consistent with respect to the descriptor table.
        with self._reg_lock:
            descriptors = {sid: d.to_dict() for sid, d in self._registry.items()}
            configs = [d.config() for d in self._registry.values()
                       if d.state in (ST_REQUESTED, ST_RUNNING)]
        live = self.runtime.metrics()
        slices = {}
        for sid, desc in descriptors.items():
            entry = dict(desc)
            entry.update(live.get(sid, {}))
            slices[str(sid)] = entry
        plan = FdmPlan.from_configs(configs)
        return {
            "active_slices": len(descriptors),
            "slices": slices,
            "plan": [
                {
                    "slice_id": e.slice_id,
                    "dl": [e.dl.lo, e.dl.hi],
                    "ul": [e.ul.lo, e.ul.hi],
                    "radio_channel": e.radio_channel,
                }
                for e in plan.entries
            ],
            "generated_ns": time.time_ns(),
        }

    def active_configs(self) -> list[SliceConfig]:
        """Configs of slices the plan must account for (used by auditors)."""
        with self._reg_lock:
            return [d.config() for d in self._registry.values()
                    if d.state in (ST_REQUESTED, ST_RUNNING)]

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        self._queue.put(None)
        self._worker.join(timeout=10)
        self.runtime.close()

    # -- worker ----------------------------------------------------------------

    def _run(self) -> None:
        while True:
            item = self._queue.get()
            if item is None:
                return
            verb, body, done, slot = item
            try:
                if verb == "create":
                    reply = self._create(body)
                elif verb == "destroy":
                    reply = self._destroy(body)
                elif verb == "set_band":
                    reply = self._set_band(body)
                else:
                    raise CommandError(f"verb {verb!r} is not a mutation")
                slot[0] = ("ok", reply)
            except CommandError as e:
                slot[0] = ("error", {"error": str(e)})
            except Exception as e:  # runtime failure surfaced to the caller
                slot[0] = ("error", {"error": f"{type(e).__name__}: {e}"})
            finally:
                done.set()

    # -- verbs -----------------------------------------------------------------

    def _parse_descriptor(self, body: dict) -> SliceDescriptor:
        try:
            desc = SliceDescriptor(
                slice_id=int(_require(body, "slice_id")),
                phy_profile_name=str(_require(body, "phy_profile_name")),
                prbs=int(_require(body, "prbs")),
                dl_freq_hz=int(_require(body, "dl_freq_hz")),
                ul_freq_hz=int(_require(body, "ul_freq_hz")),
                radio_channel=int(_require(body, "radio_channel")),
                rx_gain_db=int(body.get("rx_gain_db", 0)),
                tx_gain_db=int(body.get("tx_gain_db", 0)),
            )
        except (TypeError, ValueError) as e:
            raise CommandError(f"bad descriptor: {e}") from None
        try:
            phy_profile(desc.phy_profile_name)
            BandwidthProfile.from_prbs(desc.prbs)
        except (FrameError, UnsupportedProfileError, ConfigError) as e:
            raise CommandError(str(e)) from None
        return desc

    def _check_plan(self, configs: list[SliceConfig]) -> None:
        conflicts = validate_fdm_plan(FdmPlan.from_configs(configs))
        if conflicts:
            raise CommandError(f"frequency plan conflict: {conflicts[0]}")

    def _create(self, body: dict) -> dict:
        desc = self._parse_descriptor(body)
        traffic = _traffic_from_body(body)
        with self._reg_lock:
            if desc.slice_id in self._registry:
                raise CommandError(f"slice {desc.slice_id} already exists")
            current = [d.config() for d in self._registry.values()
                       if d.state in (ST_REQUESTED, ST_RUNNING)]
        # All validation precedes any runtime call.
        self._check_plan(current + [desc.config()])
        with self._reg_lock:
            self._registry[desc.slice_id] = desc
        try:
            self.runtime.start(desc.config(), traffic)
        except Exception as e:
            # Roll back: the descriptor ends stopped and leaves the table.
            _advance_state(desc, ST_STOPPED)
            with self._reg_lock:
                self._registry.pop(desc.slice_id, None)
            raise CommandError(f"backend start failed: {e}") from None
        _advance_state(desc, ST_RUNNING)
        return desc.to_dict()

    def _get(self, body: dict) -> SliceDescriptor:
        try:
            sid = int(_require(body, "slice_id"))
        except (TypeError, ValueError):
            raise CommandError(f"bad slice_id {body.get('slice_id')!r}") from None
        with self._reg_lock:
            desc = self._registry.get(sid)
        if desc is None:
            raise CommandError(f"unknown slice {sid}")
        return desc

    def _destroy(self, body: dict) -> dict:
        desc = self._get(body)
        _advance_state(desc, ST_STOPPING)
        try:
            counters = self.runtime.stop(desc.slice_id)
        finally:
            _advance_state(desc, ST_STOPPED)
            with self._reg_lock:
                self._registry.pop(desc.slice_id, None)
        return {"descriptor": desc.to_dict(), "counters": counters}

    def _set_band(self, body: dict) -> dict:
        desc = self._get(body)
        dl = int(_require(body, "dl_freq_hz"))
        ul = int(_require(body, "ul_freq_hz"))
        new_cfg = desc.config().with_bands(dl, ul)
        with self._reg_lock:
            others = [d.config() for d in self._registry.values()
                      if d.slice_id != desc.slice_id
                      and d.state in (ST_REQUESTED, ST_RUNNING)]
        # Reject before touching the slice so a conflict leaves it streaming
        # on the original band.
        self._check_plan(others + [new_cfg])
        if desc.state != ST_RUNNING:
            raise CommandError(f"slice {desc.slice_id} is {desc.state}, not running")
        traffic = _traffic_from_body(body)
        # Band move is a restart: stop, retune, start.
        self.runtime.stop(desc.slice_id)
        replacement = replace(desc, dl_freq_hz=dl, ul_freq_hz=ul)
        try:
            self.runtime.start(replacement.config(), traffic)
        except Exception as e:
            _advance_state(desc, ST_STOPPING)
            _advance_state(desc, ST_STOPPED)
            with self._reg_lock:
                self._registry.pop(desc.slice_id, None)
            raise CommandError(f"restart on new band failed: {e}") from None
        desc.dl_freq_hz = dl
        desc.ul_freq_hz = ul
        return desc.to_dict()


# ---------------------------------------------------------------------------
# Request-reply wire face
# ---------------------------------------------------------------------------

def send_frame(sock: socket.socket, obj: dict) -> None:
    raw = json.dumps(obj, sort_keys=True).encode()
    if len(raw) > MAX_FRAME_BYTES:
        raise ValueError(f"frame of {len(raw)} bytes exceeds the limit")
    sock.sendall(_FRAME_LEN.pack(len(raw)) + raw)


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    chunks = []
    while n:
        piece = sock.recv(n)
        if not piece:
            return None
        chunks.append(piece)
        n -= len(piece)
    return b"".join(chunks)


def recv_frame(sock: socket.socket) -> dict | None:
    """One frame, or None on clean EOF. Raises on an untrustable stream."""
    head = _recv_exact(sock, _FRAME_LEN.size)
    if head is None:
        return None
    (length,) = _FRAME_LEN.unpack(head)
    if length > MAX_FRAME_BYTES:
        raise ValueError(f"frame length {length} exceeds the limit")
    raw = _recv_exact(sock, length)
    if raw is None:
        return None
    try:
        obj = json.loads(raw.decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        # Framing is intact (exactly `length` bytes were consumed), so the
        # connection survives; the payload alone is rejected.
        return {"_malformed": True}
    if not isinstance(obj, dict):
        return {"_malformed": True}
    return obj


class _ReqRepServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class _ReqRepHandler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        orch: Orchestrator = self.server.orchestrator  # type: ignore[attr-defined]
        sock = self.request
        while True:
            try:
                req = recv_frame(sock)
            except (ValueError, OSError):
                return
            if req is None:
                return
            if req.get("_malformed"):
                reply = {"schema_version": SCHEMA_VERSION, "status": "error",
                         "body": {"error": "malformed request"}}
            else:
                verb = req.get("verb")
                body = req.get("body") or {}
                if not isinstance(body, dict):
                    status, out = "error", {"error": "body must be an object"}
                else:
                    status, out = orch.execute(verb, body)
                reply = {"schema_version": SCHEMA_VERSION, "status": status,
                         "body": out}
            try:
                send_frame(sock, reply)
            except OSError:
                return


def request(host: str, port: int, verb: str, body: dict | None = None,
            timeout: float = 10.0) -> tuple[str, object]:
    """One-shot client helper: connect, send one request, read the reply."""
    with socket.create_connection((host, port), timeout=timeout) as sock:
        send_frame(sock, {"schema_version": SCHEMA_VERSION, "verb": verb,
                          "body": body or {}})
        reply = recv_frame(sock)
    if reply is None or reply.get("_malformed"):
        raise ConnectionError("no usable reply")
    return reply.get("status", "error"), reply.get("body")


# ---------------------------------------------------------------------------
# HTTP/JSON gateway with the event stream
# ---------------------------------------------------------------------------

class _HttpHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    # Quiet: the console polls and streams constantly.
    def log_message(self, fmt, *args):  # noqa: D102
        pass

    @property
    def orch(self) -> Orchestrator:
        return self.server.orchestrator  # type: ignore[attr-defined]

    def _send_json(self, code: int, obj) -> None:
        raw = json.dumps(obj, sort_keys=True).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(raw)

    def _send_verb(self, verb: str, body: dict) -> None:
        status, out = self.orch.execute(verb, body)
        if status == "ok":
            self._send_json(200, out)
            return
        message = out.get("error", "") if isinstance(out, dict) else str(out)
        code = 404 if message.startswith("unknown slice") else 400
        self._send_json(code, out)

    def _read_body(self) -> dict | None:
        length = int(self.headers.get("Content-Length") or 0)
        if length > MAX_FRAME_BYTES:
            self._send_json(400, {"error": "body too large"})
            return None
        raw = self.rfile.read(length) if length else b"{}"
        try:
            obj = json.loads(raw.decode() or "{}")
        except (UnicodeDecodeError, json.JSONDecodeError):
            self._send_json(400, {"error": "malformed JSON body"})
            return None
        if not isinstance(obj, dict):
            self._send_json(400, {"error": "body must be an object"})
            return None
        return obj

    def do_GET(self) -> None:  # noqa: N802
        if self.path == "/api/slices":
            self._send_verb("list", {})
        elif self.path == "/api/metrics":
            self._send_verb("metrics", {})
        elif self.path == "/api/events":
            self._stream_events()
        else:
            self._send_json(404, {"error": f"no route {self.path}"})

    def do_POST(self) -> None:  # noqa: N802
        body = self._read_body()
        if body is None:
            return
        if self.path == "/api/slices":
            self._send_verb("create", body)
            return
        parts = self.path.strip("/").split("/")
        if len(parts) == 4 and parts[:2] == ["api", "slices"] and parts[3] == "band":
            body["slice_id"] = parts[2]
            self._send_verb("set_band", body)
            return
        self._send_json(404, {"error": f"no route {self.path}"})

    def do_DELETE(self) -> None:  # noqa: N802
        parts = self.path.strip("/").split("/")
        if len(parts) == 3 and parts[:2] == ["api", "slices"]:
            self._send_verb("destroy", {"slice_id": parts[2]})
            return
        self._send_json(404, {"error": f"no route {self.path}"})

    def _stream_events(self) -> None:
        self.send_response(200)
        self.send_header("Content-Type", "text/event-stream")
        self.send_header("Cache-Control", "no-cache")
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        stopping: threading.Event = self.server.stopping  # type: ignore[attr-defined]
        period: float = self.server.snapshot_period_s  # type: ignore[attr-defined]
        try:
            self.wfile.write(b"retry: 1000\n\n")
            self.wfile.flush()
            while not stopping.is_set():
                snap = self.orch.metrics()
                payload = json.dumps(snap, sort_keys=True)
                self.wfile.write(f"data: {payload}\n\n".encode())
                self.wfile.flush()
                stopping.wait(period)
        except (BrokenPipeError, ConnectionResetError, OSError):
            return


class _HttpServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True


# ---------------------------------------------------------------------------
# Service wrapper
# ---------------------------------------------------------------------------

class OrchestratorService:
    """Both network faces over one command core, started until close()."""

    def __init__(self, orchestrator: Orchestrator, bind_addr: str = "127.0.0.1",
                 reqrep_port: int = DEFAULT_REQREP_PORT,
                 http_port: int = DEFAULT_HTTP_PORT,
                 snapshot_period_s: float = SNAPSHOT_PERIOD_S):
        self.orchestrator = orchestrator
        self._stopping = threading.Event()

        self._reqrep = _ReqRepServer((bind_addr, reqrep_port), _ReqRepHandler)
        self._reqrep.orchestrator = orchestrator  # type: ignore[attr-defined]
        self.reqrep_port = self._reqrep.server_address[1]

        self._http = _HttpServer((bind_addr, http_port), _HttpHandler)
        self._http.orchestrator = orchestrator  # type: ignore[attr-defined]
        self._http.stopping = self._stopping  # type: ignore[attr-defined]
        self._http.snapshot_period_s = snapshot_period_s  # type: ignore[attr-defined]
        self.http_port = self._http.server_address[1]

        self.bind_addr = bind_addr
        self._threads = [
            threading.Thread(target=self._reqrep.serve_forever,
                             name="orch-reqrep", daemon=True),
            threading.Thread(target=self._http.serve_forever,
                             name="orch-http", daemon=True),
        ]
        for t in self._threads:
            t.start()

    def close(self) -> None:
        self._stopping.set()
        self._reqrep.shutdown()
        self._http.shutdown()
        self._reqrep.server_close()
        self._http.server_close()
        for t in self._threads:
            t.join(timeout=10)
        self.orchestrator.close()


def serve(bind_addr: str = "127.0.0.1", reqrep_port: int = DEFAULT_REQREP_PORT,
          http_port: int = DEFAULT_HTTP_PORT,
          runtime: SliceRuntime | None = None,
          snapshot_period_s: float = SNAPSHOT_PERIOD_S) -> OrchestratorService:
    """Start the control plane; returns the running service."""
    if runtime is None:
        runtime = StackRuntime()
    return OrchestratorService(Orchestrator(runtime), bind_addr=bind_addr,
                               reqrep_port=reqrep_port, http_port=http_port,
                               snapshot_period_s=snapshot_period_s)
