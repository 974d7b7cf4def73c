"""Transport benchmarks: shared-memory channels against a pub-sub baseline.

The measurement mirrors the streaming path itself: a producer thread stamps
a monotonic clock into the head of each message, a consumer thread stamps
again on arrival, and the one-way latency is the difference. Both
endpoints live in one process on one host, so there is a single clock
domain and no skew to correct. Sends are paced so every message finds the
transport idle; this measures the wake-up and copy path, not queue depth.

Two transports are measured with identical sizes and counts:

``shm_vchan``
    The same file-backed shared-memory stream channels the backend uses
    for I/Q, one mapping per endpoint.

``pubsub_socket``
    A small publish-subscribe socket layer over loopback TCP with Nagle
    disabled: topic-framed messages, fan-out to subscribers from an
    internal distribution thread, and a delivery queue on the subscriber
    side. Those internal handoffs are the standard pub-sub library
    architecture, and they are what the comparison is about: message-bus
    style IPC against a mapped ring.

The capacity estimate converts a mean one-way latency into how many slice
transactions fit inside one 1 ms subframe, where a transaction is one
subframe write plus one subframe read: 5 us means 100, 75 us means 6.
"""

from __future__ import annotations

import gc
import json
import math
import queue
import socket
import statistics
import struct
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .iqcore import (
    BandwidthProfile,
    IQBuffer,
    SliceConfig,
    bytes_per_subframe,
    samples_per_subframe,
)
from .vchan import RendezvousStore, client_connect, server_create, server_teardown

SHM = "shm_vchan"
PUBSUB = "pubsub_socket"
TRANSPORTS = (SHM, PUBSUB)

SUBFRAME_US = 1000.0
DEFAULT_WARMUP = 100
DEFAULT_GAP_US = 200.0
MIN_ITERS = 1000
IO_TIMEOUT_S = 30.0  # a stuck peer surfaces as an error, not a hang

STAMP = struct.Struct("<Q")
ENVELOPE = struct.Struct("<BI")  # topic length, payload length
TOPIC_IQ = b"iq"

_SERVER_ID = "bench"
_PATH = "bench/oneway"


class BenchError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

def nearest_rank(sorted_samples: list[float], q: float) -> float:
    """Nearest-rank percentile; q in (0, 1]. Input must be sorted."""
    if not sorted_samples:
        raise BenchError("no samples")
    k = max(1, math.ceil(q * len(sorted_samples)))
    return sorted_samples[k - 1]


@dataclass(frozen=True)
class LatencyStats:
    """Raw-sample summary; never computed from running aggregates."""

    n: int
    min_us: float
    mean_us: float
    median_us: float
    p99_us: float
    max_us: float

    @classmethod
    def from_samples(cls, samples_us: list[float]) -> "LatencyStats":
        s = sorted(samples_us)
        # fmean can land 1 ulp outside [min, max] (e.g. identical samples);
        # clamp so the ordering invariant survives rounding.
        mean = min(max(statistics.fmean(s), s[0]), s[-1])
        return cls(
            n=len(s),
            min_us=s[0],
            mean_us=mean,
            median_us=statistics.median(s),
            p99_us=nearest_rank(s, 0.99),
            max_us=s[-1],
        )

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "min_us": round(self.min_us, 3),
            "mean_us": round(self.mean_us, 3),
            "median_us": round(self.median_us, 3),
            "p99_us": round(self.p99_us, 3),
            "max_us": round(self.max_us, 3),
        }


def capacity_estimate(mean_one_way_us: float,
                      budget_us: float = SUBFRAME_US) -> int:
    """Subframe-sized transactions per 1 ms at a given mean one-way latency.

    One transaction costs two one-way trips (a subframe out, a subframe
    back), so the bound is floor(budget / (2 x mean)). This is a
    methodology-derived bound on slice count per transport, not a measured
    scheduling result.
    """
    if mean_one_way_us <= 0:
        raise BenchError("latency must be positive")
    return int(budget_us // (2.0 * mean_one_way_us))


# ---------------------------------------------------------------------------
# Pub-sub socket layer
# ---------------------------------------------------------------------------

def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    while n:
        got = sock.recv(n)
        if not got:
            raise BenchError("peer closed mid-message")
        chunks.append(got)
        n -= len(got)
    return b"".join(chunks)


class PubSocket:
    """Topic-framed fan-out publisher.

    publish() only enqueues; an internal distribution thread frames the
    message and writes it to every subscriber whose subscription is a
    prefix of the topic. Subscribers that joined after a message was
    published never see it.
    """

    def __init__(self) -> None:
        self._listener = socket.create_server(("127.0.0.1", 0))
        self._listener.settimeout(0.2)
        self._subs: list[tuple[socket.socket, bytes]] = []
        self._lock = threading.Lock()
        self._joined = threading.Condition(self._lock)
        self._queue: queue.SimpleQueue = queue.SimpleQueue()
        self._stop = threading.Event()
        self._acceptor = threading.Thread(target=self._accept_loop,
                                          name="pub-accept", daemon=True)
        self._distributor = threading.Thread(target=self._dist_loop,
                                             name="pub-dist", daemon=True)
        self._acceptor.start()
        self._distributor.start()

    @property
    def port(self) -> int:
        return self._listener.getsockname()[1]

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                sock, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            (tlen,) = sock.recv(1)
            prefix = _recv_exact(sock, tlen) if tlen else b""
            with self._joined:
                self._subs.append((sock, prefix))
                self._joined.notify_all()

    def wait_subscribers(self, n: int, timeout: float = IO_TIMEOUT_S) -> None:
        with self._joined:
            if not self._joined.wait_for(lambda: len(self._subs) >= n, timeout):
                raise BenchError(f"fewer than {n} subscribers joined")

    def publish(self, topic: bytes, payload: bytes) -> None:
        self._queue.put((topic, payload))

    def _dist_loop(self) -> None:
        while True:
            item = self._queue.get()
            if item is None:
                return
            topic, payload = item
            frame = ENVELOPE.pack(len(topic), len(payload)) + topic + payload
            with self._lock:
                targets = [s for s, prefix in self._subs
                           if topic.startswith(prefix)]
            for sock in targets:
                try:
                    sock.sendall(frame)
                except OSError:
                    with self._lock:
                        self._subs = [(s, p) for s, p in self._subs
                                      if s is not sock]

    def close(self) -> None:
        self._stop.set()
        self._queue.put(None)
        self._listener.close()
        self._acceptor.join(timeout=5)
        self._distributor.join(timeout=5)
        with self._lock:
            for sock, _ in self._subs:
                sock.close()
            self._subs.clear()


class SubSocket:
    """Subscriber endpoint: an I/O thread feeds a local delivery queue."""

    def __init__(self, port: int, topic_prefix: bytes = b"") -> None:
        self._sock = socket.create_connection(("127.0.0.1", port),
                                              timeout=IO_TIMEOUT_S)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock.sendall(bytes([len(topic_prefix)]) + topic_prefix)
        self._queue: queue.SimpleQueue = queue.SimpleQueue()
        self._reader = threading.Thread(target=self._read_loop,
                                        name="sub-read", daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        try:
            while True:
                head = _recv_exact(self._sock, ENVELOPE.size)
                tlen, plen = ENVELOPE.unpack(head)
                topic = _recv_exact(self._sock, tlen)
                payload = _recv_exact(self._sock, plen)
                self._queue.put((topic, payload))
        except (BenchError, OSError):
            self._queue.put(None)

    def recv(self, timeout: float = IO_TIMEOUT_S) -> tuple[bytes, bytes]:
        try:
            item = self._queue.get(timeout=timeout)
        except queue.Empty:
            raise BenchError("subscriber receive timed out") from None
        if item is None:
            raise BenchError("publisher connection closed")
        return item

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
        self._reader.join(timeout=5)


# ---------------------------------------------------------------------------
# One-way latency measurement
# ---------------------------------------------------------------------------

def _ring_capacity_for(payload_bytes: int) -> int:
    # Room for four in-flight messages: a late consumer wake must never
    # stall the producer mid-run, which would bill scheduler jitter twice.
    cap = 64 * 1024
    while cap < 4 * payload_bytes:
        cap *= 2
    return cap


class _OneWayRecorder:
    """Consumer-side bookkeeping shared by both transports.

    Messages of 8 bytes or more carry the stamp in-band. Smaller messages
    cannot, so the producer records send times locally and the ordered
    transport pairs them with arrivals by index.

    The message body is built once. ``reuse_buffer`` hands the same
    mutable buffer out every time, valid only for transports that copy
    synchronously inside send; a queue-and-forward transport must take the
    default snapshot or a later stamp would overwrite an undelivered one.
    """

    def __init__(self, msg_bytes: int, warmup: int,
                 reuse_buffer: bool = False):
        self.msg_bytes = msg_bytes
        self.warmup = warmup
        self.inband = msg_bytes >= STAMP.size
        self.send_ns: list[int] = []
        self.deltas_ns: list[int] = []
        self._seen = 0
        self._body = b"\x5a" * msg_bytes
        self._buf = bytearray(self._body)
        self._reuse = reuse_buffer

    def message(self, index: int) -> bytes | bytearray:
        now = time.monotonic_ns()
        if self.inband:
            STAMP.pack_into(self._buf, 0, now)
            return self._buf if self._reuse else bytes(self._buf)
        self.send_ns.append(now)
        return self._body

    def arrived(self, payload: bytes) -> None:
        now = time.monotonic_ns()
        if self.inband:
            sent = STAMP.unpack_from(payload)[0]
        else:
            sent = self.send_ns[self._seen]
        if self._seen >= self.warmup:
            self.deltas_ns.append(now - sent)
        self._seen += 1

    def stats(self) -> LatencyStats:
        return LatencyStats.from_samples([d / 1000.0 for d in self.deltas_ns])


def _run_paced(producer_send, consumer_recv, msg_bytes: int, iters: int,
               warmup: int, gap_us: float,
               reuse_buffer: bool = False) -> LatencyStats:
    rec = _OneWayRecorder(msg_bytes, warmup, reuse_buffer=reuse_buffer)
    total = warmup + iters
    errors: list[BaseException] = []

    def consume() -> None:
        try:
            for _ in range(total):
                rec.arrived(consumer_recv())
        except BaseException as exc:  # surfaced after join
            errors.append(exc)

    consumer = threading.Thread(target=consume, name="bench-consumer")
    gap_s = gap_us / 1e6
    # Collector pauses would land in the tail of whichever transport they
    # interrupt; park the collector for the measured span instead.
    gc_was_enabled = gc.isenabled()
    gc.collect()
    gc.disable()
    consumer.start()
    try:
        for i in range(total):
            producer_send(rec.message(i))
            time.sleep(gap_s)
    finally:
        consumer.join(timeout=IO_TIMEOUT_S)
        if gc_was_enabled:
            gc.enable()
    if consumer.is_alive():
        raise BenchError("consumer did not finish")
    if errors:
        raise BenchError(f"consumer failed: {errors[0]!r}")
    return rec.stats()


def _oneway_shm(msg_bytes: int, iters: int, warmup: int,
                gap_us: float) -> LatencyStats:
    with tempfile.TemporaryDirectory() as tmp:
        store = RendezvousStore(tmp)
        cap = _ring_capacity_for(msg_bytes)
        server = server_create(store, _PATH, read_cap=cap, write_cap=cap,
                               server_id=_SERVER_ID)
        client = client_connect(store, _SERVER_ID, _PATH)
        try:
            # write() copies into the ring before returning, so the stamp
            # buffer can be reused.
            return _run_paced(
                lambda msg: server.write(msg, timeout=IO_TIMEOUT_S),
                lambda: client.read(msg_bytes, timeout=IO_TIMEOUT_S),
                msg_bytes, iters, warmup, gap_us, reuse_buffer=True)
        finally:
            client.close()
            client.release()
            server.close()
            server.release()
            server_teardown(store, _SERVER_ID, _PATH)


def _oneway_pubsub(msg_bytes: int, iters: int, warmup: int,
                   gap_us: float) -> LatencyStats:
    pub = PubSocket()
    sub = SubSocket(pub.port, TOPIC_IQ)
    try:
        pub.wait_subscribers(1)
        return _run_paced(
            lambda msg: pub.publish(TOPIC_IQ, msg),
            lambda: sub.recv()[1],
            msg_bytes, iters, warmup, gap_us)
    finally:
        sub.close()
        pub.close()


def latency_oneway(kind: str, msg_bytes: int, iters: int,
                   warmup: int = DEFAULT_WARMUP,
                   gap_us: float = DEFAULT_GAP_US) -> LatencyStats:
    """One-way latency of one transport at one message size.

    The producer paces sends ``gap_us`` apart so the transport is idle when
    each message enters it; warmup messages are measured and discarded.
    """
    if iters < MIN_ITERS:
        raise BenchError(f"need at least {MIN_ITERS} iterations, got {iters}")
    if msg_bytes < 1:
        raise BenchError("message must be at least one byte")
    if kind == SHM:
        return _oneway_shm(msg_bytes, iters, warmup, gap_us)
    if kind == PUBSUB:
        return _oneway_pubsub(msg_bytes, iters, warmup, gap_us)
    raise BenchError(f"unknown transport {kind!r}")


# ---------------------------------------------------------------------------
# Comparison and capacity reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CompareResult:
    msg_bytes: int
    iters: int
    shm: LatencyStats
    pubsub: LatencyStats

    @property
    def ratio(self) -> float:
        """Pub-sub mean over shared-memory mean; >1 means shm is faster."""
        return self.pubsub.mean_us / self.shm.mean_us

    def to_dict(self) -> dict:
        return {
            "kind": "compare",
            "msg_bytes": self.msg_bytes,
            "iters": self.iters,
            "shm": self.shm.to_dict(),
            "pubsub": self.pubsub.to_dict(),
            "ratio": round(self.ratio, 3),
        }


def compare_transports(msg_bytes: int, iters: int,
                       warmup: int = DEFAULT_WARMUP,
                       gap_us: float = DEFAULT_GAP_US) -> CompareResult:
    """Both transports, identical sizes and counts, run sequentially."""
    shm = latency_oneway(SHM, msg_bytes, iters, warmup, gap_us)
    pubsub = latency_oneway(PUBSUB, msg_bytes, iters, warmup, gap_us)
    return CompareResult(msg_bytes, iters, shm, pubsub)


def capacity_report(profile: BandwidthProfile,
                    measured: dict[str, LatencyStats]) -> dict:
    """Slice-count bound per transport from stats taken at subframe size."""
    out = {
        "kind": "capacity",
        "prbs": profile.prbs,
        "subframe_bytes": bytes_per_subframe(profile),
        "method": "floor(1000us / (2 x mean one-way)) at subframe size",
    }
    for kind, stats in measured.items():
        out[f"max_slices_{kind}"] = capacity_estimate(stats.mean_us)
        out[f"mean_us_{kind}"] = round(stats.mean_us, 3)
    return out


# ---------------------------------------------------------------------------
# Sustained full-pipeline stream
# ---------------------------------------------------------------------------

def sustained_stream_test(prbs: int = 25, duration_s: float = 10.0,
                          fast_clock: bool = False,
                          root: str | Path | None = None) -> dict:
    """Stream one slice through the whole backend and report rate fidelity.

    Runs radio -> backend streamers -> shared-memory channels -> frontend
    loop for ``duration_s`` of air time and returns the backend metrics,
    including achieved subframe rate against the nominal 1000 per second.
    """
    from .pvback import Backend, connect_frontend
    from .radiodev import VirtualRadio

    profile = BandwidthProfile.from_prbs(prbs)
    spsf = samples_per_subframe(profile)
    subframes = int(round(duration_s * 1000))
    cfg = SliceConfig(slice_id=1, profile=profile, dl_freq_hz=595_000_000,
                      ul_freq_hz=499_000_000, rx_gain_db=0, tx_gain_db=0,
                      radio_channel=0, phy_profile_name="phy-a")
    with tempfile.TemporaryDirectory(dir=root) as tmp:
        store = RendezvousStore(tmp)
        radio = VirtualRadio(fast_clock=fast_clock)
        backend = Backend(store, radio)
        try:
            backend.provision(1)
            dev = connect_frontend(store, 1)
            try:
                dev.establish(cfg)
                quiet = IQBuffer.from_bytes(bytes(bytes_per_subframe(profile)))
                for _ in range(subframes):
                    dev.recv(spsf)
                    dev.send(quiet, dev.tx_timestamp())
                metrics = backend.metrics()[1]
                dev.shutdown()
            finally:
                dev.close()
        finally:
            backend.shutdown()
    achieved = metrics.get("achieved_subframe_rate") or 0.0
    return {
        "kind": "sustained",
        "prbs": prbs,
        "subframes": subframes,
        "fast_clock": fast_clock,
        "achieved_subframe_rate": round(achieved, 3),
        "achieved_sample_rate": round(achieved * spsf, 1),
        "rate_error": (round(abs(achieved - 1000.0) / 1000.0, 6)
                       if not fast_clock else None),
        "underruns": metrics["underruns"],
        "overruns": metrics["overruns"],
        "gap_samples": metrics["gap_samples"],
        "rx_cpu_s": round(metrics["rx_cpu_s"], 3),
        "tx_cpu_s": round(metrics["tx_cpu_s"], 3),
        "rx_ring_high_water": metrics["rx_ring_high_water"],
        "tx_ring_high_water": metrics["tx_ring_high_water"],
    }


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def emit_report(records: list[dict], path: str | Path) -> None:
    """Line-delimited records plus a trailing summary table.

    Records are JSON with sorted keys, one per line, so repeated runs over
    identical records produce identical bytes apart from the generated-at
    header line.
    """
    path = Path(path)
    with open(path, "w") as fh:
        fh.write(json.dumps({"kind": "report",
                             "generated_ns": time.time_ns()}) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        for line in format_summary(records).splitlines():
            fh.write("# " + line + "\n")


def format_summary(records: list[dict]) -> str:
    """Fixed-width human summary of benchmark records."""
    lines = [f"{'kind':<10} {'detail':<30} {'value':>16}"]
    lines.append("-" * 58)
    for rec in records:
        kind = rec.get("kind", "?")
        if kind == "latency":
            detail = f"{rec['transport']} {rec['msg_bytes']}B x{rec['iters']}"
            value = f"{rec['stats']['mean_us']:.1f} us mean"
        elif kind == "compare":
            detail = f"{rec['msg_bytes']}B x{rec['iters']}"
            value = f"ratio {rec['ratio']:.2f}"
        elif kind == "capacity":
            detail = f"{rec['prbs']} PRB"
            slices = [f"{k.split('_', 2)[2]}={rec[k]}"
                      for k in sorted(rec) if k.startswith("max_slices_")]
            value = " ".join(slices)
        elif kind == "sustained":
            detail = f"{rec['prbs']} PRB x{rec['subframes']} sf"
            value = f"{rec['achieved_subframe_rate']:.1f} sf/s"
        else:
            detail, value = "", ""
        lines.append(f"{kind:<10} {detail:<30} {value:>16}")
    return "\n".join(lines)


def latency_record(kind: str, msg_bytes: int, iters: int,
                   stats: LatencyStats) -> dict:
    return {
        "kind": "latency",
        "transport": kind,
        "msg_bytes": msg_bytes,
        "iters": iters,
        "stats": stats.to_dict(),
        "capacity_per_subframe": capacity_estimate(stats.mean_us),
    }
