"""Toy slice stacks: two deliberately incompatible PHYs over 1 ms subframes.

Each slice runs a minimal but complete digital chain so that isolation is
measurable end to end: framing with CRC-32, linear modulation at a fixed
amplitude, preamble search and correlation for detection, and per-subframe
ledger timing identical to the real transport contract (at most one frame
per transmitted subframe, zero fill to the subframe boundary, transmit
stamped at the receive ledger plus a fixed lead).

The transmit lead is deliberately not a multiple of the subframe, so a
receiver's aligned read grid sees frames at a constant phase offset and a
frame can straddle two subframes. The endpoint therefore decodes over a
sliding two-subframe window: it locates the preamble anywhere in the older
half, decodes into the newer half, and caches the found offset until it
stops correlating.

The two profiles cannot decode each other. They differ in constellation
(QPSK vs BPSK), samples per symbol, preamble sequence and length, and
maximum payload, so a subframe of one looks like noise to the correlator of
the other. That is the property the isolation tests lean on.

Frame wire format (little-endian)::

    u32 seq | u16 length | length payload bytes | u32 crc32(header+payload)

Endpoint payload convention: the first 12 payload bytes are a u32 watermark
(the sender's slice id) and the u64 ledger tick the frame was stamped with,
then pseudorandom fill. The watermark lets a receiver prove a decoded frame
came from its own peer; the tick turns arrival times into air latency.
"""

from __future__ import annotations

import json
import struct
import threading
import time
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .iqcore import IQBuffer

FRAME_HEADER = struct.Struct("<IH")
FRAME_CRC = struct.Struct("<I")
FRAME_OVERHEAD = FRAME_HEADER.size + FRAME_CRC.size  # 10

ENDPOINT_MARK = struct.Struct("<IQ")  # watermark, tx tick

DEFAULT_AMPLITUDE = 12000.0
CORRELATION_THRESHOLD = 0.6


class FrameError(ValueError):
    pass


@dataclass(frozen=True)
class PhyProfile:
    """One air interface flavour. Instances are compared by name."""

    name: str
    modulation: str  # "qpsk" | "bpsk"
    sps: int  # samples per symbol (rectangular pulse)
    preamble_len: int  # symbols
    max_payload: int  # bytes
    preamble_seed: int

    @property
    def bits_per_symbol(self) -> int:
        return 2 if self.modulation == "qpsk" else 1

    def preamble(self) -> np.ndarray:
        """Deterministic unit-power preamble symbol sequence."""
        rng = np.random.default_rng(self.preamble_seed)
        if self.modulation == "qpsk":
            phases = rng.integers(0, 4, size=self.preamble_len)
            return np.exp(1j * (np.pi / 4 + np.pi / 2 * phases))
        return (1.0 - 2.0 * rng.integers(0, 2, size=self.preamble_len)).astype(
            np.complex128)

    def frame_samples(self, payload_len: int) -> int:
        nbits = (FRAME_OVERHEAD + payload_len) * 8
        nsyms = self.preamble_len + nbits // self.bits_per_symbol
        return nsyms * self.sps


PHY_A = PhyProfile("phy-a", "qpsk", sps=4, preamble_len=64, max_payload=256,
                   preamble_seed=0xA11CE)
PHY_B = PhyProfile("phy-b", "bpsk", sps=8, preamble_len=192, max_payload=64,
                   preamble_seed=0xB0B)

PROFILES = {p.name: p for p in (PHY_A, PHY_B)}


def phy_profile(name: str) -> PhyProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise FrameError(f"unknown phy profile {name!r}") from None


# ---------------------------------------------------------------------------
# Framing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Frame:
    seq: int
    payload: bytes

    def encode(self) -> bytes:
        head = FRAME_HEADER.pack(self.seq, len(self.payload)) + self.payload
        return head + FRAME_CRC.pack(zlib.crc32(head))

    @classmethod
    def decode(cls, raw: bytes) -> "Frame":
        if len(raw) < FRAME_OVERHEAD:
            raise FrameError(f"frame of {len(raw)} bytes is too short")
        seq, length = FRAME_HEADER.unpack_from(raw)
        if len(raw) != FRAME_OVERHEAD + length:
            raise FrameError(f"length field {length} does not match {len(raw)} bytes")
        body = raw[:FRAME_HEADER.size + length]
        (crc,) = FRAME_CRC.unpack_from(raw, FRAME_HEADER.size + length)
        if crc != zlib.crc32(body):
            raise FrameError("crc mismatch")
        return cls(seq, raw[FRAME_HEADER.size:FRAME_HEADER.size + length])


# ---------------------------------------------------------------------------
# Modulation
# ---------------------------------------------------------------------------

def _bytes_to_bits(data: bytes) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")


def _bits_to_bytes(bits: np.ndarray) -> bytes:
    return np.packbits(bits.astype(np.uint8), bitorder="little").tobytes()


def _map_symbols(profile: PhyProfile, bits: np.ndarray) -> np.ndarray:
    if profile.modulation == "qpsk":
        i = 1.0 - 2.0 * bits[0::2]
        q = 1.0 - 2.0 * bits[1::2]
        return (i + 1j * q) / np.sqrt(2.0)
    return (1.0 - 2.0 * bits).astype(np.complex128)


def _unmap_symbols(profile: PhyProfile, syms: np.ndarray) -> np.ndarray:
    if profile.modulation == "qpsk":
        bits = np.empty(2 * len(syms), dtype=np.uint8)
        bits[0::2] = (syms.real < 0).astype(np.uint8)
        bits[1::2] = (syms.imag < 0).astype(np.uint8)
        return bits
    return (syms.real < 0).astype(np.uint8)


def modulate(profile: PhyProfile, frame_bytes: bytes,
             amplitude: float = DEFAULT_AMPLITUDE) -> np.ndarray:
    """Preamble plus rectangular-pulse symbols for one frame, as complex samples."""
    bits = _bytes_to_bits(frame_bytes)
    if len(bits) % profile.bits_per_symbol:
        raise FrameError("bit count does not fill whole symbols")
    syms = np.concatenate([profile.preamble(), _map_symbols(profile, bits)])
    return np.repeat(syms, profile.sps) * amplitude


def _symbol_samples(profile: PhyProfile, z: np.ndarray, offset: int, n: int) -> np.ndarray:
    """Mid-symbol sample for n symbols starting at sample offset."""
    start = offset + profile.sps // 2
    out = z[start:start + n * profile.sps:profile.sps]
    if len(out) != n:
        raise FrameError("subframe too short for the requested symbols")
    return out


def correlate_preamble(profile: PhyProfile, z: np.ndarray, offset: int = 0) -> float:
    """Normalized preamble correlation magnitude in [0, 1]."""
    pre = profile.preamble()
    try:
        ds = _symbol_samples(profile, z, offset, profile.preamble_len)
    except FrameError:
        return 0.0
    denom = np.linalg.norm(pre) * np.linalg.norm(ds)
    if denom == 0.0:
        return 0.0
    return float(abs(np.vdot(pre, ds)) / denom)


def locate_frame(profile: PhyProfile, window: np.ndarray,
                 search_len: int) -> tuple[int, float]:
    """Best preamble start in ``window[:search_len]`` by cross-correlation.

    Returns (offset, normalized correlation). The correlation runs at full
    sample rate against the rectangular-pulse preamble, normalized per lag
    by the window energy under the preamble span, so a clean hit scores
    close to 1 regardless of amplitude.
    """
    pre = np.repeat(profile.preamble(), profile.sps)
    if len(window) < search_len + len(pre) - 1:
        raise FrameError("window too short for the requested search range")
    lags = fftconvolve(window, np.conj(pre[::-1]), mode="valid")[:search_len]
    p2 = np.abs(window) ** 2
    csum = np.concatenate([[0.0], np.cumsum(p2)])
    span = np.sqrt(np.maximum(
        csum[len(pre):len(pre) + search_len] - csum[:search_len], 0.0))
    # floor the local energy at RMS amplitude 1 (the silence threshold) so
    # near-silent lags cannot win on 0/0 noise
    corr = np.abs(lags) / (np.linalg.norm(pre) * np.maximum(span, np.sqrt(len(pre))))
    k = int(np.argmax(corr))
    return k, float(corr[k])


def demodulate(profile: PhyProfile, z: np.ndarray, offset: int = 0
               ) -> tuple[Frame | None, str]:
    """Try to decode one frame at the start of a subframe.

    Returns (frame, "ok") or (None, reason) where reason is one of "idle",
    "no-preamble", "bad-header", or "bad-crc". The gate order matters:
    silence must not count as a correlation failure.
    """
    span = z[offset:offset + profile.preamble_len * profile.sps]
    if len(span) == 0 or np.max(np.abs(span)) < 1.0:
        return None, "idle"
    if correlate_preamble(profile, z, offset) < CORRELATION_THRESHOLD:
        return None, "no-preamble"

    data_off = offset + profile.preamble_len * profile.sps
    head_syms = FRAME_HEADER.size * 8 // profile.bits_per_symbol
    try:
        head = _bits_to_bytes(_unmap_symbols(
            profile, _symbol_samples(profile, z, data_off, head_syms)))
    except FrameError:
        return None, "bad-header"
    seq, length = FRAME_HEADER.unpack(head)
    if length > profile.max_payload:
        return None, "bad-header"
    total_syms = (FRAME_OVERHEAD + length) * 8 // profile.bits_per_symbol
    try:
        raw = _bits_to_bytes(_unmap_symbols(
            profile, _symbol_samples(profile, z, data_off, total_syms)))
    except FrameError:
        return None, "bad-header"
    try:
        return Frame.decode(raw), "ok"
    except FrameError:
        return None, "bad-crc"


# ---------------------------------------------------------------------------
# Subframe-synchronous endpoint
# ---------------------------------------------------------------------------

def trx_read(device, spsf: int) -> tuple[np.ndarray, int]:
    """One subframe from the device as complex samples plus its ledger tick."""
    buf, meta = device.recv(spsf)
    return buf.to_complex(), meta.timestamp


def trx_write(device, samples: np.ndarray, spsf: int, timestamp: int) -> bool:
    """Zero-pad complex samples to a whole subframe and transmit it."""
    if len(samples) > spsf:
        raise FrameError(f"{len(samples)} samples exceed the {spsf}-sample subframe")
    padded = np.zeros(spsf, dtype=np.complex128)
    padded[:len(samples)] = samples
    return device.send(IQBuffer.from_complex(padded), timestamp)


@dataclass
class TrafficConfig:
    """What an endpoint transmits: one frame every interval subframes."""

    payload_len: int = 32
    interval_subframes: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.payload_len < ENDPOINT_MARK.size:
            raise ValueError(
                f"payload must hold the {ENDPOINT_MARK.size}-byte endpoint mark")


@dataclass
class TrxState:
    """Counters for one endpoint; all decode outcomes are disjoint."""

    slice_id: int
    phy: str
    subframes: int = 0
    frames_sent: int = 0
    sends_late: int = 0  # device refused the stamp because air time had passed
    frames_ok: int = 0
    frames_foreign: int = 0  # decoded fine but a different slice's watermark
    idle_subframes: int = 0
    preamble_misses: int = 0
    header_errors: int = 0
    crc_errors: int = 0
    bytes_ok: int = 0
    latency_ticks_last: int | None = None
    latency_ticks_max: int = 0

    def to_dict(self) -> dict:
        return {
            "slice_id": self.slice_id,
            "phy": self.phy,
            "subframes": self.subframes,
            "frames_sent": self.frames_sent,
            "sends_late": self.sends_late,
            "frames_ok": self.frames_ok,
            "frames_foreign": self.frames_foreign,
            "idle_subframes": self.idle_subframes,
            "preamble_misses": self.preamble_misses,
            "header_errors": self.header_errors,
            "crc_errors": self.crc_errors,
            "bytes_ok": self.bytes_ok,
            "latency_ticks_last": self.latency_ticks_last,
            "latency_ticks_max": self.latency_ticks_max,
        }


def emit_stats_line(fh, state: TrxState) -> None:
    """Append one line-delimited JSON stats record."""
    fh.write(json.dumps(state.to_dict(), sort_keys=True) + "\n")


def make_endpoint_payload(slice_id: int, tx_tick: int, length: int,
                          rng: np.random.Generator) -> bytes:
    fill = rng.integers(0, 256, size=length - ENDPOINT_MARK.size,
                        dtype=np.uint8).tobytes()
    return ENDPOINT_MARK.pack(slice_id, tx_tick) + fill


def parse_endpoint_payload(payload: bytes) -> tuple[int, int]:
    if len(payload) < ENDPOINT_MARK.size:
        raise FrameError("payload shorter than the endpoint mark")
    return ENDPOINT_MARK.unpack_from(payload)


def run_endpoint(device, profile: PhyProfile, slice_id: int, spsf: int,
                 tx_lead_ticks: int, traffic: TrafficConfig,
                 stop: threading.Event | None = None,
                 max_subframes: int | None = None,
                 stats_fh=None, stats_every: int = 200,
                 state: TrxState | None = None) -> TrxState:
    """Subframe loop: read, try to decode, transmit own traffic on the ledger.

    Works against any device with the shared recv/send surface. The receive
    ledger comes from device metadata; the transmit ledger is anchored at
    the first receive tick plus ``tx_lead_ticks`` and advances one subframe
    per iteration, which is exactly the transport contract. Passing a
    ``state`` lets the caller watch the counters while the loop runs.
    """
    if state is None:
        state = TrxState(slice_id=slice_id, phy=profile.name)
    rng = np.random.default_rng(traffic.seed)
    tx_tick: int | None = None
    seq = 0
    prev: np.ndarray | None = None
    prev_tick = 0
    locked: int | None = None
    while True:
        if stop is not None and stop.is_set():
            break
        if max_subframes is not None and state.subframes >= max_subframes:
            break
        z, rx_tick = trx_read(device, spsf)
        if tx_tick is None:
            tx_tick = rx_tick + tx_lead_ticks

        if prev is not None:
            window = np.concatenate([prev, z])
            frame: Frame | None = None
            if np.max(np.abs(prev)) < 1.0:
                reason = "idle"
            else:
                off = None
                if locked is not None and correlate_preamble(
                        profile, window, locked) >= CORRELATION_THRESHOLD:
                    off = locked
                else:
                    cand, corr = locate_frame(profile, window, spsf)
                    if corr >= CORRELATION_THRESHOLD:
                        off = cand
                    else:
                        locked = None
                if off is None:
                    reason = "no-preamble"
                else:
                    frame, reason = demodulate(profile, window, off)
                    if reason == "ok":
                        locked = off
            if frame is not None:
                mark, sender_tick = parse_endpoint_payload(frame.payload)
                if mark == slice_id:
                    state.frames_ok += 1
                    state.bytes_ok += len(frame.payload)
                    lat = prev_tick + off - sender_tick
                    state.latency_ticks_last = lat
                    state.latency_ticks_max = max(state.latency_ticks_max, lat)
                else:
                    state.frames_foreign += 1
            elif reason == "idle":
                state.idle_subframes += 1
            elif reason == "no-preamble":
                state.preamble_misses += 1
            elif reason == "bad-header":
                state.header_errors += 1
            elif reason == "bad-crc":
                state.crc_errors += 1
        prev = z
        prev_tick = rx_tick

        if state.subframes % traffic.interval_subframes == 0:
            payload = make_endpoint_payload(slice_id, tx_tick,
                                            traffic.payload_len, rng)
            samples = modulate(profile, Frame(seq, payload).encode())
            if not trx_write(device, samples, spsf, tx_tick):
                state.sends_late += 1
            state.frames_sent += 1
            seq = (seq + 1) & 0xFFFFFFFF
        else:
            trx_write(device, np.zeros(0, dtype=np.complex128), spsf, tx_tick)
        tx_tick += spsf
        state.subframes += 1
        if stats_fh is not None and state.subframes % stats_every == 0:
            emit_stats_line(stats_fh, state)
    if stats_fh is not None:
        emit_stats_line(stats_fh, state)
    return state
