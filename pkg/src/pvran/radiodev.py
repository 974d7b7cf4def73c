"""Simulated SDR: tick-addressed sample schedules behind a UHD-like device API.

One :class:`VirtualRadio` owns a set of radio channels. Each channel has a
downlink and an uplink medium, modelled as a schedule of I/Q segments
addressed by absolute sample ticks. ``send`` places a segment at its
timestamp; ``recv`` assembles the next contiguous block at the consumer
cursor (silence where nothing was scheduled, superposition where segments
overlap) and reports its true timestamp.

Clocking: in paced mode the consumer cursor may only advance as fast as a
monotonic wall clock converted to the channel sample rate, so a 1 ms
subframe takes 1 ms to read; ``fast_clock=True`` removes the pacing for
deterministic, faster-than-real-time runs. Timestamps never lie in either
mode: a consumer that falls behind by more than the buffer depth is jumped
forward and told the gap size, and a transmit landing behind the consumer
cursor is dropped and counted, never silently time-shifted.

Media:

* ideal loopback (default): each channel is isolated. With no UE attached,
  transmit loops straight back into the channel's own receive path; after
  ``attach_ue`` the downlink feeds the UE and the uplink feeds the radio.
* wideband FDM: all channels share one wideband medium per direction.
  Transmits are interpolated, low-pass filtered, and mixed up to the
  channel's tuned offset; receives mix down and decimate. Adjacent-band
  leakage is then a property of the 127-tap filters, which is the point.
"""

from __future__ import annotations

import bisect
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import signal

from .iqcore import IQBuffer, SAMPLE_DTYPE

MIX_FIR_TAPS = 127
MIX_CUTOFF_FRACTION = 0.45  # of the narrowband sample rate


class RadioError(Exception):
    pass


class ChannelInUse(RadioError):
    """Channel already opened by another radio-side device."""


class MediumMode(Enum):
    IDEAL_LOOPBACK = "ideal-loopback"
    WIDEBAND_FDM = "wideband-fdm"


@dataclass(frozen=True)
class RxMetadata:
    """Truth about one received block."""

    timestamp: int  # tick of the first sample
    gap_before: int = 0  # samples skipped just before this block (overflow)


@dataclass
class ChannelTuning:
    rate: int
    rx_freq_hz: int = 0
    tx_freq_hz: int = 0
    rx_gain_db: int = 0
    tx_gain_db: int = 0


# ---------------------------------------------------------------------------
# Filters and mixers
# ---------------------------------------------------------------------------

def design_lowpass(num_taps: int, cutoff_hz: float, rate: float) -> np.ndarray:
    return signal.firwin(num_taps, cutoff_hz, window="blackman", fs=rate)


def mix_up(z: np.ndarray, in_rate: int, wb_rate: int, offset_hz: float,
           start_tick: int) -> np.ndarray:
    """Interpolate a baseband block to the wideband rate and mix to its offset.

    ``start_tick`` is in narrowband ticks; the carrier phase is taken from
    absolute wideband time so consecutive blocks line up coherently.
    """
    if wb_rate % in_rate:
        raise RadioError(f"wideband rate {wb_rate} not a multiple of {in_rate}")
    factor = wb_rate // in_rate
    taps = design_lowpass(MIX_FIR_TAPS, MIX_CUTOFF_FRACTION * in_rate, wb_rate) * factor
    shaped = signal.upfirdn(taps, z, up=factor)
    delay = (MIX_FIR_TAPS - 1) // 2
    wb = shaped[delay:delay + len(z) * factor]
    start_wb = start_tick * factor
    t = start_wb + np.arange(len(wb))
    return wb * np.exp(2j * np.pi * offset_hz * t / wb_rate)


def mix_down(wb: np.ndarray, wb_rate: int, out_rate: int, offset_hz: float,
             start_wb_tick: int) -> np.ndarray:
    """Mix a wideband block down from its offset, low-pass, and decimate.

    ``start_wb_tick`` must be a multiple of the decimation factor so output
    samples land on the narrowband tick grid.
    """
    if wb_rate % out_rate:
        raise RadioError(f"wideband rate {wb_rate} not a multiple of {out_rate}")
    factor = wb_rate // out_rate
    if start_wb_tick % factor:
        raise RadioError("start tick not aligned to the decimation grid")
    t = start_wb_tick + np.arange(len(wb))
    base = wb * np.exp(-2j * np.pi * offset_hz * t / wb_rate)
    taps = design_lowpass(MIX_FIR_TAPS, MIX_CUTOFF_FRACTION * out_rate, wb_rate)
    delay = (MIX_FIR_TAPS - 1) // 2
    filtered = signal.fftconvolve(base, taps, mode="full")[delay:delay + len(base)]
    return filtered[::factor]


# ---------------------------------------------------------------------------
# Sample schedules
# ---------------------------------------------------------------------------

class _Direction:
    """A schedule of sample segments plus a single consumer cursor.

    Segments are (start_tick, array) pairs kept sorted by start. int16 mode
    stores (n, 2) I/Q arrays and superposes with int32 accumulation and
    clipping; complex mode (the wideband media) stores 1-d complex128.
    """

    def __init__(self, rate: int, epoch_tick: int, depth_ticks: int,
                 complex_mode: bool = False):
        self.rate = rate
        self.cursor = epoch_tick
        self.depth_ticks = depth_ticks
        self.complex_mode = complex_mode
        self.lock = threading.Lock()
        self.starts: list[int] = []
        self.segs: list[np.ndarray] = []
        self.late_drops = 0
        self.gap_total = 0
        self.delivered = 0
        self.prune_margin = 0

    def insert(self, tick: int, arr: np.ndarray) -> bool:
        with self.lock:
            if tick < self.cursor:
                self.late_drops += 1
                return False
            i = bisect.bisect_right(self.starts, tick)
            self.starts.insert(i, tick)
            self.segs.insert(i, arr)
            return True

    def assemble(self, start: int, n: int) -> np.ndarray:
        with self.lock:
            if self.complex_mode:
                out = np.zeros(n, dtype=np.complex128)
            else:
                out = np.zeros((n, 2), dtype=np.int32)
            end = start + n
            i = bisect.bisect_right(self.starts, start)
            # Step back to catch a segment straddling the window start.
            while i > 0 and self.starts[i - 1] + len(self.segs[i - 1]) > start:
                i -= 1
            while i < len(self.starts) and self.starts[i] < end:
                s0 = self.starts[i]
                seg = self.segs[i]
                lo = max(start, s0)
                hi = min(end, s0 + len(seg))
                if lo < hi:
                    out[lo - start:hi - start] += seg[lo - s0:hi - s0]
                i += 1
            if self.complex_mode:
                return out
            return np.clip(out, -32768, 32767).astype(SAMPLE_DTYPE)

    def advance(self, upto: int) -> None:
        with self.lock:
            if upto > self.cursor:
                self.delivered += upto - self.cursor
                self.cursor = upto
            limit = self.cursor - self.prune_margin
            keep = 0
            while keep < len(self.starts) and self.starts[keep] + len(self.segs[keep]) <= limit:
                keep += 1
            if keep:
                del self.starts[:keep]
                del self.segs[:keep]

    def jump(self, new_cursor: int) -> int:
        with self.lock:
            gap = new_cursor - self.cursor
            if gap <= 0:
                return 0
            self.cursor = new_cursor
            self.gap_total += gap
            return gap


class _Capture:
    """Raw I/Q appender with a small text sidecar describing the stream."""

    def __init__(self, path: str | Path, rate: int, center_freq_hz: int):
        self.path = Path(path)
        self.rate = rate
        self.center_freq_hz = center_freq_hz
        self._fh = open(self.path, "wb")
        self._start_tick: int | None = None

    def append(self, buf: IQBuffer, timestamp: int) -> None:
        if self._start_tick is None:
            self._start_tick = timestamp
            self._write_sidecar()
        self._fh.write(buf.tobytes())

    def _write_sidecar(self) -> None:
        sidecar = self.path.with_name(self.path.name + ".hdr")
        sidecar.write_text(
            f"format = interleaved int16 le (i, q)\n"
            f"rate = {self.rate}\n"
            f"center_freq_hz = {self.center_freq_hz}\n"
            f"start_tick = {self._start_tick}\n"
        )

    def close(self) -> None:
        if self._start_tick is None:
            self._start_tick = 0
            self._write_sidecar()
        self._fh.close()


class _Channel:
    def __init__(self, tuning: ChannelTuning, epoch_tick: int, depth_ticks: int):
        self.tuning = tuning
        self.dl = _Direction(tuning.rate, epoch_tick, depth_ticks)
        self.ul = _Direction(tuning.rate, epoch_tick, depth_ticks)
        self.radio_open = False
        self.ue_attached = False


# ---------------------------------------------------------------------------
# The radio
# ---------------------------------------------------------------------------

class VirtualRadio:
    """Shared simulated SDR. Open one radio-side device per channel."""

    def __init__(self, mode: MediumMode = MediumMode.IDEAL_LOOPBACK,
                 fast_clock: bool = False, seed: int = 0, epoch_tick: int = 0,
                 buffer_depth_s: float = 1.0, wideband_rate: int | None = None,
                 wideband_center_hz: int = 0):
        self.mode = mode
        self.fast_clock = fast_clock
        self.seed = seed
        self.epoch_tick = epoch_tick
        self.buffer_depth_s = buffer_depth_s
        self._channels: dict[int, _Channel] = {}
        self._lock = threading.Lock()
        self._wall0: float | None = None
        if mode is MediumMode.WIDEBAND_FDM:
            if wideband_rate is None:
                raise RadioError("wideband mode needs a wideband_rate")
            self.wideband_rate = wideband_rate
            self.wideband_center_hz = wideband_center_hz
            depth_wb = int(buffer_depth_s * wideband_rate)
            self.wb_dl = _Direction(wideband_rate, epoch_tick, depth_wb, complex_mode=True)
            self.wb_ul = _Direction(wideband_rate, epoch_tick, depth_wb, complex_mode=True)
            # Several channels read one wideband medium; leave segments alone.
            self.wb_dl.prune_margin = self.wb_ul.prune_margin = 1 << 62

    # -- clock --------------------------------------------------------------

    def _anchor(self) -> float:
        with self._lock:
            if self._wall0 is None:
                self._wall0 = time.monotonic()
            return self._wall0

    def now_ticks(self, rate: int) -> int:
        """Current air time at the given rate. Unbounded in fast-clock mode."""
        if self.fast_clock:
            return 1 << 62
        wall0 = self._anchor()
        return self.epoch_tick + int((time.monotonic() - wall0) * rate)

    def _sleep_until(self, tick: int, rate: int) -> None:
        if self.fast_clock:
            return
        wall0 = self._anchor()
        target = wall0 + (tick - self.epoch_tick) / rate
        while True:
            delta = target - time.monotonic()
            if delta <= 0:
                return
            time.sleep(delta)

    # -- channels -------------------------------------------------------------

    def _channel(self, num: int, rate: int | None = None) -> _Channel:
        with self._lock:
            ch = self._channels.get(num)
            if ch is None:
                if rate is None:
                    raise RadioError(f"channel {num} not opened yet")
                depth = int(self.buffer_depth_s * rate)
                ch = _Channel(ChannelTuning(rate=rate), self.epoch_tick, depth)
                self._channels[num] = ch
            return ch

    def open(self, channel: int, rate: int) -> "DirectDevice":
        """Claim a channel for the radio side (one owner at a time)."""
        if self.mode is MediumMode.WIDEBAND_FDM and self.wideband_rate % rate:
            raise RadioError(f"rate {rate} does not divide wideband rate {self.wideband_rate}")
        ch = self._channel(channel, rate)
        with self._lock:
            if ch.radio_open:
                raise ChannelInUse(f"radio channel {channel}")
            ch.radio_open = True
        if ch.tuning.rate != rate:
            self._reset_rate(ch, rate)
        return DirectDevice(self, channel, side="radio")

    def attach_ue(self, channel: int, latency_ticks: int = 0,
                  awgn_snr_db: float | None = None) -> "DirectDevice":
        """Attach a UE endpoint: disables loopback, adds latency and noise."""
        ch = self._channel(channel)
        ch.ue_attached = True
        return DirectDevice(self, channel, side="ue",
                            latency_ticks=latency_ticks, awgn_snr_db=awgn_snr_db)

    def release(self, channel: int) -> None:
        with self._lock:
            ch = self._channels.get(channel)
            if ch is not None:
                ch.radio_open = False

    def _reset_rate(self, ch: _Channel, rate: int) -> None:
        depth = int(self.buffer_depth_s * rate)
        ch.tuning.rate = rate
        ch.dl = _Direction(rate, self.epoch_tick, depth)
        ch.ul = _Direction(rate, self.epoch_tick, depth)

    def stats(self) -> dict:
        out = {}
        for num, ch in self._channels.items():
            out[num] = {
                "dl_late_drops": ch.dl.late_drops,
                "ul_late_drops": ch.ul.late_drops,
                "dl_gap": ch.dl.gap_total,
                "ul_gap": ch.ul.gap_total,
            }
        return out


class DirectDevice:
    """Device handle bound straight to the shared radio (no transport between).

    The radio side transmits downlink and receives uplink; the UE side is
    the mirror image, optionally with propagation latency and AWGN. Both
    present the same API that the remoted path reproduces over channels.
    """

    def __init__(self, radio: VirtualRadio, channel: int, side: str,
                 latency_ticks: int = 0, awgn_snr_db: float | None = None):
        self.radio = radio
        self.channel = channel
        self.side = side
        self.latency_ticks = latency_ticks
        self.awgn_snr_db = awgn_snr_db
        self._capture: _Capture | None = None
        self._closed = False

    # -- tuning ---------------------------------------------------------------

    def _ch(self) -> _Channel:
        return self.radio._channel(self.channel)

    @property
    def tuning(self) -> ChannelTuning:
        return self._ch().tuning

    def set_rx_freq(self, hz: int) -> None:
        self._ch().tuning.rx_freq_hz = int(hz)

    def set_tx_freq(self, hz: int) -> None:
        self._ch().tuning.tx_freq_hz = int(hz)

    def set_rx_gain(self, db: int) -> None:
        self._ch().tuning.rx_gain_db = int(db)

    def set_tx_gain(self, db: int) -> None:
        self._ch().tuning.tx_gain_db = int(db)

    def set_rate(self, rate: int) -> None:
        ch = self._ch()
        if rate != ch.tuning.rate:
            self.radio._reset_rate(ch, rate)

    # -- streaming --------------------------------------------------------------

    def _rx_direction(self) -> _Direction:
        ch = self._ch()
        if self.side == "ue":
            return ch.dl
        return ch.ul

    def _tx_direction(self) -> _Direction:
        ch = self._ch()
        if self.side == "ue":
            return ch.ul
        # Loopback until a UE owns the far end.
        return ch.dl if ch.ue_attached else ch.ul

    def recv(self, n: int) -> tuple[IQBuffer, RxMetadata]:
        """Next n samples at the consumer cursor; waits for air time when paced."""
        if self.radio.mode is MediumMode.WIDEBAND_FDM:
            return self._recv_wideband(n)
        d = self._rx_direction()
        gap = self._pace(d, n)
        start = d.cursor
        data = d.assemble(start - self.latency_ticks, n)
        d.advance(start + n)
        if self.awgn_snr_db is not None:
            data = self._add_noise(data, start)
        buf = IQBuffer(data)
        meta = RxMetadata(timestamp=start, gap_before=gap)
        if self._capture is not None:
            self._capture.append(buf, start)
        return buf, meta

    def send(self, buf: IQBuffer, timestamp: int) -> bool:
        """Schedule samples at an absolute tick. Late blocks drop whole."""
        if self.radio.mode is MediumMode.WIDEBAND_FDM:
            return self._send_wideband(buf, timestamp)
        d = self._tx_direction()
        return d.insert(timestamp + self.latency_ticks, buf.data.copy())

    def _pace(self, d: _Direction, n: int) -> int:
        """Wait for air time; detect and account overflow. Returns the gap."""
        if self.radio.fast_clock:
            return 0
        self.radio._sleep_until(d.cursor + n, d.rate)
        avail = self.radio.now_ticks(d.rate)
        behind = avail - (d.cursor + n)
        if behind > d.depth_ticks:
            return d.jump(avail - d.depth_ticks)
        return 0

    def _add_noise(self, data: np.ndarray, start_tick: int) -> np.ndarray:
        power = float(np.mean(data[:, 0].astype(np.float64) ** 2
                              + data[:, 1].astype(np.float64) ** 2))
        if power == 0.0:
            return data
        dir_code = 0 if self.side == "ue" else 1
        seq = np.random.SeedSequence(
            (self.radio.seed, self.channel, dir_code, start_tick))
        rng = np.random.default_rng(seq)
        sigma = np.sqrt(power / (10 ** (self.awgn_snr_db / 10)) / 2.0)
        noisy = data.astype(np.int32) + np.round(
            rng.normal(0.0, sigma, size=data.shape)).astype(np.int32)
        return np.clip(noisy, -32768, 32767).astype(SAMPLE_DTYPE)

    # -- wideband FDM path --------------------------------------------------------

    def _wb_media(self) -> tuple[_Direction, _Direction]:
        """(tx medium, rx medium) for this endpoint in wideband mode."""
        if self.side == "ue":
            return self.radio.wb_ul, self.radio.wb_dl
        return self.radio.wb_dl, self.radio.wb_ul

    def _tx_offset_hz(self) -> float:
        t = self.tuning
        freq = t.tx_freq_hz if self.side != "ue" else t.rx_freq_hz
        return freq - self.radio.wideband_center_hz

    def _rx_offset_hz(self) -> float:
        t = self.tuning
        freq = t.rx_freq_hz if self.side != "ue" else t.tx_freq_hz
        return freq - self.radio.wideband_center_hz

    def rx_offset_hz(self) -> float:
        return self._rx_offset_hz()

    def _send_wideband(self, buf: IQBuffer, timestamp: int) -> bool:
        rate = self.tuning.rate
        wb = mix_up(buf.to_complex(), rate, self.radio.wideband_rate,
                    self._tx_offset_hz(), timestamp + self.latency_ticks)
        medium, _ = self._wb_media()
        factor = self.radio.wideband_rate // rate
        return medium.insert((timestamp + self.latency_ticks) * factor, wb)

    def _recv_wideband(self, n: int) -> tuple[IQBuffer, RxMetadata]:
        d = self._rx_direction()  # narrowband cursor/pacing bookkeeping
        gap = self._pace(d, n)
        start = d.cursor
        rate = self.tuning.rate
        factor = self.radio.wideband_rate // rate
        margin = (MIX_FIR_TAPS - 1) // (2 * factor) + 1
        _, medium = self._wb_media()
        read_start = start - self.latency_ticks - margin
        wb = medium.assemble(read_start * factor, (n + 2 * margin) * factor)
        base = mix_down(wb, self.radio.wideband_rate, rate,
                        self._rx_offset_hz(), read_start * factor)
        block = base[margin:margin + n]
        d.advance(start + n)
        data = IQBuffer.from_complex(block).data
        if self.awgn_snr_db is not None:
            data = self._add_noise(data, start)
        buf = IQBuffer(data)
        meta = RxMetadata(timestamp=start, gap_before=gap)
        if self._capture is not None:
            self._capture.append(buf, start)
        return buf, meta

    # -- misc ---------------------------------------------------------------------

    def enable_capture(self, path: str | Path) -> None:
        t = self.tuning
        center = t.rx_freq_hz if self.side != "ue" else t.tx_freq_hz
        self._capture = _Capture(path, t.rate, center)

    def stats(self) -> dict:
        ch = self._ch()
        rx, tx = self._rx_direction(), self._tx_direction()
        return {
            "channel": self.channel,
            "rx_delivered": rx.delivered,
            "rx_gap": rx.gap_total,
            "tx_late_drops": tx.late_drops,
            "rate": ch.tuning.rate,
        }

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        if self._capture is not None:
            self._capture.close()
            self._capture = None
        if self.side == "radio":
            self.radio.release(self.channel)
