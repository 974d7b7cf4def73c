"""Backend multiplexer: per-slice sessions, subframe streamers, control dispatch.

The backend owns the radio. For each provisioned slice it publishes three
byte channels (``pv/<id>/ctrl``, ``pv/<id>/rx``, ``pv/<id>/tx``) and runs a
control dispatcher thread on ctrl. INIT establishes a session: the slice's
radio channel is claimed, tuning applied, and two streamer threads start.

Plain sample streams, one-shot synchronization: the rx streamer's first
write is a 12-byte timestamp header (magic ``PVTS`` then the u64 tick of
the first sample); everything after it, in both directions, is raw
subframe-sized I/Q with no framing. Both ends then keep a ledger that
advances by exactly one subframe of ticks per block, and the backend stamps
transmit blocks at the rx anchor plus the profile's transmit lead. The
ledgers agree forever because they are advanced by the same arithmetic from
the same anchor, which is the whole synchronization scheme: timestamps cost
wire bytes only once.

The rx streamer never lies about time. If the radio reports an overflow
gap, the gap is counted in the session metrics rather than silently
stretching the ledger, and a transmit the radio refuses as late counts as
an underrun.
"""

from __future__ import annotations

import struct
import threading
import time
from dataclasses import dataclass, replace

from .iqcore import (
    FdmPlan,
    IQBuffer,
    SliceConfig,
    bytes_per_subframe,
    samples_per_subframe,
    validate_fdm_plan,
)
from .radiodev import ChannelInUse, VirtualRadio
from .remoting import (
    CodecError,
    ControlMessage,
    OP_FIND,
    OP_INIT,
    OP_SET_RATE,
    OP_SET_RX_FREQ,
    OP_SET_RX_GAIN,
    OP_SET_TX_FREQ,
    OP_SET_TX_GAIN,
    OP_SHUTDOWN,
    RemoteRadioDevice,
    ST_ERR_BAD_CONFIG,
    ST_ERR_CHANNEL_IN_USE,
    ST_ERR_FDM_CONFLICT,
    ST_ERR_INTERNAL,
    ST_ERR_NOT_ESTABLISHED,
    ST_ERR_SLICE_ACTIVE,
    ST_ERR_UNKNOWN_OPCODE,
    decode_i32,
    decode_init_payload,
    decode_u64,
    encode_find_reply,
    error_reply,
    read_message,
    reply_to,
    send_message,
)
from .vchan import (
    ChannelClosed,
    DEFAULT_RING_CAPACITY,
    EndOfStream,
    PeerClosed,
    RendezvousStore,
    StreamChannel,
    UnknownPath,
    client_connect,
    server_create,
    server_teardown,
)

DEVICE_NAME = "pv-sdr"
CTRL_RING_CAPACITY = 16 * 1024

_TS_STRUCT = struct.Struct("<4sQ")
TIMESTAMP_MAGIC = b"PVTS"


@dataclass(frozen=True)
class TimestampHeader:
    """The only timestamp that ever crosses the stream channels."""

    ticks: int

    SIZE = _TS_STRUCT.size  # 12

    def encode(self) -> bytes:
        return _TS_STRUCT.pack(TIMESTAMP_MAGIC, self.ticks)

    @classmethod
    def decode(cls, raw: bytes) -> "TimestampHeader":
        magic, ticks = _TS_STRUCT.unpack(raw)
        if magic != TIMESTAMP_MAGIC:
            raise ValueError(f"bad stream header magic {magic!r}")
        return cls(ticks)


def ctrl_path(slice_id: int) -> str:
    return f"pv/{slice_id}/ctrl"


def rx_path(slice_id: int) -> str:
    return f"pv/{slice_id}/rx"


def tx_path(slice_id: int) -> str:
    return f"pv/{slice_id}/tx"


@dataclass
class StreamerState:
    """One direction's ledger: the tick of the next block's first sample."""

    timestamp: int
    iterations: int = 0
    bytes_moved: int = 0
    cpu_s: float = 0.0
    wall_first: float | None = None
    wall_last: float | None = None


class SliceSession:
    """An established slice: device binding plus two streamer threads."""

    def __init__(self, config: SliceConfig, device, rx_chan: StreamChannel,
                 tx_chan: StreamChannel, record_ledger: bool = False):
        self.config = config
        self.device = device
        self.rx_chan = rx_chan
        self.tx_chan = tx_chan
        self.spsf = samples_per_subframe(config.profile)
        self.bpsf = bytes_per_subframe(config.profile)
        self.rx_state: StreamerState | None = None
        self.tx_state: StreamerState | None = None
        self.tx_epoch_tick: int | None = None
        self.rx_anchored = threading.Event()
        self.stop_flag = threading.Event()
        self.underruns = 0
        self.overruns = 0
        self.gap_samples = 0
        self.record_ledger = record_ledger
        self.rx_ledger_log: list[int] = []
        self.tx_ledger_log: list[int] = []
        self._threads: list[threading.Thread] = []

    # -- metrics -----------------------------------------------------------

    def metrics(self) -> dict:
        rx, tx = self.rx_state, self.tx_state
        out = {
            "slice_id": self.config.slice_id,
            "prbs": self.config.profile.prbs,
            "phy_profile": self.config.phy_profile_name,
            "radio_channel": self.config.radio_channel,
            "rx_iterations": rx.iterations if rx else 0,
            "tx_iterations": tx.iterations if tx else 0,
            "rx_next_timestamp": rx.timestamp if rx else None,
            "tx_next_timestamp": tx.timestamp if tx else None,
            "rx_bytes": rx.bytes_moved if rx else 0,
            "tx_bytes": tx.bytes_moved if tx else 0,
            "underruns": self.underruns,
            "overruns": self.overruns,
            "gap_samples": self.gap_samples,
            "rx_cpu_s": rx.cpu_s if rx else 0.0,
            "tx_cpu_s": tx.cpu_s if tx else 0.0,
            "rx_ring_high_water": self.rx_chan.write_high_water,
            "tx_ring_high_water": self.tx_chan.read_high_water,
        }
        if rx and rx.wall_first is not None and rx.wall_last is not None \
                and rx.iterations > 1:
            span = rx.wall_last - rx.wall_first
            out["achieved_subframe_rate"] = (rx.iterations - 1) / span if span > 0 else None
        else:
            out["achieved_subframe_rate"] = None
        return out


def rx_streamer_step(session: SliceSession) -> None:
    """Move one subframe radio -> rx channel; first call anchors the ledgers."""
    buf, meta = session.device.recv(session.spsf)
    st = session.rx_state
    if st is None:
        st = session.rx_state = StreamerState(timestamp=meta.timestamp)
        session.tx_epoch_tick = meta.timestamp + session.config.effective_tx_lead()
        session.rx_chan.write(TimestampHeader(meta.timestamp).encode())
        session.rx_anchored.set()
    if meta.gap_before:
        session.overruns += 1
        session.gap_samples += meta.gap_before
    if session.record_ledger:
        session.rx_ledger_log.append(st.timestamp)
    session.rx_chan.write(buf.tobytes())
    now = time.monotonic()
    if st.wall_first is None:
        st.wall_first = now
    st.wall_last = now
    st.timestamp += session.spsf
    st.iterations += 1
    st.bytes_moved += session.bpsf


def tx_streamer_step(session: SliceSession) -> bool:
    """Move one subframe tx channel -> radio. Returns False while parked.

    TX stays parked until the rx side anchors the epoch; its first block is
    stamped at the rx anchor plus the transmit lead, and every later block
    advances by one subframe.
    """
    if session.tx_state is None:
        if not session.rx_anchored.wait(timeout=0.05):
            return False
        if session.tx_epoch_tick is None:  # anchor aborted
            return False
        session.tx_state = StreamerState(timestamp=session.tx_epoch_tick)
    st = session.tx_state
    raw = session.tx_chan.read(session.bpsf)
    if session.record_ledger:
        session.tx_ledger_log.append(st.timestamp)
    ok = session.device.send(IQBuffer.from_bytes(raw), st.timestamp)
    if not ok:
        session.underruns += 1
    now = time.monotonic()
    if st.wall_first is None:
        st.wall_first = now
    st.wall_last = now
    st.timestamp += session.spsf
    st.iterations += 1
    st.bytes_moved += session.bpsf
    return True


def _rx_loop(session: SliceSession) -> None:
    cpu0 = time.thread_time()
    try:
        while not session.stop_flag.is_set():
            rx_streamer_step(session)
            st = session.rx_state
            if st is not None and st.iterations % 256 == 0:
                st.cpu_s = time.thread_time() - cpu0
    except (PeerClosed, ChannelClosed, EndOfStream):
        pass
    finally:
        if session.rx_state is not None:
            session.rx_state.cpu_s = time.thread_time() - cpu0
        session.rx_anchored.set()  # never leave tx parked forever


def _tx_loop(session: SliceSession) -> None:
    cpu0 = time.thread_time()
    try:
        while not session.stop_flag.is_set():
            if not tx_streamer_step(session):
                continue
            st = session.tx_state
            if st is not None and st.iterations % 256 == 0:
                st.cpu_s = time.thread_time() - cpu0
    except (PeerClosed, ChannelClosed, EndOfStream):
        pass
    finally:
        if session.tx_state is not None:
            session.tx_state.cpu_s = time.thread_time() - cpu0


def start_session(session: SliceSession) -> None:
    rx = threading.Thread(target=_rx_loop, args=(session,),
                          name=f"rx-{session.config.slice_id}", daemon=True)
    tx = threading.Thread(target=_tx_loop, args=(session,),
                          name=f"tx-{session.config.slice_id}", daemon=True)
    session._threads = [rx, tx]
    rx.start()
    tx.start()


def stop_session(session: SliceSession) -> dict:
    """Stop streamers, free the radio channel, return final metrics. Idempotent."""
    session.stop_flag.set()
    session.rx_chan.close()
    session.tx_chan.close()
    for t in session._threads:
        t.join(timeout=10)
    session._threads = []
    session.device.close()
    return session.metrics()


# ---------------------------------------------------------------------------
# Backend
# ---------------------------------------------------------------------------

@dataclass
class _Slot:
    slice_id: int
    ctrl_chan: StreamChannel
    rx_chan: StreamChannel
    tx_chan: StreamChannel
    dispatcher: threading.Thread | None = None
    session: SliceSession | None = None
    last_metrics: dict | None = None
    protocol_errors: int = 0
    # Stopping a session closes its data channels for good; the slot can
    # then only be unprovisioned, never re-INITed.
    retired: bool = False


class Backend:
    """Owns the radio; provisions slice channels and dispatches their control."""

    def __init__(self, store: RendezvousStore, radio: VirtualRadio,
                 server_id: str = "dom0", data_ring_capacity: int = DEFAULT_RING_CAPACITY,
                 n_radio_channels: int = 2, record_ledger: bool = False):
        self.store = store
        self.radio = radio
        self.server_id = server_id
        self.data_ring_capacity = data_ring_capacity
        self.n_radio_channels = n_radio_channels
        self.record_ledger = record_ledger
        self._slots: dict[int, _Slot] = {}
        self._lock = threading.RLock()

    # -- provisioning --------------------------------------------------------

    def provision(self, slice_id: int) -> dict:
        """Publish ctrl/rx/tx channels for a slice and start its dispatcher."""
        with self._lock:
            if slice_id in self._slots:
                raise ValueError(f"slice {slice_id} already provisioned")
            rx = server_create(self.store, rx_path(slice_id),
                               read_cap=self.data_ring_capacity,
                               write_cap=self.data_ring_capacity,
                               server_id=self.server_id)
            tx = server_create(self.store, tx_path(slice_id),
                               read_cap=self.data_ring_capacity,
                               write_cap=self.data_ring_capacity,
                               server_id=self.server_id)
            ctrl = server_create(self.store, ctrl_path(slice_id),
                                 read_cap=CTRL_RING_CAPACITY,
                                 write_cap=CTRL_RING_CAPACITY,
                                 server_id=self.server_id)
            slot = _Slot(slice_id, ctrl, rx, tx)
            slot.dispatcher = threading.Thread(
                target=self._ctrl_loop, args=(slot,),
                name=f"ctrl-{slice_id}", daemon=True)
            self._slots[slice_id] = slot
            slot.dispatcher.start()
        return {
            "ctrl": ctrl_path(slice_id),
            "rx": rx_path(slice_id),
            "tx": tx_path(slice_id),
            "server_id": self.server_id,
        }

    def unprovision(self, slice_id: int) -> dict | None:
        """Stop any session, retire the channels, unpublish the paths."""
        with self._lock:
            slot = self._slots.pop(slice_id, None)
        if slot is None:
            return None
        if slot.session is not None:
            slot.last_metrics = stop_session(slot.session)
            slot.session = None
        slot.ctrl_chan.close()
        if slot.dispatcher is not None:
            slot.dispatcher.join(timeout=10)
        for chan in (slot.ctrl_chan, slot.rx_chan, slot.tx_chan):
            chan.release()
        for path in (ctrl_path(slice_id), rx_path(slice_id), tx_path(slice_id)):
            server_teardown(self.store, self.server_id, path)
        return slot.last_metrics

    def shutdown(self) -> None:
        for slice_id in list(self._slots):
            self.unprovision(slice_id)

    # -- introspection ------------------------------------------------------------

    def provisioned(self) -> list[int]:
        return sorted(self._slots)

    def active_configs(self) -> list[SliceConfig]:
        with self._lock:
            return [s.session.config for s in self._slots.values()
                    if s.session is not None]

    def session(self, slice_id: int) -> SliceSession | None:
        slot = self._slots.get(slice_id)
        return slot.session if slot else None

    def metrics(self) -> dict:
        out = {}
        for slice_id, slot in list(self._slots.items()):
            if slot.session is not None:
                out[slice_id] = dict(slot.session.metrics(), state="running")
            elif slot.last_metrics is not None:
                out[slice_id] = dict(slot.last_metrics, state="stopped")
            else:
                out[slice_id] = {"slice_id": slice_id, "state": "provisioned"}
        return out

    # -- control dispatch ------------------------------------------------------------

    def _ctrl_loop(self, slot: _Slot) -> None:
        while True:
            try:
                msg = read_message(slot.ctrl_chan)
            except (EndOfStream, ChannelClosed, PeerClosed):
                break
            except CodecError:
                # Framing cannot be trusted beyond this point.
                slot.protocol_errors += 1
                slot.ctrl_chan.close()
                break
            if msg.is_reply():
                slot.protocol_errors += 1
                continue
            reply = self._handle(slot, msg)
            try:
                send_message(slot.ctrl_chan, reply)
            except (PeerClosed, ChannelClosed):
                break

    def _handle(self, slot: _Slot, msg: ControlMessage) -> ControlMessage:
        try:
            if msg.opcode == OP_INIT:
                return self._handle_init(slot, msg)
            if msg.opcode == OP_FIND:
                return reply_to(msg, payload=encode_find_reply(
                    DEVICE_NAME, self.n_radio_channels))
            if msg.opcode == OP_SHUTDOWN:
                if slot.session is not None:
                    slot.last_metrics = stop_session(slot.session)
                    slot.session = None
                    slot.retired = True
                return reply_to(msg)
            if msg.opcode in (OP_SET_RX_FREQ, OP_SET_TX_FREQ, OP_SET_RX_GAIN,
                              OP_SET_TX_GAIN, OP_SET_RATE):
                return self._handle_set(slot, msg)
            return error_reply(msg, ST_ERR_UNKNOWN_OPCODE, f"opcode {msg.opcode}")
        except Exception as e:  # never let the dispatcher die mid-conversation
            return error_reply(msg, ST_ERR_INTERNAL, f"{type(e).__name__}: {e}")

    def _handle_init(self, slot: _Slot, msg: ControlMessage) -> ControlMessage:
        if slot.session is not None:
            return error_reply(msg, ST_ERR_SLICE_ACTIVE,
                               f"slice {slot.slice_id} already has a session")
        if slot.retired:
            return error_reply(msg, ST_ERR_SLICE_ACTIVE,
                               f"slice {slot.slice_id} was shut down; "
                               f"destroy and recreate it")
        try:
            cfg = decode_init_payload(msg.payload)
        except CodecError as e:
            return error_reply(msg, ST_ERR_BAD_CONFIG, str(e))
        if cfg.slice_id != slot.slice_id:
            return error_reply(
                msg, ST_ERR_BAD_CONFIG,
                f"INIT names slice {cfg.slice_id} on the channel of slice {slot.slice_id}")
        conflicts = validate_fdm_plan(
            FdmPlan.from_configs(self.active_configs() + [cfg]))
        if conflicts:
            return error_reply(msg, ST_ERR_FDM_CONFLICT, str(conflicts[0]))
        try:
            device = self.radio.open(cfg.radio_channel, cfg.profile.sample_rate)
        except ChannelInUse as e:
            return error_reply(msg, ST_ERR_CHANNEL_IN_USE, str(e))
        try:
            # Radio side: receive on the slice's uplink, transmit on its downlink.
            device.set_rx_freq(cfg.ul_freq_hz)
            device.set_tx_freq(cfg.dl_freq_hz)
            device.set_rx_gain(cfg.rx_gain_db)
            device.set_tx_gain(cfg.tx_gain_db)
            session = SliceSession(cfg, device, slot.rx_chan, slot.tx_chan,
                                   record_ledger=self.record_ledger)
            start_session(session)
        except Exception:
            device.close()
            raise
        slot.session = session
        return reply_to(msg)

    def _handle_set(self, slot: _Slot, msg: ControlMessage) -> ControlMessage:
        session = slot.session
        if session is None:
            return error_reply(msg, ST_ERR_NOT_ESTABLISHED, "no session on this slice")
        try:
            if msg.opcode in (OP_SET_RX_GAIN, OP_SET_TX_GAIN):
                value = decode_i32(msg.payload)
            else:
                value = decode_u64(msg.payload)
        except CodecError as e:
            return error_reply(msg, ST_ERR_BAD_CONFIG, str(e))

        cfg = session.config
        if msg.opcode == OP_SET_RX_FREQ:
            new_cfg = replace(cfg, ul_freq_hz=value)
        elif msg.opcode == OP_SET_TX_FREQ:
            new_cfg = replace(cfg, dl_freq_hz=value)
        else:
            new_cfg = cfg
        if new_cfg is not cfg:
            others = [c for c in self.active_configs() if c.slice_id != cfg.slice_id]
            conflicts = validate_fdm_plan(FdmPlan.from_configs(others + [new_cfg]))
            if conflicts:
                return error_reply(msg, ST_ERR_FDM_CONFLICT, str(conflicts[0]))

        if msg.opcode == OP_SET_RX_FREQ:
            session.device.set_rx_freq(value)
        elif msg.opcode == OP_SET_TX_FREQ:
            session.device.set_tx_freq(value)
        elif msg.opcode == OP_SET_RX_GAIN:
            session.device.set_rx_gain(value)
            new_cfg = replace(cfg, rx_gain_db=value)
        elif msg.opcode == OP_SET_TX_GAIN:
            session.device.set_tx_gain(value)
            new_cfg = replace(cfg, tx_gain_db=value)
        elif msg.opcode == OP_SET_RATE:
            if value != cfg.profile.sample_rate:
                return error_reply(
                    msg, ST_ERR_BAD_CONFIG,
                    f"rate {value} does not match the profile rate "
                    f"{cfg.profile.sample_rate}; re-INIT to change profile")
        session.config = new_cfg
        return reply_to(msg)


def connect_frontend(store: RendezvousStore, slice_id: int,
                     server_id: str = "dom0", timeout: float = 1.0) -> RemoteRadioDevice:
    """Connect the three slice channels and wrap them in the remoted device."""
    deadline = time.monotonic() + timeout
    chans = {}
    try:
        for name, path in (("ctrl", ctrl_path(slice_id)),
                           ("rx", rx_path(slice_id)),
                           ("tx", tx_path(slice_id))):
            while True:
                try:
                    chans[name] = client_connect(store, server_id, path)
                    break
                except UnknownPath:
                    if time.monotonic() >= deadline:
                        raise
                    time.sleep(0.01)
    except UnknownPath:
        for chan in chans.values():
            chan.release()
        raise
    return RemoteRadioDevice(chans["ctrl"], chans["rx"], chans["tx"])
