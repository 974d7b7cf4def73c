"""Control-plane message codec and the remoted radio device API.

The radio device API (tune, set gains, set rate, stream) is split at the
API boundary: the slice side holds a stub that encodes each call as a fixed
little-endian control message on its control channel, and the backend
decodes, acts on the real (simulated) hardware, and replies. Sample streams
never pass through here; they flow over the dedicated rx/tx byte channels.

Control wire format, 12-byte header then payload::

    u16 opcode     (reply = request opcode | 0x80)
    u16 status     (0 in requests)
    u32 correlation_id
    u32 payload_len

Requests carry fixed payloads: the slice description for INIT, a u64 for
frequency/rate sets, an i32 for gain sets, nothing for FIND and SHUTDOWN.
Replies echo the correlation id; error replies carry a UTF-8 detail string.
INIT establishes the session and is allowed 5 s; every later operation gets
1 s.

After INIT the stub behaves like a local device: ``recv`` consumes the
one-shot timestamp header the backend puts first on the rx stream, anchors
both sample ledgers (rx at the announced tick, tx at that tick plus the
profile's transmit lead), and from then on both sides advance by one
subframe per block with no timestamps on the wire at all.
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass

from .iqcore import (
    BandwidthProfile,
    IQBuffer,
    SliceConfig,
    UnsupportedProfileError,
    samples_per_subframe,
)
from .radiodev import RxMetadata
from .vchan import StreamChannel, WaitTimeout

# Opcodes.
OP_INIT = 1
OP_FIND = 2
OP_SET_RX_FREQ = 3
OP_SET_TX_FREQ = 4
OP_SET_RX_GAIN = 5
OP_SET_TX_GAIN = 6
OP_SET_RATE = 7
OP_SHUTDOWN = 8
REPLY_FLAG = 0x80

REQUEST_OPCODES = frozenset({
    OP_INIT, OP_FIND, OP_SET_RX_FREQ, OP_SET_TX_FREQ,
    OP_SET_RX_GAIN, OP_SET_TX_GAIN, OP_SET_RATE, OP_SHUTDOWN,
})

# Status codes carried in replies.
ST_OK = 0
ST_ERR_FDM_CONFLICT = 1
ST_ERR_CHANNEL_IN_USE = 2
ST_ERR_BAD_CONFIG = 3
ST_ERR_UNKNOWN_OPCODE = 4
ST_ERR_NOT_ESTABLISHED = 5
ST_ERR_SLICE_ACTIVE = 6
ST_ERR_INTERNAL = 7

STATUS_NAMES = {
    ST_OK: "ok",
    ST_ERR_FDM_CONFLICT: "fdm-conflict",
    ST_ERR_CHANNEL_IN_USE: "channel-in-use",
    ST_ERR_BAD_CONFIG: "bad-config",
    ST_ERR_UNKNOWN_OPCODE: "unknown-opcode",
    ST_ERR_NOT_ESTABLISHED: "not-established",
    ST_ERR_SLICE_ACTIVE: "slice-active",
    ST_ERR_INTERNAL: "internal-error",
}

INIT_TIMEOUT_S = 5.0
SET_TIMEOUT_S = 1.0
MAX_PAYLOAD = 1 << 20

_HEADER = struct.Struct("<HHII")
HEADER_SIZE = _HEADER.size  # 12

_U64 = struct.Struct("<Q")
_I32 = struct.Struct("<i")
_INIT_FIXED = struct.Struct("<IHHQQiiQH")
_FIND_REPLY_FIXED = struct.Struct("<HH")


class CodecError(Exception):
    """Structurally invalid control message."""


class ProtocolError(Exception):
    """Well-formed message at the wrong point in the conversation."""


class RemoteOpError(Exception):
    """Backend rejected an operation; carries the wire status code."""

    def __init__(self, status: int, detail: str = ""):
        name = STATUS_NAMES.get(status, str(status))
        super().__init__(f"{name}: {detail}" if detail else name)
        self.status = status
        self.detail = detail


@dataclass(frozen=True)
class ControlMessage:
    opcode: int
    correlation_id: int
    status: int = ST_OK
    payload: bytes = b""

    def is_reply(self) -> bool:
        return bool(self.opcode & REPLY_FLAG)

    def request_opcode(self) -> int:
        return self.opcode & ~REPLY_FLAG

    def encode(self) -> bytes:
        if not 0 <= self.opcode <= 0xFFFF:
            raise CodecError(f"opcode {self.opcode} out of range")
        if len(self.payload) > MAX_PAYLOAD:
            raise CodecError(f"payload of {len(self.payload)} bytes exceeds limit")
        return _HEADER.pack(self.opcode, self.status,
                            self.correlation_id & 0xFFFFFFFF,
                            len(self.payload)) + self.payload

    @classmethod
    def decode(cls, raw: bytes) -> "ControlMessage":
        if len(raw) < HEADER_SIZE:
            raise CodecError(f"short header: {len(raw)} bytes")
        opcode, status, corr, plen = _HEADER.unpack_from(raw)
        if plen > MAX_PAYLOAD:
            raise CodecError(f"declared payload {plen} exceeds limit")
        if len(raw) != HEADER_SIZE + plen:
            raise CodecError(f"payload length mismatch: declared {plen}, "
                             f"got {len(raw) - HEADER_SIZE}")
        return cls(opcode, corr, status, raw[HEADER_SIZE:])


def reply_to(request: ControlMessage, status: int = ST_OK,
             payload: bytes = b"") -> ControlMessage:
    return ControlMessage(request.opcode | REPLY_FLAG, request.correlation_id,
                          status, payload)


def error_reply(request: ControlMessage, status: int, detail: str) -> ControlMessage:
    return reply_to(request, status, detail.encode("utf-8"))


# -- payload codecs ---------------------------------------------------------

def encode_u64(v: int) -> bytes:
    return _U64.pack(v)


def decode_u64(raw: bytes) -> int:
    if len(raw) != 8:
        raise CodecError(f"expected 8-byte payload, got {len(raw)}")
    return _U64.unpack(raw)[0]


def encode_i32(v: int) -> bytes:
    return _I32.pack(v)


def decode_i32(raw: bytes) -> int:
    if len(raw) != 4:
        raise CodecError(f"expected 4-byte payload, got {len(raw)}")
    return _I32.unpack(raw)[0]


def encode_init_payload(cfg: SliceConfig) -> bytes:
    name = cfg.phy_profile_name.encode("utf-8")
    lead = 0 if cfg.tx_lead_ticks is None else cfg.tx_lead_ticks
    return _INIT_FIXED.pack(
        cfg.slice_id, cfg.profile.prbs, cfg.radio_channel,
        cfg.dl_freq_hz, cfg.ul_freq_hz, cfg.rx_gain_db, cfg.tx_gain_db,
        lead, len(name),
    ) + name


def decode_init_payload(raw: bytes) -> SliceConfig:
    if len(raw) < _INIT_FIXED.size:
        raise CodecError(f"INIT payload too short: {len(raw)} bytes")
    (slice_id, prbs, chan, dl, ul, rx_gain, tx_gain,
     lead, name_len) = _INIT_FIXED.unpack_from(raw)
    name_raw = raw[_INIT_FIXED.size:]
    if len(name_raw) != name_len:
        raise CodecError("INIT payload name length mismatch")
    try:
        profile = BandwidthProfile.from_prbs(prbs)
    except UnsupportedProfileError as e:
        raise CodecError(str(e)) from None
    try:
        name = name_raw.decode("utf-8")
    except UnicodeDecodeError:
        raise CodecError("INIT profile name is not UTF-8") from None
    return SliceConfig(
        slice_id=slice_id, profile=profile, dl_freq_hz=dl, ul_freq_hz=ul,
        rx_gain_db=rx_gain, tx_gain_db=tx_gain, radio_channel=chan,
        phy_profile_name=name, tx_lead_ticks=lead if lead else None,
    )


def encode_find_reply(device_name: str, n_channels: int) -> bytes:
    name = device_name.encode("utf-8")
    return _FIND_REPLY_FIXED.pack(n_channels, len(name)) + name


def decode_find_reply(raw: bytes) -> tuple[str, int]:
    if len(raw) < _FIND_REPLY_FIXED.size:
        raise CodecError("FIND reply too short")
    n_channels, name_len = _FIND_REPLY_FIXED.unpack_from(raw)
    name_raw = raw[_FIND_REPLY_FIXED.size:]
    if len(name_raw) != name_len:
        raise CodecError("FIND reply name length mismatch")
    return name_raw.decode("utf-8"), n_channels


# -- channel framing -----------------------------------------------------------

def send_message(chan: StreamChannel, msg: ControlMessage) -> None:
    chan.write(msg.encode())


def read_message(chan: StreamChannel, timeout: float | None = None) -> ControlMessage:
    """Read one framed message. Raises WaitTimeout without consuming on timeout.

    Availability is checked before each consuming read, so a slow or
    truncating peer can stall or end the stream but never desynchronize the
    framing for later messages.
    """
    if not chan.wait_readable(HEADER_SIZE, timeout):
        raise WaitTimeout("control header")
    hdr = chan.read(HEADER_SIZE)
    opcode, status, corr, plen = _HEADER.unpack(hdr)
    if plen > MAX_PAYLOAD:
        raise CodecError(f"declared payload {plen} exceeds limit")
    payload = b""
    if plen:
        if not chan.wait_readable(plen, timeout):
            raise WaitTimeout("control payload")
        payload = chan.read(plen)
    return ControlMessage(opcode, corr, status, payload)


class ControlRequester:
    """Client-side request/reply pairing over one control channel."""

    def __init__(self, chan: StreamChannel):
        self._chan = chan
        self._next_corr = 1
        self._lock = threading.Lock()

    def request(self, opcode: int, payload: bytes = b"",
                timeout: float = SET_TIMEOUT_S) -> ControlMessage:
        with self._lock:
            corr = self._next_corr
            self._next_corr = (self._next_corr + 1) & 0xFFFFFFFF or 1
            send_message(self._chan, ControlMessage(opcode, corr, ST_OK, payload))
            reply = read_message(self._chan, timeout)
        if not reply.is_reply() or reply.request_opcode() != opcode:
            raise ProtocolError(
                f"expected reply to opcode {opcode}, got opcode {reply.opcode}")
        if reply.correlation_id != corr:
            raise ProtocolError(
                f"correlation mismatch: sent {corr}, got {reply.correlation_id}")
        if reply.status != ST_OK:
            raise RemoteOpError(reply.status, reply.payload.decode("utf-8", "replace"))
        return reply


# -- the remoted device --------------------------------------------------------------

class LedgerMismatch(Exception):
    """A transmit was stamped off the agreed sample ledger."""


class RemoteRadioDevice:
    """Slice-side radio device: same surface as the direct device, remoted.

    Construction wires the three channels; :meth:`establish` performs INIT.
    The first ``recv`` consumes the in-band timestamp header and anchors the
    rx ledger at the announced tick and the tx ledger at that tick plus the
    transmit lead; afterwards both ledgers advance purely arithmetically.
    """

    def __init__(self, ctrl: StreamChannel, rx: StreamChannel, tx: StreamChannel):
        self._ctrl = ctrl
        self._rx = rx
        self._tx = tx
        self._req = ControlRequester(ctrl)
        self._config: SliceConfig | None = None
        self._rx_ledger: int | None = None
        self._tx_ledger: int | None = None
        self._established = False

    # -- control plane ----------------------------------------------------

    def establish(self, config: SliceConfig, timeout: float = INIT_TIMEOUT_S) -> None:
        self._req.request(OP_INIT, encode_init_payload(config), timeout=timeout)
        self._config = config
        self._established = True

    def find(self, timeout: float = SET_TIMEOUT_S) -> tuple[str, int]:
        reply = self._req.request(OP_FIND, timeout=timeout)
        return decode_find_reply(reply.payload)

    def set_rx_freq(self, hz: int) -> None:
        self._req.request(OP_SET_RX_FREQ, encode_u64(int(hz)))

    def set_tx_freq(self, hz: int) -> None:
        self._req.request(OP_SET_TX_FREQ, encode_u64(int(hz)))

    def set_rx_gain(self, db: int) -> None:
        self._req.request(OP_SET_RX_GAIN, encode_i32(int(db)))

    def set_tx_gain(self, db: int) -> None:
        self._req.request(OP_SET_TX_GAIN, encode_i32(int(db)))

    def set_rate(self, rate: int) -> None:
        self._req.request(OP_SET_RATE, encode_u64(int(rate)))

    def shutdown(self, timeout: float = SET_TIMEOUT_S, close: bool = True) -> None:
        """End the backend session. Keeps the channels open when close=False
        so the control conversation can continue (the channels are
        point-to-point and cannot be reconnected once closed)."""
        try:
            self._req.request(OP_SHUTDOWN, timeout=timeout)
        finally:
            if close:
                self.close()

    # -- data plane --------------------------------------------------------

    def _require_session(self) -> SliceConfig:
        if not self._established or self._config is None:
            raise ProtocolError("stream before INIT")
        return self._config

    def _anchor_ledgers(self) -> None:
        from .pvback import TimestampHeader  # backend owns the stream header format

        cfg = self._require_session()
        hdr = TimestampHeader.decode(self._rx.read(TimestampHeader.SIZE))
        self._rx_ledger = hdr.ticks
        self._tx_ledger = hdr.ticks + cfg.effective_tx_lead()

    def rx_timestamp(self) -> int | None:
        """Ledger tick of the next rx block, or None before the anchor."""
        return self._rx_ledger

    def tx_timestamp(self) -> int | None:
        """Ledger tick the next tx block must carry, or None before the anchor."""
        return self._tx_ledger

    def recv(self, n: int | None = None) -> tuple[IQBuffer, RxMetadata]:
        cfg = self._require_session()
        if n is None:
            n = samples_per_subframe(cfg.profile)
        if self._rx_ledger is None:
            self._anchor_ledgers()
        raw = self._rx.read(n * 4)
        ts = self._rx_ledger
        self._rx_ledger += n
        return IQBuffer.from_bytes(raw), RxMetadata(timestamp=ts)

    def send(self, buf: IQBuffer, timestamp: int | None = None) -> bool:
        self._require_session()
        if self._tx_ledger is None:
            # TX may not run ahead of the rx anchor; there is no timestamp
            # on the wire to say where these samples would land.
            raise ProtocolError("send before the rx ledger anchor")
        if timestamp is not None and timestamp != self._tx_ledger:
            raise LedgerMismatch(
                f"expected tick {self._tx_ledger}, caller stamped {timestamp}")
        self._tx.write(buf.tobytes())
        self._tx_ledger += len(buf)
        return True

    # -- lifecycle ------------------------------------------------------------

    def close(self) -> None:
        for chan in (self._ctrl, self._rx, self._tx):
            chan.release()
