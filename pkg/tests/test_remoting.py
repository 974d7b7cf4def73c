"""Control message codec and request/reply behaviour."""

import struct
import threading

import pytest
from hypothesis import given, strategies as st

from pvran import remoting
from pvran.iqcore import BandwidthProfile, SliceConfig
from pvran.remoting import (
    CodecError,
    ControlMessage,
    ControlRequester,
    OP_FIND,
    OP_INIT,
    OP_SET_RX_FREQ,
    OP_SET_RX_GAIN,
    ProtocolError,
    REPLY_FLAG,
    RemoteOpError,
    ST_ERR_BAD_CONFIG,
    ST_OK,
    decode_find_reply,
    decode_i32,
    decode_init_payload,
    decode_u64,
    encode_find_reply,
    encode_i32,
    encode_init_payload,
    encode_u64,
    error_reply,
    read_message,
    reply_to,
    send_message,
)
from pvran.vchan import WaitTimeout, pair


def _cfg(**over):
    base = dict(
        slice_id=1,
        profile=BandwidthProfile.from_prbs(25),
        dl_freq_hz=595_000_000,
        ul_freq_hz=499_000_000,
        rx_gain_db=20,
        tx_gain_db=-3,
        radio_channel=0,
        phy_profile_name="phy-a",
    )
    base.update(over)
    return SliceConfig(**base)


# -- header codec ---------------------------------------------------------------

def test_header_is_twelve_bytes_le():
    msg = ControlMessage(OP_SET_RX_FREQ, correlation_id=7, payload=b"\x01\x02")
    raw = msg.encode()
    assert raw[:12] == struct.pack("<HHII", 3, 0, 7, 2)
    assert raw[12:] == b"\x01\x02"


def test_reply_opcode_sets_high_bit():
    req = ControlMessage(OP_INIT, correlation_id=5)
    rep = reply_to(req)
    assert rep.opcode == OP_INIT | REPLY_FLAG == 129
    assert rep.is_reply()
    assert rep.request_opcode() == OP_INIT
    assert rep.correlation_id == 5
    assert not req.is_reply()


def test_decode_rejects_short_header():
    with pytest.raises(CodecError):
        ControlMessage.decode(b"\x01\x00")


def test_decode_rejects_length_mismatch():
    raw = struct.pack("<HHII", 3, 0, 1, 10) + b"short"
    with pytest.raises(CodecError):
        ControlMessage.decode(raw)


def test_decode_rejects_oversized_declared_payload():
    raw = struct.pack("<HHII", 3, 0, 1, remoting.MAX_PAYLOAD + 1)
    with pytest.raises(CodecError):
        ControlMessage.decode(raw + b"x")


@given(
    st.integers(0, 0xFFFF),
    st.integers(0, 0xFFFFFFFF),
    st.integers(0, 0xFFFF),
    st.binary(max_size=200),
)
def test_message_roundtrip(opcode, corr, status, payload):
    msg = ControlMessage(opcode, corr, status, payload)
    assert ControlMessage.decode(msg.encode()) == msg


@given(st.binary(max_size=64))
def test_decode_never_crashes(raw):
    try:
        ControlMessage.decode(raw)
    except CodecError:
        pass


# -- payload codecs -----------------------------------------------------------------

def test_u64_i32_codecs():
    assert decode_u64(encode_u64(595_000_000)) == 595_000_000
    assert decode_i32(encode_i32(-20)) == -20
    with pytest.raises(CodecError):
        decode_u64(b"\x00" * 7)
    with pytest.raises(CodecError):
        decode_i32(b"\x00" * 8)


def test_init_payload_roundtrip():
    cfg = _cfg()
    assert decode_init_payload(encode_init_payload(cfg)) == cfg


def test_init_payload_roundtrip_with_lead_override():
    cfg = _cfg(tx_lead_ticks=12345)
    assert decode_init_payload(encode_init_payload(cfg)) == cfg


def test_init_payload_zero_lead_means_default():
    raw = encode_init_payload(_cfg())
    assert decode_init_payload(raw).tx_lead_ticks is None
    assert decode_init_payload(raw).effective_tx_lead() == 30640


def test_init_payload_rejects_bad_prbs():
    raw = bytearray(encode_init_payload(_cfg()))
    struct.pack_into("<H", raw, 4, 31)  # prbs field
    with pytest.raises(CodecError):
        decode_init_payload(bytes(raw))


def test_init_payload_rejects_truncation():
    raw = encode_init_payload(_cfg())
    with pytest.raises(CodecError):
        decode_init_payload(raw[:-1])


def test_find_reply_roundtrip():
    raw = encode_find_reply("pv-sdr", 2)
    assert decode_find_reply(raw) == ("pv-sdr", 2)


# -- framing over channels ---------------------------------------------------------

def test_send_read_roundtrip_over_pair():
    srv, cli = pair(read_cap=4096, write_cap=4096)
    try:
        msg = ControlMessage(OP_FIND, correlation_id=42, payload=b"abc")
        send_message(cli, msg)
        assert read_message(srv, timeout=1.0) == msg
    finally:
        srv.release()
        cli.release()


def test_read_message_timeout_preserves_framing():
    srv, cli = pair(read_cap=4096, write_cap=4096)
    try:
        # Half a header arrives, then a timeout, then the rest: the message
        # must still parse because the timeout consumed nothing.
        full = ControlMessage(OP_FIND, correlation_id=9, payload=b"xy").encode()
        cli.write(full[:6])
        with pytest.raises(WaitTimeout):
            read_message(srv, timeout=0.05)
        cli.write(full[6:])
        assert read_message(srv, timeout=1.0).correlation_id == 9
    finally:
        srv.release()
        cli.release()


def test_read_message_rejects_huge_declared_payload():
    srv, cli = pair(read_cap=4096, write_cap=4096)
    try:
        cli.write(struct.pack("<HHII", 3, 0, 1, remoting.MAX_PAYLOAD + 1))
        with pytest.raises(CodecError):
            read_message(srv, timeout=1.0)
    finally:
        srv.release()
        cli.release()


# -- requester ----------------------------------------------------------------------

def _serve_one(chan, transform):
    msg = read_message(chan, timeout=5.0)
    send_message(chan, transform(msg))


def test_requester_pairs_request_and_reply():
    srv, cli = pair(read_cap=4096, write_cap=4096)
    t = threading.Thread(target=_serve_one,
                         args=(srv, lambda m: reply_to(m, payload=b"pong")))
    t.start()
    try:
        req = ControlRequester(cli)
        reply = req.request(OP_FIND, timeout=2.0)
        assert reply.payload == b"pong"
        assert reply.status == ST_OK
        t.join(5)
    finally:
        srv.release()
        cli.release()


def test_requester_raises_remote_op_error_on_error_status():
    srv, cli = pair(read_cap=4096, write_cap=4096)
    t = threading.Thread(
        target=_serve_one,
        args=(srv, lambda m: error_reply(m, ST_ERR_BAD_CONFIG, "nope")))
    t.start()
    try:
        with pytest.raises(RemoteOpError) as err:
            ControlRequester(cli).request(OP_SET_RX_GAIN, encode_i32(1), timeout=2.0)
        assert err.value.status == ST_ERR_BAD_CONFIG
        assert "nope" in str(err.value)
        t.join(5)
    finally:
        srv.release()
        cli.release()


def test_requester_rejects_correlation_mismatch():
    srv, cli = pair(read_cap=4096, write_cap=4096)

    def bad_corr(m):
        return ControlMessage(m.opcode | REPLY_FLAG, m.correlation_id + 1, ST_OK)

    t = threading.Thread(target=_serve_one, args=(srv, bad_corr))
    t.start()
    try:
        with pytest.raises(ProtocolError):
            ControlRequester(cli).request(OP_FIND, timeout=2.0)
        t.join(5)
    finally:
        srv.release()
        cli.release()


def test_requester_times_out_without_server():
    srv, cli = pair(read_cap=4096, write_cap=4096)
    try:
        with pytest.raises(WaitTimeout):
            ControlRequester(cli).request(OP_FIND, timeout=0.05)
    finally:
        srv.release()
        cli.release()
